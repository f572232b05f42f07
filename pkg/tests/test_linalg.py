import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from groupmultiness import linalg
from groupmultiness.data_model import Signature


def sym(rng, n, scale=1.0):
    X = rng.standard_normal((n, n)) * scale
    return 0.5 * (X + X.T)


def oracle_prox_nuclear(Z, s):
    """Brute-force minimizer of 0.5*||Y-Z||_F^2 + s*||Y||_* over symmetric Y.

    The minimizer shares Z's eigenvectors, so each eigenvalue solves an
    independent scalar problem which is minimized numerically here
    (never via the shrinkage formula under test).
    """
    vals, vecs = np.linalg.eigh(Z)
    out = np.zeros_like(vals)
    for i, g in enumerate(vals):
        bound = abs(g) + 2.0 * s + 1.0
        res = minimize_scalar(
            lambda y: 0.5 * (y - g) ** 2 + s * abs(y),
            bounds=(-bound, bound),
            method="bounded",
            options={"xatol": 1e-12},
        )
        out[i] = res.x
    return (vecs * out) @ vecs.T


class TestSoftThreshold:
    def test_matches_variational_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            Z = sym(rng, 20, scale=rng.uniform(0.5, 3.0))
            s = rng.uniform(0.0, 3.0)
            got = linalg.soft_threshold(Z, s)
            want = oracle_prox_nuclear(Z, s)
            assert np.linalg.norm(got - want) <= 1e-6

    def test_matches_convex_solver(self):
        cvxpy = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(5)
        for _ in range(3):
            Z = sym(rng, 6)
            s = rng.uniform(0.3, 1.5)
            Y = cvxpy.Variable((6, 6), symmetric=True)
            prob = cvxpy.Problem(
                cvxpy.Minimize(
                    0.5 * cvxpy.sum_squares(Y - Z) + s * cvxpy.normNuc(Y)
                )
            )
            prob.solve(solver=cvxpy.SCS, eps=1e-9)
            assert np.linalg.norm(linalg.soft_threshold(Z, s) - Y.value) <= 1e-5

    def test_identity_example(self):
        got = linalg.soft_threshold(np.eye(3), 0.4)
        assert np.allclose(got, 0.6 * np.eye(3), atol=1e-12)

    def test_mixed_signs_example(self):
        got = linalg.soft_threshold(np.diag([3.0, -1.0]), 1.5)
        assert np.allclose(got, np.diag([1.5, 0.0]), atol=1e-12)

    def test_zero_threshold_returns_input(self):
        rng = np.random.default_rng(2)
        Z = sym(rng, 12)
        assert np.allclose(linalg.soft_threshold(Z, 0.0), Z, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 4.0))
    def test_nonexpansive(self, seed, s):
        rng = np.random.default_rng(seed)
        X = sym(rng, 8)
        Y = sym(rng, 8)
        dist = np.linalg.norm(
            linalg.soft_threshold(X, s) - linalg.soft_threshold(Y, s)
        )
        assert dist <= np.linalg.norm(X - Y) + 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 4.0))
    def test_nuclear_norm_after_shrink(self, seed, s):
        rng = np.random.default_rng(seed)
        Z = sym(rng, 7)
        vals = np.linalg.eigvalsh(Z)
        want = np.maximum(np.abs(vals) - s, 0.0).sum()
        got = np.abs(np.linalg.eigvalsh(linalg.soft_threshold(Z, s))).sum()
        assert np.isclose(got, want, atol=1e-8)

    def test_preserves_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            B = rng.standard_normal((10, 4))
            Z = B @ B.T
            out = linalg.soft_threshold(Z, rng.uniform(0, 2))
            assert np.linalg.eigvalsh(out).min() >= -1e-10

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            linalg.soft_threshold(np.eye(2), -0.1)

    def test_truncated_path_matches_full(self):
        rng = np.random.default_rng(7)
        n = 60
        Z = sym(rng, n)
        for s in (0.5, 2.0, 8.0):
            full = linalg.soft_threshold(Z, s)
            trunc = linalg.soft_threshold(Z, s, trunc_rank=8)
            assert np.linalg.norm(full - trunc) <= 1e-8

    def test_adaptive_growth_catches_large_tail(self):
        # rank 10 with all eigenvalues equal and above the threshold: the
        # starting rank 3 must grow until every survivor is captured
        rng = np.random.default_rng(9)
        B = np.linalg.qr(rng.standard_normal((40, 10)))[0]
        Z = 50.0 * (B @ B.T)
        got = linalg.soft_threshold(Z, 1.0, trunc_rank=3)
        want = linalg.soft_threshold(Z, 1.0)
        assert np.linalg.norm(got - want) <= 1e-8


class TestHardThreshold:
    def test_tail_energy_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            Z = sym(rng, 15)
            d = int(rng.integers(0, 16))
            vals = np.sort(np.abs(np.linalg.eigvalsh(Z)))
            tail = np.sqrt((vals[: 15 - d] ** 2).sum())
            err = np.linalg.norm(linalg.hard_threshold(Z, d) - Z)
            assert np.isclose(err, tail, atol=1e-9)

    def test_beats_random_rank_d_candidates(self):
        rng = np.random.default_rng(22)
        Z = sym(rng, 12)
        d = 3
        best = np.linalg.norm(linalg.hard_threshold(Z, d) - Z)
        for _ in range(200):
            B = rng.standard_normal((12, d))
            C = sym(rng, d, 2.0)
            cand = B @ C @ B.T
            assert np.linalg.norm(cand - Z) >= best - 1e-9

    def test_full_rank_returns_input(self):
        rng = np.random.default_rng(23)
        Z = sym(rng, 9)
        assert np.linalg.norm(linalg.hard_threshold(Z, 9) - Z) <= 1e-9

    def test_zero_rank(self):
        assert not np.any(linalg.hard_threshold(np.eye(4), 0))

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError):
            linalg.hard_threshold(np.eye(4), 5)


class TestEighTrunc:
    def test_sign_tie_orders_positive_first(self):
        Z = np.diag([3.0, -3.0, 1.0])
        pairs = linalg.eigh_trunc(Z, 3)
        assert np.allclose(pairs.values, [3.0, -3.0, 1.0])

    def test_iterative_agrees_with_full(self):
        rng = np.random.default_rng(31)
        Z = sym(rng, 50)
        full = linalg.eigh_trunc(Z, 50)
        part = linalg.eigh_trunc(Z, 7)
        assert np.allclose(part.values, full.values[:7], atol=1e-8)
        # same leading invariant subspace
        P_full = full.vectors[:, :7] @ full.vectors[:, :7].T
        P_part = part.vectors @ part.vectors.T
        assert np.linalg.norm(P_full - P_part) <= 1e-7

    def test_zero_matrix(self):
        pairs = linalg.eigh_trunc(np.zeros((3, 3)), 1)
        assert pairs.values[0] == 0.0
        assert np.isclose(np.linalg.norm(pairs.vectors[:, 0]), 1.0)

    def test_boundary_degeneracy_diagnostic(self):
        Z = np.diag([2.0, 1.0, 1.0, 0.5])
        pairs = linalg.eigh_trunc(Z, 2)
        assert any("degenerate" in d for d in pairs.diagnostics)

    def test_bad_rank(self):
        with pytest.raises(ValueError):
            linalg.eigh_trunc(np.eye(3), 0)
        with pytest.raises(ValueError):
            linalg.eigh_trunc(np.eye(3), 4)


class TestAseExtract:
    def test_identity_gram(self):
        pos, sig = linalg.ase_extract(np.eye(3), 3)
        assert sig == Signature(3, 0)
        assert np.allclose(pos.T @ pos, np.eye(3), atol=1e-12)

    def test_column_order_and_signature(self):
        G = np.diag([5.0, -7.0, 2.0, -1.0])
        pos, sig = linalg.ase_extract(G, 3)
        assert sig == Signature(2, 1)
        # positive dims first by eigenvalue, then negative by magnitude
        mags = np.linalg.norm(pos, axis=0) ** 2
        assert np.allclose(mags, [5.0, 2.0, 7.0], atol=1e-10)

    def test_reconstructs_with_signature(self):
        rng = np.random.default_rng(41)
        X = rng.standard_normal((10, 3))
        G = X @ np.diag([1.0, 1.0, -1.0]) @ X.T
        pos, sig = linalg.ase_extract(G, 3)
        Ipq = np.diag([1.0] * sig.p + [-1.0] * sig.q)
        assert np.allclose(pos @ Ipq @ pos.T, G, atol=1e-8)

    def test_rank_deficient_warns(self):
        G = np.zeros((4, 4))
        G[0, 0] = 2.0
        with pytest.warns(UserWarning):
            pos, sig = linalg.ase_extract(G, 3)
        assert pos.shape == (4, 1)
        assert sig == Signature(1, 0)


class TestSubspaceCosine:
    def test_identical_and_orthogonal(self):
        A = np.diag([2.0, 1.0, 0.0, 0.0])
        B = np.diag([0.0, 0.0, 3.0, 1.0])
        assert np.isclose(linalg.subspace_cosine(A, A, 2, 2), 1.0)
        assert np.isclose(linalg.subspace_cosine(A, B, 2, 2), 0.0, atol=1e-12)

    def test_known_angle(self):
        c = 0.3
        u = np.array([1.0, 0.0, 0.0])
        v = np.array([c, np.sqrt(1 - c * c), 0.0])
        Z1 = np.outer(u, u)
        Z2 = np.outer(v, v)
        assert np.isclose(linalg.subspace_cosine(Z1, Z2, 1, 1), c, atol=1e-12)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            linalg.subspace_cosine(np.zeros((3, 3)), np.eye(3), 1, 1)


class TestProcrustes:
    def test_recovers_planted_rotation(self):
        rng = np.random.default_rng(51)
        X = rng.standard_normal((20, 4))
        O, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        got = linalg.procrustes_rotate(X, X @ O)
        assert np.allclose(got, O, atol=1e-10)

    def test_never_beaten_by_random_rotations(self):
        rng = np.random.default_rng(52)
        X = rng.standard_normal((15, 3))
        Y = rng.standard_normal((15, 3))
        O = linalg.procrustes_rotate(X, Y)
        best = np.linalg.norm(X @ O - Y)
        for _ in range(300):
            Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            assert np.linalg.norm(X @ Q - Y) >= best - 1e-9


def test_detect_signature():
    Z = np.diag([2.0, 1e-8, -3.0])
    assert linalg.detect_signature(Z) == Signature(1, 1)
