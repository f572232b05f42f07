import numpy as np
import pytest

from groupmultiness import linalg
from groupmultiness.data_model import GroupIndex
from groupmultiness.edge_family import EdgeFamily
from groupmultiness.sampler import (
    AngleSpec,
    sample_components,
    sample_layers,
    similarity_profile,
    validate_identifiability,
)

GAUSS = EdgeFamily("gaussian", sigma2=1.0)


class TestAngleSpec:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            AngleSpec(s_vw=1.0)
        with pytest.raises(ValueError):
            AngleSpec(s_uu=-0.1)

    def test_omega_layout(self):
        spec = AngleSpec(s_vw=0.1, s_vu=0.2, s_ww=0.3, s_wu=0.4, s_uu=0.5)
        omega = spec.omega(K=2, M=3)
        assert omega.shape == (6, 6)
        assert np.allclose(omega, omega.T)
        assert np.all(np.diagonal(omega) == 1.0)
        assert omega[0, 1] == 0.1 and omega[0, 3] == 0.2
        assert omega[1, 2] == 0.3 and omega[1, 3] == 0.4 and omega[3, 4] == 0.5


class TestSampleComponents:
    def test_gram_is_exact(self):
        gt = sample_components(
            60, 2, (2, 3), AngleSpec(s_vw=0.3, s_vu=0.1, s_wu=0.2, s_uu=0.15), seed=4
        )
        pos = gt.positions
        cols = [pos.V] + pos.W + [pos.U[key] for key in gt.keys()]
        L = np.concatenate(cols, axis=1)
        target = np.kron(gt.angles.omega(2, 5), np.eye(2))
        assert np.abs(L.T @ L / 60 - target).max() <= 1e-8

    def test_planted_cosine_recovered(self):
        gt = sample_components(50, 2, (2, 2), AngleSpec(s_vw=0.3), seed=0)
        got = linalg.subspace_cosine(gt.grams.S, gt.grams.Q[0], 2, 2)
        assert np.isclose(got, 0.3, atol=1e-6)

    def test_orthogonal_case(self):
        gt = sample_components(40, 2, (2, 2), AngleSpec(), seed=1)
        got = linalg.subspace_cosine(gt.grams.S, gt.grams.Q[1], 2, 2)
        assert abs(got) <= 1e-6

    def test_dimension_budget_enforced(self):
        with pytest.raises(ValueError, match="<= n"):
            sample_components(10, 2, (3, 3), seed=0)

    def test_not_positive_definite_names_block(self):
        spec = AngleSpec(s_vw=0.9, s_vu=0.9, s_wu=0.0, s_uu=0.0)
        with pytest.raises(ValueError, match="positive definite"):
            sample_components(100, 1, (2, 2), spec, seed=0)

    def test_seed_determinism(self):
        a = sample_components(30, 1, (2, 2), AngleSpec(s_vw=0.2), seed=9)
        b = sample_components(30, 1, (2, 2), AngleSpec(s_vw=0.2), seed=9)
        assert np.array_equal(a.grams.S, b.grams.S)
        c = sample_components(30, 1, (2, 2), AngleSpec(s_vw=0.2), seed=10)
        assert not np.array_equal(a.grams.S, c.grams.S)

    def test_spectral_scale_grows_like_n(self):
        for n in (50, 150):
            gt = sample_components(n, 3, (2, 2), seed=3)
            top = np.linalg.eigvalsh(gt.grams.S).max()
            assert 0.3 * n <= top <= 3.0 * n

    def test_random_specs_reproduce_all_six_similarities(self):
        rng = np.random.default_rng(77)
        checked = 0
        while checked < 20:
            K = int(rng.integers(2, 4))
            sizes = tuple(int(rng.integers(2, 4)) for _ in range(K))
            d = int(rng.integers(1, 3))
            spec = AngleSpec(
                s_vw=rng.uniform(0, 0.35),
                s_vu=rng.uniform(0, 0.35),
                s_ww=rng.uniform(0, 0.35),
                s_wu=rng.uniform(0, 0.35),
                s_uu=rng.uniform(0, 0.35),
            )
            M = sum(sizes)
            omega = spec.omega(K, M)
            if np.linalg.eigvalsh(omega).min() <= 1e-6:
                continue
            n = d * (1 + K + M) + 25
            gt = sample_components(n, d, sizes, spec, seed=int(rng.integers(1 << 30)))
            prof = similarity_profile(gt)
            assert np.isclose(prof.s_vw, spec.s_vw, atol=1e-6)
            assert np.isclose(prof.s_vu, spec.s_vu, atol=1e-6)
            assert np.isclose(prof.s_wu, spec.s_wu, atol=1e-6)
            assert np.isclose(prof.s_uu_within, spec.s_uu, atol=1e-6)
            assert np.isclose(prof.s_uu, spec.s_uu, atol=1e-6)
            assert np.isclose(prof.s_ww, spec.s_ww, atol=1e-6)
            checked += 1


class TestSampleLayers:
    def test_gaussian_symmetric_and_centered(self):
        gt = sample_components(40, 2, (2, 2), seed=5)
        ds = sample_layers(gt, GAUSS, seed=6)
        key = GroupIndex(1, 1)
        A = ds.layers[key]
        assert np.abs(A - A.T).max() == 0.0
        resid = A - gt.theta(key)
        assert abs(resid.mean()) <= 5 / 40  # iid N(0,1) entries average out

    def test_gaussian_noise_variance(self):
        gt = sample_components(80, 1, (2, 2), seed=7)
        fam = EdgeFamily("gaussian", sigma2=4.0)
        ds = sample_layers(gt, fam, seed=8)
        resid = ds.layers[GroupIndex(1, 1)] - gt.theta(GroupIndex(1, 1))
        iu = np.triu_indices(80, 1)
        assert 3.0 <= resid[iu].var() <= 5.0

    def test_bernoulli_binary_and_calibrated(self):
        gt = sample_components(60, 2, (2, 2), seed=9)
        fam = EdgeFamily("bernoulli_logit")
        ds = sample_layers(gt, fam, seed=10)
        A = ds.layers[GroupIndex(2, 1)]
        assert set(np.unique(A)) <= {0.0, 1.0}
        from scipy.special import expit

        probs = expit(gt.theta(GroupIndex(2, 1)))
        iu = np.triu_indices(60, 1)
        assert abs(A[iu].mean() - probs[iu].mean()) <= 0.05

    def test_loop_free_zero_diagonal(self):
        gt = sample_components(30, 1, (2, 2), seed=11)
        ds = sample_layers(gt, GAUSS, has_loops=False, seed=12)
        for _, A in ds.iter_layers():
            assert not np.any(np.diagonal(A))

    def test_seed_determinism(self):
        gt = sample_components(30, 1, (2, 2), seed=13)
        a = sample_layers(gt, GAUSS, seed=14)
        b = sample_layers(gt, GAUSS, seed=14)
        for key in gt.keys():
            assert np.array_equal(a.layers[key], b.layers[key])


class TestIdentifiability:
    def test_generic_draw_identifiable(self):
        gt = sample_components(60, 2, (2, 2), AngleSpec(s_vw=0.2), seed=15)
        report = validate_identifiability(gt)
        assert report.identifiable

    def test_single_group_not_checkable(self):
        gt = sample_components(40, 2, (3,), seed=16)
        report = validate_identifiability(gt)
        assert report.cross_group_pairs_full_rank is None
        assert not report.identifiable
        assert any("two groups" in msg for msg in report.details)

    def test_single_layer_group_not_checkable(self):
        gt = sample_components(40, 2, (1, 2), seed=17)
        report = validate_identifiability(gt)
        assert report.within_group_pairs_full_rank is None

    def test_detects_duplicated_subspace(self):
        gt = sample_components(40, 2, (2, 2), seed=18)
        # overwrite one individual block with the shared block
        gt.positions.U[GroupIndex(1, 1)] = gt.positions.V.copy()
        report = validate_identifiability(gt)
        assert report.layer_spans_full_rank is False


class TestSimilarityProfile:
    def test_zero_component_reported_undefined(self):
        gt = sample_components(40, 2, (2, 2), seed=19)
        dec = gt.grams
        dec.S = np.zeros_like(dec.S)
        from groupmultiness.data_model import Signature

        dec.sig_S = Signature(0, 0)
        prof = similarity_profile(dec)
        assert np.isnan(prof.s_vw)
        assert any("zero component" in note for note in prof.notes)
