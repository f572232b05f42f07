import numpy as np
import pytest

from groupmultiness import linalg, solver
from groupmultiness.data_model import GroupIndex, NumericalError
from groupmultiness.edge_family import EdgeFamily, inverse_link_clamped
from groupmultiness.sampler import AngleSpec, sample_components, sample_layers

GAUSS = EdgeFamily("gaussian", sigma2=1.0)
BERN = EdgeFamily("bernoulli_logit")


def make_data(n=40, d=2, sizes=(2, 2), seed=0, fam=GAUSS, angles=None, has_loops=True):
    gt = sample_components(n, d, sizes, angles or AngleSpec(), seed=seed)
    ds = sample_layers(gt, fam, has_loops=has_loops, seed=seed + 1)
    return gt, ds


class TestDefaultHyperparams:
    def test_rate_formulas(self):
        _, ds = make_data(n=100, sizes=(4, 4, 4, 4), d=1, seed=1)
        hp = solver.default_hyperparams(ds, c1=2.0, c2=3.0)
        assert np.isclose(hp.lambda1[0], 2.0 * np.sqrt(100 * 4))
        assert np.isclose(hp.alpha1[GroupIndex(1, 1)], 0.5)
        assert np.isclose(hp.lambda2, 3.0 * np.sqrt(100 * 16))
        assert np.isclose(hp.alpha2[0], np.sqrt(4 / 16))
        assert hp.eta1 == 1.0 and hp.eta2 == 1.0
        assert hp.trunc_rank == 10

    def test_logistic_step(self):
        _, ds = make_data(n=40, seed=2, fam=BERN)
        hp = solver.default_hyperparams(ds)
        assert hp.eta1 == 3.0

    def test_validation(self):
        _, ds = make_data(seed=3)
        with pytest.raises(ValueError):
            solver.default_hyperparams(ds, c1=-1.0)
        hp = solver.default_hyperparams(ds)
        with pytest.raises(ValueError):
            hp.validate((2, 2, 2))


class TestInitializers:
    def test_first_stage_gaussian_mean_and_residuals(self):
        rng = np.random.default_rng(4)
        layers = [0.5 * (X + X.T) for X in rng.standard_normal((3, 6, 6))]
        spq, rs = solver.first_stage_init(layers, GAUSS)
        mean = sum(layers) / 3
        assert np.allclose(spq, mean, atol=1e-12)
        for A, R in zip(layers, rs):
            assert np.allclose(R, A - mean, atol=1e-12)

    def test_first_stage_bernoulli_all_ones(self):
        layers = [np.ones((4, 4)), np.ones((4, 4))]
        spq, _ = solver.first_stage_init(layers, BERN)
        assert np.allclose(spq, 5.0)

    def test_first_stage_rank_truncation(self):
        rng = np.random.default_rng(5)
        layers = [0.5 * (X + X.T) for X in rng.standard_normal((2, 8, 8))]
        spq, rs = solver.first_stage_init(layers, GAUSS, target_ranks=(2, [1, 1]))
        assert np.linalg.matrix_rank(spq, tol=1e-9) <= 2
        assert all(np.linalg.matrix_rank(R, tol=1e-9) <= 1 for R in rs)

    def test_second_stage_residual_mode(self):
        rng = np.random.default_rng(6)
        groups = [
            [0.5 * (X + X.T) for X in rng.standard_normal((2, 5, 5))],
            [0.5 * (X + X.T) for X in rng.standard_normal((2, 5, 5))],
        ]
        r_hat = [[np.zeros((5, 5))] * 2, [np.zeros((5, 5))] * 2]
        S0, Q0 = solver.second_stage_init(groups, r_hat, GAUSS)
        centers = [sum(g) / 2 for g in groups]
        assert np.allclose(S0, sum(centers) / 2, atol=1e-12)
        assert np.allclose(Q0[0], centers[0] - S0, atol=1e-12)
        # group residuals average out exactly by construction
        assert np.allclose(sum(Q0), 0.0, atol=1e-10)

    def test_second_stage_group_totals_mode(self):
        groups = [[np.eye(4)], [np.eye(4)]]
        r_hat = [[np.zeros((4, 4))], [np.zeros((4, 4))]]
        totals = [2.0 * np.eye(4), 4.0 * np.eye(4)]
        S0, Q0 = solver.second_stage_init(
            groups, r_hat, GAUSS, mode="group_totals", group_totals=totals
        )
        assert np.allclose(S0, 3.0 * np.eye(4))
        assert np.allclose(Q0[0], -1.0 * np.eye(4))


class TestClosedFormEquivalence:
    def test_first_stage_updates_match_remark_formulas(self):
        # gaussian loss with loops and unit step: each proximal update must
        # equal the subtract-and-threshold closed form exactly
        _, ds = make_data(n=20, d=1, sizes=(3,), seed=7)
        hp = solver.default_hyperparams(ds, c1=0.5, c2=0.5, max_iter=5, patience=10_000)
        res = solver.fit(ds, hp, refit=False, record_iterates=True)
        layers = ds.group_layers(1)
        lam = hp.lambda1[0]
        alphas = [hp.alpha1[key] for key in ds.group_keys(1)]
        for snap in res.iterates["stage1_group_1"]:
            for l, A in enumerate(layers):
                want = linalg.soft_threshold(A - snap["spq_prev"], lam * alphas[l])
                err = np.linalg.norm(snap["rs_new"][l] - want)
                assert err <= 1e-12 * (1 + np.linalg.norm(want))
            mean_resid = sum(A - R for A, R in zip(layers, snap["rs_new"])) / 3
            want = linalg.soft_threshold(mean_resid, lam / 3)
            err = np.linalg.norm(snap["spq_new"] - want)
            assert err <= 1e-12 * (1 + np.linalg.norm(want))

    def test_second_stage_updates_match_closed_forms(self):
        _, ds = make_data(n=20, d=1, sizes=(2, 2), seed=8)
        hp = solver.default_hyperparams(ds, c1=0.5, c2=0.5, max_iter=5, patience=10_000)
        res = solver.fit(ds, hp, refit=False, record_iterates=True)
        r_hat = [
            [res.decomposition.R[key] for key in ds.group_keys(k)]
            for k in (1, 2)
        ]
        groups = [ds.group_layers(1), ds.group_layers(2)]
        lam2, alpha2 = hp.lambda2, hp.alpha2
        for snap in res.iterates["stage2"]:
            for k in range(2):
                resid = sum(
                    A - R for A, R in zip(groups[k], r_hat[k])
                ) / 2 - snap["S_prev"]
                want = linalg.soft_threshold(resid, lam2 * alpha2[k] / 2)
                err = np.linalg.norm(snap["Q_new"][k] - want)
                assert err <= 1e-12 * (1 + np.linalg.norm(want))
            resid = sum(
                A - R - snap["Q_new"][k]
                for k in range(2)
                for A, R in zip(groups[k], r_hat[k])
            ) / 4
            want = linalg.soft_threshold(resid, lam2 / 4)
            err = np.linalg.norm(snap["S_new"] - want)
            assert err <= 1e-12 * (1 + np.linalg.norm(want))


class TestConvergence:
    @pytest.mark.parametrize("fam", [GAUSS, BERN])
    def test_penalized_objective_monotone(self, fam):
        _, ds = make_data(n=30, seed=9, fam=fam)
        hp = solver.default_hyperparams(ds, c1=0.5, c2=0.5)
        res = solver.fit(ds, hp, refit=False)
        for trace in res.traces.values():
            pen = np.array(trace.penalized)
            slack = 1e-8 * np.maximum(1.0, np.abs(pen[:-1]))
            assert np.all(pen[1:] <= pen[:-1] + slack)

    def test_stall_rule_stops_before_max_iter(self):
        _, ds = make_data(n=25, seed=10)
        hp = solver.default_hyperparams(ds, c1=1.0, c2=1.0)
        res = solver.fit(ds, hp, refit=False)
        for trace in res.traces.values():
            assert trace.stop_reason == "stalled"
            assert len(trace.loss) < hp.max_iter

    def test_group_total_fixed_point(self):
        # at convergence the group total equals the thresholded mean residual
        _, ds = make_data(n=30, d=2, sizes=(3, 3), seed=11)
        hp = solver.default_hyperparams(ds, c1=1.0, c2=1.0)
        res = solver.fit(ds, hp, refit=False)
        for k in (1, 2):
            layers = ds.group_layers(k)
            r_hat = [res.decomposition.R[key] for key in ds.group_keys(k)]
            spq = res.group_totals[k]
            resid = sum(A - R for A, R in zip(layers, r_hat)) / len(layers)
            want = linalg.soft_threshold(resid, hp.lambda1[k - 1] / len(layers))
            rel = np.linalg.norm(spq - want) / (1 + np.linalg.norm(spq))
            assert rel <= 1e-4

    def test_divergent_step_raises(self):
        _, ds = make_data(n=20, seed=12)
        hp = solver.default_hyperparams(ds, eta1=3.0)  # gaussian needs eta < 2
        with pytest.raises(NumericalError, match="eta"):
            solver.fit(ds, hp, refit=False)


class TestRecovery:
    def test_oracle_ranks_noiseless_exact(self):
        gt, _ = make_data(n=50, d=2, sizes=(3, 3), seed=13)
        noiseless = sample_layers(gt, EdgeFamily("gaussian", sigma2=1e-30), seed=14)
        ranks = gt.ranks()
        hp = solver.default_hyperparams(noiseless, c1=1.0, c2=1.0)
        res = solver.fit(noiseless, hp, oracle_ranks=ranks)
        for key in gt.keys():
            err = np.linalg.norm(res.decomposition.theta(key) - gt.theta(key))
            assert err / np.linalg.norm(gt.theta(key)) <= 1e-6

    def test_soft_path_noiseless_close(self):
        gt, _ = make_data(n=40, d=2, sizes=(3, 3), seed=15)
        noiseless = sample_layers(gt, EdgeFamily("gaussian", sigma2=1e-30), seed=16)
        hp = solver.default_hyperparams(noiseless, c1=1e-3, c2=1e-3)
        res = solver.fit(noiseless, hp, refit=False)
        for key in gt.keys():
            err = np.linalg.norm(res.decomposition.theta(key) - gt.theta(key))
            assert err / np.linalg.norm(gt.theta(key)) <= 1e-3

    def test_huge_penalty_zeroes_everything(self):
        _, ds = make_data(n=25, seed=17)
        hp = solver.default_hyperparams(ds, c1=1e6, c2=1e6)
        res = solver.fit(ds, hp, refit=False)
        assert res.decomposition.sig_S.d == 0
        assert not np.any(res.decomposition.S)
        assert all(sig.d == 0 for sig in res.decomposition.sig_Q)


class TestMaskedFit:
    def test_masked_entries_cannot_influence_fit(self):
        _, ds = make_data(n=20, d=1, sizes=(2, 2), seed=18)
        rng = np.random.default_rng(19)
        masks = {}
        for key in ds.keys():
            upper = np.triu(rng.random((20, 20)) < 0.8)
            masks[key] = upper | upper.T
        hp = solver.default_hyperparams(ds, c1=0.5, c2=0.5)
        res = solver.fit(ds, hp, masks=masks)

        zeroed = {}
        for key in ds.keys():
            A = np.array(ds.layers[key])
            A[~masks[key]] = 0.0
            zeroed[key] = A
        ds_zeroed = type(ds)(
            n=ds.n,
            group_sizes=ds.group_sizes,
            layers=zeroed,
            edge_family=ds.edge_family,
            has_loops=ds.has_loops,
        )
        res2 = solver.fit(ds_zeroed, hp, masks=masks)
        assert np.array_equal(res.decomposition.S, res2.decomposition.S)
        for key in ds.keys():
            assert np.array_equal(res.decomposition.R[key], res2.decomposition.R[key])


class TestExtraction:
    def test_positions_reconstruct_components(self):
        _, ds = make_data(n=30, d=2, sizes=(2, 2), seed=20)
        hp = solver.default_hyperparams(ds, c1=1.0, c2=1.0)
        res = solver.fit(ds, hp, extract=True)
        pos = res.positions
        sig = pos.sig_V
        Ipq = np.diag([1.0] * sig.p + [-1.0] * sig.q)
        assert np.allclose(
            pos.V @ Ipq @ pos.V.T, res.decomposition.S, atol=1e-6
        )

    def test_single_layer_group_warns(self):
        _, ds = make_data(n=20, d=1, sizes=(1, 2), seed=21)
        hp = solver.default_hyperparams(ds, c1=1.0, c2=1.0)
        with pytest.warns(UserWarning, match="single layer"):
            solver.fit(ds, hp, refit=False)
