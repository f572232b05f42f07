import json

import numpy as np
import pytest

from groupmultiness.data_model import (
    DatasetError,
    GroupIndex,
    LatentDecomposition,
    MultiplexDataset,
    Signature,
    layer_keys,
    load_dataset,
    load_decomposition,
    save_dataset,
    save_decomposition,
)
from groupmultiness.edge_family import EdgeFamily

GAUSS = EdgeFamily("gaussian", sigma2=1.0)


def toy_dataset(rng, n=5, group_sizes=(2, 2), has_loops=True, family=GAUSS):
    layers = {}
    for key in layer_keys(group_sizes):
        X = rng.standard_normal((n, n))
        A = 0.5 * (X + X.T)
        if family.kind == "bernoulli_logit":
            A = (A > 0).astype(float)
            A = np.triu(A) + np.triu(A, 1).T
        if not has_loops:
            np.fill_diagonal(A, 0.0)
        layers[key] = A
    ds = MultiplexDataset(
        n=n,
        group_sizes=group_sizes,
        layers=layers,
        edge_family=family,
        has_loops=has_loops,
    )
    ds.validate()
    return ds


class TestRoundTrip:
    def test_gaussian_bit_exact(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(0))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.n == 5 and back.K == 2 and back.M == 4
        assert back.group_sizes == (2, 2)
        for key in ds.keys():
            assert np.array_equal(back.layers[key], ds.layers[key])

    def test_bernoulli_loop_free(self, tmp_path):
        fam = EdgeFamily("bernoulli_logit")
        ds = toy_dataset(np.random.default_rng(1), has_loops=False, family=fam)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.edge_family.kind == "bernoulli_logit"
        assert not back.has_loops
        for key in ds.keys():
            assert np.array_equal(back.layers[key], ds.layers[key])

    def test_labels_and_covariates(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(2))
        ds.node_labels = tuple(f"node{i}" for i in range(5))
        ds.covariates = {
            key: {"age": 30 + i, "sex": "M" if i % 2 else "F"}
            for i, key in enumerate(ds.keys())
        }
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.node_labels == ds.node_labels
        assert back.covariates == ds.covariates


class TestLoadValidation:
    def test_small_asymmetry_silently_averaged(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(3))
        save_dataset(ds, tmp_path / "d")
        key = GroupIndex(1, 1)
        A = np.array(ds.layers[key])
        A[0, 1] += 1e-8
        np.savetxt(tmp_path / "d" / "A_1_1.csv", A, delimiter=",", fmt="%.17g")
        back = load_dataset(tmp_path / "d")
        assert np.abs(back.layers[key] - back.layers[key].T).max() == 0.0
        assert not back.load_report.warnings

    def test_large_asymmetry_fails_without_force(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(4))
        save_dataset(ds, tmp_path / "d")
        A = np.array(ds.layers[GroupIndex(1, 1)])
        A[0, 1] += 1e-3
        np.savetxt(tmp_path / "d" / "A_1_1.csv", A, delimiter=",", fmt="%.17g")
        with pytest.raises(DatasetError, match="asymmetry"):
            load_dataset(tmp_path / "d")
        back = load_dataset(tmp_path / "d", force_symmetrize=True)
        assert len(back.load_report.warnings) == 1
        got = back.layers[GroupIndex(1, 1)][0, 1]
        assert np.isclose(got, A[0, 1] - 5e-4, atol=1e-12)

    def test_loop_free_diagonal_ignored_on_load(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(5), has_loops=False)
        save_dataset(ds, tmp_path / "d")
        A = np.array(ds.layers[GroupIndex(2, 1)])
        np.fill_diagonal(A, 7.0)
        np.savetxt(tmp_path / "d" / "A_2_1.csv", A, delimiter=",", fmt="%.17g")
        back = load_dataset(tmp_path / "d")
        assert not np.any(np.diagonal(back.layers[GroupIndex(2, 1)]))

    def test_nonbinary_bernoulli_rejected(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(6))
        save_dataset(ds, tmp_path / "d")
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        manifest["edge_family"] = {"kind": "bernoulli_logit"}
        (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DatasetError, match="binary"):
            load_dataset(tmp_path / "d")

    def test_dimension_mismatch_rejected(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(7))
        save_dataset(ds, tmp_path / "d")
        np.savetxt(tmp_path / "d" / "A_1_2.csv", np.zeros((4, 4)), delimiter=",", fmt="%.17g")
        with pytest.raises(DatasetError, match="shape"):
            load_dataset(tmp_path / "d")

    def test_missing_layer_file(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(8))
        save_dataset(ds, tmp_path / "d")
        (tmp_path / "d" / "A_2_2.csv").unlink()
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "d")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_dataset(tmp_path)

    def test_missing_manifest_field(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(9))
        save_dataset(ds, tmp_path / "d")
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        del manifest["group_sizes"]
        (tmp_path / "d" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DatasetError, match="group_sizes"):
            load_dataset(tmp_path / "d")

    def test_nonfinite_entries_rejected(self, tmp_path):
        ds = toy_dataset(np.random.default_rng(10))
        save_dataset(ds, tmp_path / "d")
        A = np.array(ds.layers[GroupIndex(1, 1)])
        A[2, 3] = A[3, 2] = np.nan
        np.savetxt(tmp_path / "d" / "A_1_1.csv", A, delimiter=",", fmt="%.17g")
        with pytest.raises(DatasetError, match="finite"):
            load_dataset(tmp_path / "d")


class TestDatasetInvariants:
    def test_layers_frozen_after_validate(self):
        ds = toy_dataset(np.random.default_rng(11))
        with pytest.raises(ValueError):
            ds.layers[GroupIndex(1, 1)][0, 0] = 1.0

    def test_identifiability_shape_requirements(self):
        ds = toy_dataset(np.random.default_rng(12), group_sizes=(2, 1))
        with pytest.raises(DatasetError, match="two layers"):
            ds.validate(identifiability=True)

    def test_key_helpers(self):
        ds = toy_dataset(np.random.default_rng(13), group_sizes=(1, 3))
        assert ds.keys() == [
            GroupIndex(1, 1),
            GroupIndex(2, 1),
            GroupIndex(2, 2),
            GroupIndex(2, 3),
        ]
        assert len(ds.group_layers(2)) == 3


class TestDecompositionIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        n = 6
        keys = layer_keys((1, 2))

        def lowrank(d):
            B = rng.standard_normal((n, d))
            return B @ B.T

        dec = LatentDecomposition(
            S=lowrank(2),
            Q=[lowrank(1), lowrank(1)],
            R={key: lowrank(1) for key in keys},
            sig_S=Signature(2, 0),
            sig_Q=[Signature(1, 0), Signature(1, 0)],
            sig_R={key: Signature(1, 0) for key in keys},
        )
        save_decomposition(
            dec,
            tmp_path / "fit",
            hyperparams={"lambda2": 1.5},
            traces={"stage2": {"loss": [3.0, 2.0], "stop_reason": "stalled"}},
            wall_time=0.25,
        )
        back, meta = load_decomposition(tmp_path / "fit")
        assert np.array_equal(back.S, dec.S)
        for k in range(2):
            assert np.array_equal(back.Q[k], dec.Q[k])
        for key in keys:
            assert np.array_equal(back.R[key], dec.R[key])
        assert back.sig_S == dec.sig_S
        assert meta["hyperparams"]["lambda2"] == 1.5
        assert meta["ranks"]["S"] == 2
        theta = back.theta(GroupIndex(2, 1))
        assert np.allclose(theta, dec.S + dec.Q[1] + dec.R[GroupIndex(2, 1)])
