"""Domain containers and their on-disk layout.

A dataset is a directory with a ``manifest.json`` and one headerless
CSV per layer.  A fitted (or ground-truth) decomposition is a directory
with a ``fit.json`` plus one CSV per matrix component.  Floats are
written with 17 significant digits so that a save/load round trip is
bit-exact for float64.

Group and layer indices are 1-based everywhere they appear in keys and
file names: layer ``l`` of group ``k`` is keyed ``(k, l)`` and stored as
``A_k_l.csv`` (``R_k_l.csv`` for individual components).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .edge_family import EdgeFamily

__all__ = [
    "DatasetError",
    "NumericalError",
    "GroupIndex",
    "Signature",
    "ComponentRanks",
    "LoadReport",
    "MultiplexDataset",
    "LatentDecomposition",
    "LatentPositions",
    "layer_keys",
    "load_dataset",
    "save_dataset",
    "save_decomposition",
    "load_decomposition",
]

SYMMETRY_TOL = 1e-6
_FMT = "%.17g"


class DatasetError(ValueError):
    """Malformed dataset directory or inconsistent dataset contents."""


class NumericalError(RuntimeError):
    """A numerical routine diverged or produced non-finite values."""


class GroupIndex(NamedTuple):
    """1-based (group, within-group layer) identifier."""

    k: int
    l: int

    def label(self) -> str:
        return f"{self.k}_{self.l}"


def layer_keys(group_sizes: tuple[int, ...]) -> list[GroupIndex]:
    """Canonical layer ordering: groups in order, layers within group."""
    return [
        GroupIndex(k + 1, l + 1)
        for k, size in enumerate(group_sizes)
        for l in range(size)
    ]


@dataclass(frozen=True)
class Signature:
    """Counts of positive (p) and negative (q) eigenvalues of a component."""

    p: int
    q: int

    @property
    def d(self) -> int:
        return self.p + self.q


@dataclass(frozen=True)
class ComponentRanks:
    """Target ranks for the shared, group, and individual components."""

    d_shared: int
    d_group: tuple[int, ...]
    d_layer: dict[GroupIndex, int]


@dataclass
class LoadReport:
    max_asymmetry: dict[GroupIndex, float]
    warnings: list[str]


@dataclass
class MultiplexDataset:
    """An observed collection of undirected networks on shared nodes.

    Layers are stored as dense symmetric n-by-n float arrays keyed by
    :class:`GroupIndex`.  Arrays are frozen (read-only) by
    :meth:`validate`; datasets are treated as immutable after load.
    """

    n: int
    group_sizes: tuple[int, ...]
    layers: dict[GroupIndex, np.ndarray]
    edge_family: EdgeFamily
    has_loops: bool = True
    node_labels: tuple[str, ...] | None = None
    covariates: dict[GroupIndex, dict] | None = None
    load_report: LoadReport | None = field(default=None, compare=False, repr=False)

    @property
    def K(self) -> int:
        return len(self.group_sizes)

    @property
    def M(self) -> int:
        return int(sum(self.group_sizes))

    def keys(self) -> list[GroupIndex]:
        return layer_keys(self.group_sizes)

    def group_keys(self, k: int) -> list[GroupIndex]:
        return [GroupIndex(k, l + 1) for l in range(self.group_sizes[k - 1])]

    def group_layers(self, k: int) -> list[np.ndarray]:
        return [self.layers[key] for key in self.group_keys(k)]

    def iter_layers(self) -> Iterator[tuple[GroupIndex, np.ndarray]]:
        for key in self.keys():
            yield key, self.layers[key]

    def validate(self, identifiability: bool = False, sym_tol: float = 1e-12) -> None:
        if self.n <= 0:
            raise DatasetError("n must be positive")
        if len(self.group_sizes) == 0 or any(m <= 0 for m in self.group_sizes):
            raise DatasetError("every group must contain at least one layer")
        expected = set(self.keys())
        if set(self.layers) != expected:
            raise DatasetError("layer keys do not match group sizes")
        if identifiability:
            if self.K < 2:
                raise DatasetError("identifiability requires at least two groups")
            if any(m < 2 for m in self.group_sizes):
                raise DatasetError("identifiability requires at least two layers per group")
        if self.node_labels is not None and len(self.node_labels) != self.n:
            raise DatasetError("node_labels length does not match n")
        for key, A in self.layers.items():
            if A.shape != (self.n, self.n):
                raise DatasetError(f"layer {key.label()} has shape {A.shape}, expected ({self.n}, {self.n})")
            if not np.all(np.isfinite(A)):
                raise DatasetError(f"layer {key.label()} has non-finite entries")
            if np.abs(A - A.T).max() > sym_tol:
                raise DatasetError(f"layer {key.label()} is not symmetric")
            if not self.has_loops and np.any(np.diagonal(A) != 0.0):
                raise DatasetError(f"layer {key.label()} has nonzero diagonal in a loop-free dataset")
            if self.edge_family.kind == "bernoulli_logit":
                off = A[~np.eye(self.n, dtype=bool)] if not self.has_loops else A
                if not np.isin(off, (0.0, 1.0)).all():
                    raise DatasetError(f"layer {key.label()} has non-binary entries for a bernoulli dataset")
            A.flags.writeable = False


@dataclass
class LatentDecomposition:
    """Shared, group, and individual symmetric low-rank components."""

    S: np.ndarray
    Q: list[np.ndarray]
    R: dict[GroupIndex, np.ndarray]
    sig_S: Signature
    sig_Q: list[Signature]
    sig_R: dict[GroupIndex, Signature]

    @property
    def K(self) -> int:
        return len(self.Q)

    def theta(self, key: GroupIndex) -> np.ndarray:
        return self.S + self.Q[key.k - 1] + self.R[key]

    def ranks(self) -> ComponentRanks:
        return ComponentRanks(
            d_shared=self.sig_S.d,
            d_group=tuple(sig.d for sig in self.sig_Q),
            d_layer={key: sig.d for key, sig in self.sig_R.items()},
        )


@dataclass
class LatentPositions:
    """Latent position matrices whose generalized Grams give the components."""

    V: np.ndarray
    W: list[np.ndarray]
    U: dict[GroupIndex, np.ndarray]
    sig_V: Signature
    sig_W: list[Signature]
    sig_U: dict[GroupIndex, Signature]


def _family_to_json(fam: EdgeFamily) -> dict:
    if fam.kind == "gaussian":
        return {"kind": "gaussian", "sigma2": fam.sigma2}
    return {"kind": "bernoulli_logit"}


def _family_from_json(obj: dict) -> EdgeFamily:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise DatasetError("edge_family must be an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "gaussian":
        return EdgeFamily("gaussian", sigma2=float(obj.get("sigma2", 1.0)))
    if kind == "bernoulli_logit":
        return EdgeFamily("bernoulli_logit")
    raise DatasetError(f"unknown edge family kind {kind!r}")


def _parse_key(label: str) -> GroupIndex:
    parts = label.split("_")
    if len(parts) != 2:
        raise DatasetError(f"bad layer key {label!r}, expected 'k_l'")
    try:
        return GroupIndex(int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise DatasetError(f"bad layer key {label!r}") from exc


def _read_matrix(path: Path, n: int | None = None) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}") from exc
    except ValueError as exc:
        raise DatasetError(f"cannot parse {path} as a numeric CSV") from exc
    if n is not None and A.shape != (n, n):
        raise DatasetError(f"{path.name} has shape {A.shape}, expected ({n}, {n})")
    return A


def _write_matrix(path: Path, A: np.ndarray) -> None:
    np.savetxt(path, np.asarray(A, dtype=float), delimiter=",", fmt=_FMT)


def load_dataset(path: str | Path, force_symmetrize: bool = False) -> MultiplexDataset:
    """Read a dataset directory.

    Layers whose asymmetry ``max|A - A.T|`` exceeds ``1e-6`` make the
    load fail unless ``force_symmetrize`` is set; below that threshold
    the layer is silently symmetrized to ``(A + A.T) / 2``.  Loop-free
    datasets have their diagonals ignored (zeroed) on load.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest.json is not valid JSON: {exc}") from exc
    for field_name in ("n", "K", "group_sizes", "edge_family", "has_loops", "layer_files"):
        if field_name not in manifest:
            raise DatasetError(f"manifest.json is missing required field {field_name!r}")
    n = int(manifest["n"])
    group_sizes = tuple(int(m) for m in manifest["group_sizes"])
    if int(manifest["K"]) != len(group_sizes):
        raise DatasetError("manifest K does not match group_sizes length")
    fam = _family_from_json(manifest["edge_family"])
    has_loops = bool(manifest["has_loops"])
    expected = layer_keys(group_sizes)
    listed = {_parse_key(label): fname for label, fname in manifest["layer_files"].items()}
    if set(listed) != set(expected):
        raise DatasetError("layer_files do not cover exactly the keys implied by group_sizes")

    report = LoadReport(max_asymmetry={}, warnings=[])
    layers: dict[GroupIndex, np.ndarray] = {}
    for key in expected:
        A = _read_matrix(root / listed[key], n)
        if not np.all(np.isfinite(A)):
            raise DatasetError(f"layer {key.label()} has non-finite entries")
        asym = float(np.abs(A - A.T).max())
        report.max_asymmetry[key] = asym
        if asym > SYMMETRY_TOL:
            if not force_symmetrize:
                raise DatasetError(
                    f"layer {key.label()} asymmetry {asym:.3g} exceeds {SYMMETRY_TOL:g}; "
                    "pass force_symmetrize to average it away"
                )
            report.warnings.append(
                f"layer {key.label()}: asymmetry {asym:.3g} exceeded {SYMMETRY_TOL:g}, symmetrized"
            )
        A = 0.5 * (A + A.T)
        if not has_loops:
            np.fill_diagonal(A, 0.0)
        layers[key] = A

    node_labels = manifest.get("node_labels")
    covariates_raw = manifest.get("covariates")
    covariates = None
    if covariates_raw is not None:
        covariates = {_parse_key(label): dict(rec) for label, rec in covariates_raw.items()}
    ds = MultiplexDataset(
        n=n,
        group_sizes=group_sizes,
        layers=layers,
        edge_family=fam,
        has_loops=has_loops,
        node_labels=tuple(node_labels) if node_labels is not None else None,
        covariates=covariates,
        load_report=report,
    )
    ds.validate()
    return ds


def save_dataset(ds: MultiplexDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    layer_files = {}
    for key, A in ds.iter_layers():
        fname = f"A_{key.label()}.csv"
        layer_files[key.label()] = fname
        out = np.array(A, dtype=float)
        if not ds.has_loops:
            np.fill_diagonal(out, 0.0)
        _write_matrix(root / fname, out)
    manifest = {
        "n": ds.n,
        "K": ds.K,
        "group_sizes": list(ds.group_sizes),
        "edge_family": _family_to_json(ds.edge_family),
        "has_loops": ds.has_loops,
        "layer_files": layer_files,
    }
    if ds.node_labels is not None:
        manifest["node_labels"] = list(ds.node_labels)
    if ds.covariates is not None:
        manifest["covariates"] = {key.label(): rec for key, rec in ds.covariates.items()}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def save_decomposition(
    dec: LatentDecomposition,
    path: str | Path,
    hyperparams: dict | None = None,
    traces: dict | None = None,
    wall_time: float | None = None,
    positions: LatentPositions | None = None,
    extra: dict | None = None,
) -> None:
    """Write a decomposition directory: fit.json plus one CSV per matrix."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    keys = sorted(dec.R, key=lambda key: (key.k, key.l))
    meta = {
        "n": int(dec.S.shape[0]),
        "K": dec.K,
        "layer_keys": [key.label() for key in keys],
        "ranks": {
            "S": dec.sig_S.d,
            "Q": [sig.d for sig in dec.sig_Q],
            "R": {key.label(): dec.sig_R[key].d for key in keys},
        },
        "signatures": {
            "S": [dec.sig_S.p, dec.sig_S.q],
            "Q": [[sig.p, sig.q] for sig in dec.sig_Q],
            "R": {key.label(): [dec.sig_R[key].p, dec.sig_R[key].q] for key in keys},
        },
        "hyperparams": hyperparams,
        "loss_traces": traces,
        "wall_time_sec": wall_time,
        "has_positions": positions is not None,
    }
    if extra:
        meta.update(extra)
    (root / "fit.json").write_text(json.dumps(meta, indent=2) + "\n")
    _write_matrix(root / "S.csv", dec.S)
    for k, Qk in enumerate(dec.Q, start=1):
        _write_matrix(root / f"Q_{k}.csv", Qk)
    for key in keys:
        _write_matrix(root / f"R_{key.label()}.csv", dec.R[key])
    if positions is not None:
        _write_matrix(root / "V.csv", positions.V)
        for k, Wk in enumerate(positions.W, start=1):
            _write_matrix(root / f"W_{k}.csv", Wk)
        for key in keys:
            _write_matrix(root / f"U_{key.label()}.csv", positions.U[key])


def load_decomposition(path: str | Path) -> tuple[LatentDecomposition, dict]:
    root = Path(path)
    meta_path = root / "fit.json"
    if not meta_path.is_file():
        raise DatasetError(f"no fit.json under {root}")
    meta = json.loads(meta_path.read_text())
    keys = [_parse_key(label) for label in meta["layer_keys"]]
    K = int(meta["K"])
    sig = meta["signatures"]
    S = _read_matrix(root / "S.csv")
    Q = [_read_matrix(root / f"Q_{k}.csv") for k in range(1, K + 1)]
    R = {key: _read_matrix(root / f"R_{key.label()}.csv") for key in keys}
    dec = LatentDecomposition(
        S=S,
        Q=Q,
        R=R,
        sig_S=Signature(*sig["S"]),
        sig_Q=[Signature(*pq) for pq in sig["Q"]],
        sig_R={key: Signature(*sig["R"][key.label()]) for key in keys},
    )
    return dec, meta
