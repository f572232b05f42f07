"""Figure builders over the estimator's documented CSV schemas.

Three inputs are understood:

- benchmark results: method, n, M, K, s_vw, s_vu, s_ww, s_wu, s_uu,
  seed, metric, component, value (one row per seed);
- group embeddings: node, lobe, group, dim1..dimD;
- lobe differences: lobe_a, lobe_b, diff, p, q, stars.

Each builder validates the schema, renders, writes the image, and
returns the figure for metadata inspection. No statistics beyond
grouping and averaging happen here; stars and q-values are taken from
the input as-is. Rendering is deterministic: fixed dpi, no embedded
timestamps, fixed SVG hash salt, so re-rendering the same input is
byte-stable.
"""

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    """Input file does not conform to the documented CSV schema."""


DIFF_COLUMNS = ("lobe_a", "lobe_b", "diff", "p", "q", "stars")
EMBED_COLUMNS = ("node", "lobe", "group")


def _read_rows(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def save_figure(fig, out: str | Path) -> Path:
    """Write the figure without timestamps so outputs are byte-stable."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if out.suffix.lower() == ".svg" else None
    with matplotlib.rc_context({"svg.hashsalt": "gmn-figures"}):
        fig.savefig(out, dpi=150, metadata=metadata)
    plt.close(fig)
    return out


def plot_sweep(path: str | Path, vary: str, metric: str, out: str | Path):
    """Mean metric vs the sweep parameter, one line per method/component."""
    rows = _read_rows(path, ("method", "component", "metric", "value", vary))
    rows = [r for r in rows if r["metric"] == metric]
    if not rows:
        raise SchemaError(f"{path}: no rows with metric {metric!r}")

    series: dict[tuple[str, str], dict[float, list[float]]] = {}
    for r in rows:
        try:
            x = float(r[vary])
            y = float(r["value"])
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric entry in {vary!r}/value") from exc
        series.setdefault((r["method"], r["component"]), {}).setdefault(x, []).append(y)

    components = {c for _, c in series}
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for method, component in sorted(series):
        points = sorted(series[(method, component)].items())
        xs = [x for x, _ in points]
        ys = [float(np.mean(v)) for _, v in points]
        label = f"{method} ({component})" if len(components) > 1 else method
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(vary)
    ax.set_ylabel(f"mean {metric}")
    ax.legend()
    fig.tight_layout()
    save_figure(fig, out)
    return fig


def _dim_columns(fieldnames: list[str]) -> list[str]:
    found = {}
    for name in fieldnames:
        if name.startswith("dim") and name[3:].isdigit():
            found[int(name[3:])] = name
    return [found[i] for i in sorted(found)]


def plot_embeddings(path: str | Path, out: str | Path, dims: int = 3):
    """One scatter panel per group in the leading dims, colored by lobe."""
    if dims not in (2, 3):
        raise SchemaError("dims must be 2 or 3")
    path = Path(path)
    rows = _read_rows(path, EMBED_COLUMNS)
    dim_cols = _dim_columns(list(rows[0].keys()))
    if len(dim_cols) < dims:
        raise SchemaError(
            f"{path}: need {dims} dimension columns, found {len(dim_cols)}"
        )
    dim_cols = dim_cols[:dims]

    by_group: dict[str, list[dict]] = {}
    for r in rows:
        by_group.setdefault(r["group"], []).append(r)
    groups = sorted(by_group, key=lambda g: (len(g), g))
    node_sets = {g: sorted(r["node"] for r in by_group[g]) for g in groups}
    if len({tuple(v) for v in node_sets.values()}) != 1:
        raise SchemaError(f"{path}: groups do not share the same node set")

    lobes = sorted({r["lobe"] for r in rows})
    cmap = plt.get_cmap("tab10")
    colors = {lobe: cmap(i % 10) for i, lobe in enumerate(lobes)}

    coords = {
        g: np.array([[float(r[c]) for c in dim_cols] for r in by_group[g]])
        for g in groups
    }
    lows = np.min([c.min(axis=0) for c in coords.values()], axis=0)
    highs = np.max([c.max(axis=0) for c in coords.values()], axis=0)
    pad = 0.05 * np.maximum(highs - lows, 1e-12)
    lows, highs = lows - pad, highs + pad

    subplot_kw = {"projection": "3d"} if dims == 3 else {}
    fig, axes = plt.subplots(
        1, len(groups), figsize=(4.2 * len(groups), 4.2), subplot_kw=subplot_kw,
        squeeze=False,
    )
    for ax, g in zip(axes[0], groups):
        pts = coords[g]
        for lobe in lobes:
            idx = [i for i, r in enumerate(by_group[g]) if r["lobe"] == lobe]
            ax.scatter(*(pts[idx, j] for j in range(dims)),
                       color=colors[lobe], label=lobe, s=18)
        ax.set_title(f"group {g}")
        ax.set_xlim(lows[0], highs[0])
        ax.set_ylim(lows[1], highs[1])
        if dims == 3:
            ax.set_zlim(lows[2], highs[2])
        ax.set_xlabel(dim_cols[0])
        ax.set_ylabel(dim_cols[1])
        if dims == 3:
            ax.set_zlabel(dim_cols[2])
    axes[0][0].legend(loc="upper left")
    fig.tight_layout()
    save_figure(fig, out)
    return fig


def plot_heatmap(path: str | Path, out: str | Path):
    """Symmetric lobe-pair difference heatmap annotated with stars."""
    path = Path(path)
    rows = _read_rows(path, DIFF_COLUMNS)
    labels = sorted({r["lobe_a"] for r in rows} | {r["lobe_b"] for r in rows})
    pos = {lab: i for i, lab in enumerate(labels)}
    L = len(labels)
    grid = np.full((L, L), np.nan)
    stars = [["" for _ in range(L)] for _ in range(L)]
    for r in rows:
        try:
            d = float(r["diff"])
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric diff entry") from exc
        i, j = pos[r["lobe_a"]], pos[r["lobe_b"]]
        grid[i, j] = grid[j, i] = d
        stars[i][j] = stars[j][i] = r["stars"]

    finite = grid[np.isfinite(grid)]
    vmax = float(np.max(np.abs(finite))) if finite.size else 0.0
    if vmax == 0.0:
        vmax = 1.0
    cmap = plt.get_cmap("coolwarm").copy()
    cmap.set_bad("#d9d9d9")

    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * L, 1.0 + 0.9 * L))
    im = ax.imshow(np.ma.masked_invalid(grid), cmap=cmap, vmin=-vmax, vmax=vmax)
    ax.set_xticks(range(L), labels)
    ax.set_yticks(range(L), labels)
    for i in range(L):
        for j in range(L):
            if math.isnan(grid[i, j]):
                ax.text(j, i, "n/a", ha="center", va="center", fontsize=8)
                continue
            text = f"{grid[i, j]:.2f}"
            if stars[i][j]:
                text += f"\n{stars[i][j]}"
            ax.text(j, i, text, ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    save_figure(fig, out)
    return fig
