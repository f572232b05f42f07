"""Figure rendering for the grouped multiplex estimator's CSV outputs."""

from .plots import SchemaError, plot_embeddings, plot_heatmap, plot_sweep, save_figure

__all__ = [
    "SchemaError",
    "plot_embeddings",
    "plot_heatmap",
    "plot_sweep",
    "save_figure",
]
