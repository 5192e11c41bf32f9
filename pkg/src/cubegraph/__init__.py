"""Hand-drawn cube sketches to graphs, node features, and a multimodal
graph-attention classifier with Shapley explanations."""

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "cli",
    "evaluation",
    "explain",
    "features",
    "graphbuild",
    "model",
    "raster",
    "synth",
    "vectorize",
]
