"""Multimodal sentiment classifier: transformer encoders with selectable fusion.

The heavy lifting lives in the compiled `_core` extension; this package just
re-exports its surface.
"""

from ._core import (
    APPROACHES,
    CLASS_NAMES,
    Dataset,
    Error,
    Model,
    discretize,
    evaluate,
    generate,
    load_dataset,
    load_model,
    make_model,
    predict,
    save_dataset,
    split,
    train,
)

__all__ = [
    "APPROACHES",
    "CLASS_NAMES",
    "Dataset",
    "Error",
    "Model",
    "discretize",
    "evaluate",
    "generate",
    "load_dataset",
    "load_model",
    "make_model",
    "predict",
    "save_dataset",
    "split",
    "train",
]
