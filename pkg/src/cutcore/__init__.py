"""Unsupervised multi-object mask discovery and its pipeline machinery."""

from . import (  # noqa: F401
    droploss,
    evaluation,
    maskcut,
    postprocess,
    pseudolabels,
    report,
    spectral,
    tensor_io,
)

__version__ = "0.1.0"
