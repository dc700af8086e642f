"""Difficulty-aware recurrent sequence regression for continuous emotion
traces: data preparation, two-stage training, evaluation metrics,
post-processing, and late fusion."""

from .kernels import BACKEND as RECURRENT_BACKEND

__version__ = "0.1.0"

__all__ = ["RECURRENT_BACKEND", "__version__"]
