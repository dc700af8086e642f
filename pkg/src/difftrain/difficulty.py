"""Difficulty indicators derived from model outputs, and input augmentation.

An indicator is a per-frame trace: the reconstruction-error vector (width r),
its signed per-frame sum (width 1, absolute-sum variant available since signed
terms can cancel), or the predicted perception uncertainty (width 1).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import FeatureSequence, _freeze

INDICATOR_MODES = ("re_vector", "re_sum", "pu")


@dataclass(frozen=True)
class DifficultyIndicator:
    mode: str
    trace: np.ndarray                # (T, w_d)
    source_model: str = ""

    def __post_init__(self):
        if self.mode not in INDICATOR_MODES:
            raise ValueError(f"unknown indicator mode {self.mode!r}")
        trace = np.asarray(self.trace, dtype=np.float64)
        if trace.ndim == 1:
            trace = trace[:, None]
        if self.mode in ("re_sum", "pu") and trace.shape[1] != 1:
            raise ValueError(f"{self.mode} indicator must have width 1")
        if not np.all(np.isfinite(trace)):
            raise ValueError("non-finite difficulty values")
        object.__setattr__(self, "trace", _freeze(trace))

    @property
    def width(self) -> int:
        return self.trace.shape[1]

    @property
    def num_frames(self) -> int:
        return self.trace.shape[0]


def re_vector(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Elementwise reconstruction error; works per frame or on T x r blocks."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return x - x_hat


def re_sum(x: np.ndarray, x_hat: np.ndarray, absolute: bool = False):
    """Per-frame error summed over feature attributes (signed by default)."""
    err = re_vector(x, x_hat)
    if absolute:
        err = np.abs(err)
    return err.sum(axis=-1)


def indicator_from_reconstruction(inputs: np.ndarray, reconstruction: np.ndarray,
                                  mode: str, absolute: bool = False,
                                  source_model: str = "") -> DifficultyIndicator:
    if mode == "re_vector":
        trace = re_vector(inputs, reconstruction)
    elif mode == "re_sum":
        trace = re_sum(inputs, reconstruction, absolute=absolute)[:, None]
    else:
        raise ValueError(f"mode {mode!r} is not reconstruction based")
    return DifficultyIndicator(mode=mode, trace=trace, source_model=source_model)


def augment(seq: FeatureSequence, indicator: DifficultyIndicator) -> FeatureSequence:
    """Concatenate the difficulty trace onto the features: x' = [x, d]."""
    values = augment_matrix(seq.values, indicator.trace)
    return replace(seq, values=values)


def augment_matrix(values: np.ndarray, trace: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim == 1:
        trace = trace[:, None]
    if values.shape[0] != trace.shape[0]:
        raise ValueError(
            f"length mismatch: {values.shape[0]} feature frames vs "
            f"{trace.shape[0]} difficulty frames")
    return np.hstack([values, trace])


def write_indicator_csv(path, indicator: DifficultyIndicator, frame_period: float):
    """Frame-aligned CSV export: time_s, d_1..d_wd."""
    path = Path(path)
    t_axis = np.arange(indicator.num_frames) * frame_period
    header = "time_s," + ",".join(f"d_{i + 1}" for i in range(indicator.width))
    np.savetxt(path, np.column_stack([t_axis, indicator.trace]),
               delimiter=",", header=header, comments="", fmt="%.17g")


def read_indicator_csv(path, mode: str = "re_sum") -> DifficultyIndicator:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DifficultyIndicator(mode=mode, trace=data[:, 1:], source_model=str(path))
