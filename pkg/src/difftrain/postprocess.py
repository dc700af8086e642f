"""Prediction refinement chain: median filtering, centering/scaling against
development-set moments, and time shifting, with an exhaustive dev-set grid
search over all step combinations (each step may also be switched off, so the
chain can never lose to the raw predictions on the development set).

Steps always run in the fixed order median filter -> center/scale -> shift.
Filtering and shifting operate per sequence; the selection CCC is computed on
the concatenation of all sequences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ccc

MEDIAN_WINDOW_GRID = (0.12, 0.20, 0.28, 0.36, 0.44)
TIME_SHIFT_GRID = tuple(round(0.04 * k, 2) for k in range(1, 16))


@dataclass(frozen=True)
class PostProcessParams:
    window: float | None = None      # median filter width, seconds
    shift: float | None = None       # forward time shift, seconds
    center: float | None = None      # additive offset (applied after scale)
    scale: float | None = None       # multiplicative gain

    def __post_init__(self):
        if (self.center is None) != (self.scale is None):
            raise ValueError("center and scale are enabled together")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def active_steps(self) -> int:
        return sum((self.window is not None, self.shift is not None,
                    self.center is not None))

    def to_dict(self) -> dict:
        return {"window": self.window, "shift": self.shift,
                "center": self.center, "scale": self.scale}


def _window_frames(window_s: float, frame_period: float) -> int:
    n = max(1, round(window_s / frame_period))
    if n % 2 == 0:
        n += 1
    return n


def median_filter(pred: np.ndarray, window_s: float,
                  frame_period: float) -> np.ndarray:
    """Sliding median with edge replication."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ValueError("cannot filter an empty series")
    n = _window_frames(window_s, frame_period)
    if n == 1:
        return pred.copy()
    half = n // 2
    padded = np.pad(pred, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, n)
    return np.median(windows, axis=1)


def derive_center_scale(dev_pred: np.ndarray,
                        dev_gold: np.ndarray) -> tuple[float, float]:
    """Moment matching on the development set: pred' = scale*pred + center."""
    dev_pred = np.asarray(dev_pred, dtype=np.float64).reshape(-1)
    dev_gold = np.asarray(dev_gold, dtype=np.float64).reshape(-1)
    sp = dev_pred.std()
    sg = dev_gold.std()
    if sp <= 0:
        raise ValueError("development predictions have zero variance")
    if sg <= 0:
        raise ValueError("development gold standard is degenerate (constant)")
    scale = sg / sp
    center = dev_gold.mean() - scale * dev_pred.mean()
    return center, scale


def center_scale(pred, dev_pred_stats: tuple[float, float],
                 dev_gold_stats: tuple[float, float]) -> np.ndarray:
    """Match prediction moments to the gold moments observed on dev."""
    mp, sp = dev_pred_stats
    mg, sg = dev_gold_stats
    if sp <= 0:
        raise ValueError("development predictions have zero variance")
    scale = sg / sp
    center = mg - scale * mp
    return np.asarray(pred, dtype=np.float64) * scale + center


def time_shift(pred: np.ndarray, shift_s: float, frame_period: float) -> np.ndarray:
    """Delay predictions by a whole number of frames, replicating the first."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    n = round(shift_s / frame_period)
    if abs(shift_s / frame_period - n) > 1e-6:
        raise ValueError(f"shift {shift_s} s is not a whole number of frames")
    if n < 0:
        raise ValueError("shift must be non-negative")
    if n >= pred.size:
        raise ValueError(f"shift of {n} frames exceeds series length {pred.size}")
    if n == 0:
        return pred.copy()
    out = np.empty_like(pred)
    out[:n] = pred[0]
    out[n:] = pred[:-n]
    return out


def _as_list(preds) -> list[np.ndarray]:
    if isinstance(preds, np.ndarray) and preds.ndim == 1:
        return [preds]
    return [np.asarray(p, dtype=np.float64).reshape(-1) for p in preds]


def _apply(per_seq: list[np.ndarray], params: PostProcessParams,
           frame_period: float) -> list[np.ndarray]:
    out = []
    for pred in per_seq:
        if params.window is not None:
            pred = median_filter(pred, params.window, frame_period)
        if params.center is not None:
            pred = pred * params.scale + params.center
        if params.shift is not None:
            pred = time_shift(pred, params.shift, frame_period)
        out.append(pred)
    return out


def apply_chain(preds, params: PostProcessParams, frame_period: float):
    """Apply a fitted chain; accepts one series or a list of them."""
    single = isinstance(preds, np.ndarray) and preds.ndim == 1
    result = _apply(_as_list(preds), params, frame_period)
    return result[0] if single else result


def optimize_chain(dev_preds, dev_gold, frame_period: float) -> PostProcessParams:
    """Exhaustive grid search maximizing dev CCC; ties prefer fewer steps.

    Grid: (no-op + 5 windows) x (no-op + 15 shifts) x (center/scale off, on)
    = 192 candidates, every no-op included so the identity chain is always a
    candidate.
    """
    preds = _as_list(dev_preds)
    golds = _as_list(dev_gold)
    if len(preds) != len(golds):
        raise ValueError("predictions and gold standards must pair up")
    gold_cat = np.concatenate(golds)
    if gold_cat.std() <= 0:
        raise ValueError("development gold standard is degenerate (constant)")
    best = None
    index = 0
    for window in (None,) + MEDIAN_WINDOW_GRID:
        filtered = preds if window is None else [
            median_filter(p, window, frame_period) for p in preds]
        for use_cs in (False, True):
            if use_cs:
                center, scale = derive_center_scale(np.concatenate(filtered),
                                                    gold_cat)
                staged = [p * scale + center for p in filtered]
            else:
                center = scale = None
                staged = filtered
            for shift in (None,) + TIME_SHIFT_GRID:
                shifted = staged if shift is None else [
                    time_shift(p, shift, frame_period) for p in staged]
                score = ccc(np.concatenate(shifted), gold_cat).r_c
                params = PostProcessParams(window=window, shift=shift,
                                           center=center, scale=scale)
                key = (-score, params.active_steps, index)
                if best is None or key < best[0]:
                    best = (key, params)
                index += 1
    return best[1]
