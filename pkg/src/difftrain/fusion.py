"""Late fusion of prediction streams by simple linear regression, per-stream
dynamic tuning with a difficulty trace, and contribution shares.

All fitting happens on the development partition; the fitted coefficients are
then applied unchanged to the test partition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

RIDGE_LAMBDA = 1e-6


@dataclass(frozen=True)
class FusionModel:
    intercept: float
    coefficients: tuple[float, ...]
    difficulty_coefficient: float | None = None
    fitted_on: str = "dev"

    def to_dict(self) -> dict:
        return {"intercept": self.intercept,
                "coefficients": list(self.coefficients),
                "difficulty_coefficient": self.difficulty_coefficient,
                "fitted_on": self.fitted_on}


def _design_matrix(columns: Sequence[np.ndarray]) -> np.ndarray:
    cols = [np.asarray(c, dtype=np.float64).reshape(-1) for c in columns]
    length = cols[0].shape[0]
    for c in cols:
        if c.shape[0] != length:
            raise ValueError("all streams must have equal length")
    return np.column_stack([np.ones(length)] + cols)


def _solve(x: np.ndarray, y: np.ndarray, ridge_fallback: bool) -> np.ndarray:
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank == x.shape[1]:
        return beta
    if not ridge_fallback:
        raise np.linalg.LinAlgError(
            "design matrix is rank deficient and the ridge fallback is disabled")
    # small ridge penalty on every coefficient except the intercept
    penalty = RIDGE_LAMBDA * np.eye(x.shape[1])
    penalty[0, 0] = 0.0
    return np.linalg.solve(x.T @ x + penalty, x.T @ y)


def fit_slr(dev_streams: Sequence[np.ndarray], dev_gold,
            ridge_fallback: bool = True) -> FusionModel:
    """Least-squares fit of gold = intercept + sum(coef_i * stream_i)."""
    if len(dev_streams) < 1:
        raise ValueError("need at least one prediction stream")
    y = np.asarray(dev_gold, dtype=np.float64).reshape(-1)
    x = _design_matrix(dev_streams)
    if x.shape[0] != y.shape[0]:
        raise ValueError("streams and gold standard must have equal length")
    beta = _solve(x, y, ridge_fallback)
    return FusionModel(intercept=float(beta[0]),
                       coefficients=tuple(float(b) for b in beta[1:]))


def apply_slr(model: FusionModel, streams: Sequence[np.ndarray]) -> np.ndarray:
    if len(streams) != len(model.coefficients):
        raise ValueError(
            f"model fuses {len(model.coefficients)} streams, got {len(streams)}")
    out = np.full(np.asarray(streams[0]).reshape(-1).shape, model.intercept)
    for coef, stream in zip(model.coefficients, streams):
        out = out + coef * np.asarray(stream, dtype=np.float64).reshape(-1)
    return out


def fit_dynamic_tuning(stream, difficulty_trace, dev_gold,
                       ridge_fallback: bool = True) -> FusionModel:
    """Affine correction of one stream using its frame-wise difficulty."""
    y = np.asarray(dev_gold, dtype=np.float64).reshape(-1)
    d = np.asarray(difficulty_trace, dtype=np.float64).reshape(-1)
    x = _design_matrix([stream, d])
    if x.shape[0] != y.shape[0]:
        raise ValueError("stream and gold standard must have equal length")
    beta = _solve(x, y, ridge_fallback)
    return FusionModel(intercept=float(beta[0]), coefficients=(float(beta[1]),),
                       difficulty_coefficient=float(beta[2]))


def apply_dynamic_tuning(model: FusionModel, stream, difficulty_trace) -> np.ndarray:
    if model.difficulty_coefficient is None:
        raise ValueError("model was not fitted with a difficulty trace")
    s = np.asarray(stream, dtype=np.float64).reshape(-1)
    d = np.asarray(difficulty_trace, dtype=np.float64).reshape(-1)
    if s.shape != d.shape:
        raise ValueError("stream and difficulty trace must have equal length")
    return model.intercept + model.coefficients[0] * s \
        + model.difficulty_coefficient * d


def contribution_analysis(model: FusionModel,
                          streams: Sequence[np.ndarray]) -> np.ndarray:
    """Percentage share of each stream: |coef| weighted by stream std-dev.

    Raw coefficients are scale dependent, so shares weight them by the spread
    of the stream they multiply.
    """
    if len(streams) != len(model.coefficients):
        raise ValueError("stream count does not match the fitted model")
    weights = np.array([abs(c) * np.asarray(s, dtype=np.float64).std()
                        for c, s in zip(model.coefficients, streams)])
    total = weights.sum()
    if total <= 0:
        raise ValueError("all fused coefficients are zero; shares undefined")
    return 100.0 * weights / total
