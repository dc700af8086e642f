"""Concordance/Pearson correlation, Fisher r-to-z comparison of two
coefficients, and frame-wise improvement analysis.

CCC uses population (1/N) moments throughout. Degenerate series follow the
concordance semantics: two identical constants are in perfect agreement (1),
any other constant case has no concordance (0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_CONST_TOL = 0.0  # a series is constant only when its variance is exactly zero


@dataclass(frozen=True)
class MetricReport:
    r_c: float
    r: float
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    n: int


@dataclass(frozen=True)
class FisherTest:
    m1: float
    m2: float
    se1: float
    se2: float
    z: float
    p: float
    n1: int
    n2: int


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ValueError("need at least two samples")
    return a, b


def ccc(pred, gold) -> MetricReport:
    """Concordance correlation: 2*cov / (var_x + var_y + (mu_x - mu_y)^2)."""
    x, y = _check_pair(pred, gold)
    mu_x = x.mean()
    mu_y = y.mean()
    dx = x - mu_x
    dy = y - mu_y
    var_x = float(np.mean(dx * dx))
    var_y = float(np.mean(dy * dy))
    cov = float(np.mean(dx * dy))
    x_const = var_x <= _CONST_TOL
    y_const = var_y <= _CONST_TOL
    if x_const or y_const:
        if x_const and y_const:
            r_c = 1.0 if mu_x == mu_y else 0.0
        else:
            r_c = 0.0
        r = float("nan")
    else:
        r_c = 2.0 * cov / (var_x + var_y + (mu_x - mu_y) ** 2)
        r = cov / math.sqrt(var_x * var_y)
    return MetricReport(r_c=float(r_c), r=float(r), mu_x=float(mu_x),
                        mu_y=float(mu_y), sigma_x=math.sqrt(var_x),
                        sigma_y=math.sqrt(var_y), n=x.shape[0])


def pcc(a, b) -> float:
    """Pearson correlation; raises on constant input where it is undefined."""
    x, y = _check_pair(a, b)
    dx = x - x.mean()
    dy = y - y.mean()
    var_x = float(np.mean(dx * dx))
    var_y = float(np.mean(dy * dy))
    if var_x <= _CONST_TOL or var_y <= _CONST_TOL:
        raise ValueError("Pearson correlation is undefined for a constant series")
    return float(np.mean(dx * dy) / math.sqrt(var_x * var_y))


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def fisher_compare(r1: float, n1: int, r2: float, n2: int) -> FisherTest:
    """One-tailed Fisher r-to-z comparison of two correlation coefficients.

    The concordance coefficient may be passed in place of r. p is the
    probability of a z at least this large under equality, so small p means
    the first coefficient is significantly larger.
    """
    for r in (r1, r2):
        if abs(r) >= 1.0:
            raise ValueError(f"|r|={abs(r)} must be < 1 for the transform")
    for n in (n1, n2):
        if n <= 3:
            raise ValueError("need more than 3 samples per series")
    m1 = math.atanh(r1)
    m2 = math.atanh(r2)
    se1 = 1.0 / math.sqrt(n1 - 3)
    se2 = 1.0 / math.sqrt(n2 - 3)
    z = (m1 - m2) / math.sqrt(se1 ** 2 + se2 ** 2)
    p = 1.0 - normal_cdf(z)
    return FisherTest(m1=m1, m2=m2, se1=se1, se2=se2, z=z, p=p, n1=n1, n2=n2)


SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class DeltaTrace:
    """Per-frame absolute-error improvement of one system over a baseline."""

    values: np.ndarray
    pcc_vs_re: float | None = None
    pcc_vs_pu: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64).reshape(-1))


def improvement_delta(pred_baseline, pred_improved, gold) -> DeltaTrace:
    """delta_t = |baseline_t - y_t| - |improved_t - y_t| (positive = better)."""
    base = np.asarray(pred_baseline, dtype=np.float64).reshape(-1)
    imp = np.asarray(pred_improved, dtype=np.float64).reshape(-1)
    y = np.asarray(gold, dtype=np.float64).reshape(-1)
    if not (base.shape == imp.shape == y.shape):
        raise ValueError("prediction and gold traces must have equal length")
    return DeltaTrace(values=np.abs(base - y) - np.abs(imp - y))


def summarize_delta(delta: DeltaTrace, re_trace=None, pu_trace=None) -> DeltaTrace:
    """Attach the summary correlations against the difficulty indicators."""
    pcc_re = pcc(re_trace, delta.values) if re_trace is not None else None
    pcc_pu = pcc(pu_trace, delta.values) if pu_trace is not None else None
    return DeltaTrace(values=delta.values, pcc_vs_re=pcc_re, pcc_vs_pu=pcc_pu)


_PAIR_NAMES = ("pcc_re_delta", "pcc_pu_delta", "pcc_re_pu")


def indicator_correlation_table(cells: dict) -> list[dict]:
    """Correlations among RE trace, PU trace, and improvement per cell.

    cells maps (partition, dimension) -> {"re": trace, "pu": trace,
    "delta": trace}; returns one row per pair per cell.
    """
    rows = []
    for (partition, dimension), traces in cells.items():
        re_t = np.asarray(traces["re"]).reshape(-1)
        pu_t = np.asarray(traces["pu"]).reshape(-1)
        delta = np.asarray(traces["delta"]).reshape(-1)
        for pair, value in zip(_PAIR_NAMES,
                               (pcc(re_t, delta), pcc(pu_t, delta), pcc(re_t, pu_t))):
            rows.append({"pair": pair, "partition": partition,
                         "dimension": dimension, "pcc": value})
    return rows


def format_correlation_table(rows: list[dict]) -> str:
    lines = [f"{'pair':<14} {'partition':<10} {'dimension':<10} {'pcc':>8}"]
    for row in rows:
        lines.append(f"{row['pair']:<14} {row['partition']:<10} "
                     f"{row['dimension']:<10} {row['pcc']:>8.3f}")
    return "\n".join(lines)
