"""Welch's t-test and the ablation orchestrator.

The two-sided p-value comes from an in-house Student-t CDF built on the
continued-fraction regularized incomplete beta (no external statistics
dependency), converged to 1e-12.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .train import run_repeats


# ---------------------------------------------------------------------------
# regularized incomplete beta and the t CDF

_CF_TOL = 1e-12
_CF_MAX_ITER = 500


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x):
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, dof):
    """P(|T| >= |t|) for a Student-t variable with `dof` degrees of freedom."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = dof / (dof + t * t)
    return betainc_regularized(dof / 2.0, 0.5, x)


# ---------------------------------------------------------------------------
# Welch's t-test


@dataclass
class WelchResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int
    degenerate: bool = False


def welch_t_test(a, b):
    """Unequal-variance two-sample t-test, two-sided.

    t > 0 when mean(a) > mean(b). Two identical constant groups yield the
    degenerate result t = 0, p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"each group needs >= 2 samples, got {a.size} and {b.size}")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / a.size, vb / b.size
    se2 = sa + sb
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(0.0, float("nan"), 1.0, ma, mb, a.size, b.size, degenerate=True)
        t = math.copysign(float("inf"), ma - mb)
        return WelchResult(t, float("nan"), 0.0, ma, mb, a.size, b.size, degenerate=True)
    t = (ma - mb) / math.sqrt(se2)
    # Welch-Satterthwaite, fractional
    dof = se2 * se2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1))
    p = t_sf_two_sided(t, dof)
    return WelchResult(float(t), float(dof), float(p), float(ma), float(mb), int(a.size), int(b.size))


# ---------------------------------------------------------------------------
# ablation orchestrator

AXES = ("loss_mode", "alpha", "lambda")

DEFAULT_AXIS_VALUES = {
    "loss_mode": ["proto-only", "angular-only", "combined"],
    "alpha": [0.5, 1.0, 2.0],
    "lambda": [0.25, 0.5, 1.0],
}


@dataclass
class AblationGrid:
    axis: str
    values: list
    base_config: object  # TrainConfig
    dataset: list  # samples, fixed across cells
    modality_configs: list

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown ablation axis {self.axis!r}; pick one of {AXES}")
        if not self.values:
            raise ValueError("ablation axis values must be nonempty")


@dataclass
class AblationRow:
    value: object
    accuracies: list
    mean: float
    std: float


@dataclass
class AblationReport:
    axis: str
    rows: list
    tests: dict  # (value_i, value_j) -> WelchResult
    notes: list = field(default_factory=list)


def _cell_config(base, axis, value):
    if axis == "loss_mode":
        return replace(base, loss=replace(base.loss, mode=value))
    if axis == "alpha":
        # the axis is only meaningful with the curvature pinned
        return replace(base, alpha_init=float(value), alpha_trainable=False)
    return replace(base, loss=replace(base.loss, lam=float(value)))


def run_ablation(grid):
    """run_repeats per axis value, plus pairwise Welch tests between cells."""
    rows = []
    for value in grid.values:
        config = _cell_config(grid.base_config, grid.axis, value)
        report = run_repeats(grid.dataset, config, grid.modality_configs)
        if report.failed:
            raise RuntimeError(f"ablation cell {grid.axis}={value} failed: {report.failure_reason}")
        rows.append(AblationRow(value=value, accuracies=report.accuracies,
                                mean=report.mean, std=report.std))
    tests = {}
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            tests[(rows[i].value, rows[j].value)] = welch_t_test(rows[i].accuracies, rows[j].accuracies)
    notes = ["pairwise Welch tests reported without multiple-comparison correction"]
    if grid.axis == "alpha":
        notes.append("curvature pinned (non-trainable) at each axis value")
    return AblationReport(axis=grid.axis, rows=rows, tests=tests, notes=notes)
