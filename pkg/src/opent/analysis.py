"""Fits and derived quantities for the late-time entanglement analysis.

Five fit kinds: the three-point local log-tangent of the operator
entanglement (slope eta, offset S0), the single-parameter Gaussian for the
magnetization-sector probabilities, the matching trial function for the
spin-sector probabilities, the power law of the Gaussian width, and the
three-parameter decay (a + b tJ)^(-c) of the scaled resolved-entanglement
differences.  Fitters only see sectors/points above the p > 1e-4 reporting
threshold used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

P_REPORT_THRESHOLD = 1e-4

FIT_KINDS = ("log_tangent", "gaussian", "power_law", "trial_pS", "decay")


@dataclass(frozen=True)
class FitResult:
    kind: str
    params: dict
    residual: float  # max abs deviation of the fit on its inputs
    window: tuple = ()
    converged: bool = True

    def __post_init__(self):
        if self.kind not in FIT_KINDS:
            raise ValueError(f"unknown fit kind {self.kind!r}")
        if not math.isfinite(self.residual):
            raise ValueError("fit residual must be finite")


class FitError(ValueError):
    """Degenerate or insufficient input for a fit."""


def _pick_time(series_times: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(series_times - t)))
    if abs(series_times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise FitError(f"no sample at time {t}")
    return i


def fit_log_tangent(series, t0: float, dt: float) -> FitResult:
    """Local tangent of S(t) in log2(tJ): least squares through t0 and t0 +- dt.

    Returns eta (slope) and S0 (offset) of S = eta log2(tJ) + S0.
    """
    if not t0 > dt:
        raise FitError("t0 must exceed dt")
    pts = sorted(series)
    times = np.array([t for t, _ in pts])
    vals = np.array([s for _, s in pts])
    idx = [_pick_time(times, t) for t in (t0 - dt, t0, t0 + dt)]
    x = np.log2(times[idx])
    y = vals[idx]
    eta, s0 = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(np.polyval([eta, s0], x) - y)))
    return FitResult("log_tangent", {"eta": float(eta), "S0": float(s0), "t0": t0}, resid, (t0 - dt, t0 + dt))


def _gaussian(sz, delta):
    return np.exp(-(sz**2) / (2.0 * delta**2)) / np.sqrt(2.0 * np.pi * delta**2)


def fit_gaussian(probs: dict) -> FitResult:
    """Single-parameter Gaussian fit of the magnetization-sector probabilities.

    ``probs`` maps doubled Sz to probability; sectors at or below the
    reporting threshold are ignored.
    """
    pts = [(sz2 / 2.0, p) for sz2, p in probs.items() if p > P_REPORT_THRESHOLD]
    if len(pts) < 3:
        raise FitError("need at least 3 sectors above threshold for a Gaussian fit")
    sz = np.array([s for s, _ in pts])
    p = np.array([v for _, v in pts])
    d0 = max(math.sqrt(float(np.sum(p * sz**2) / np.sum(p))), 0.25)
    (delta,), _ = curve_fit(_gaussian, sz, p, p0=(d0,), maxfev=2000)
    delta = abs(float(delta))
    resid = float(np.max(np.abs(_gaussian(sz, delta) - p)))
    return FitResult("gaussian", {"delta": delta}, resid)


def _trial_ps(s, delta):
    return (2.0 * s + 1.0) / np.sqrt(2.0 * np.pi * delta**2) * (
        np.exp(-(s**2) / (2.0 * delta**2)) - np.exp(-((s + 1.0) ** 2) / (2.0 * delta**2))
    )


def fit_trial_ps(probs: dict) -> FitResult:
    """Fit of the spin-sector probabilities to the Gaussian-derived trial form."""
    pts = [(s2 / 2.0, p) for s2, p in probs.items() if p > P_REPORT_THRESHOLD]
    if len(pts) < 2:
        raise FitError("need at least 2 sectors above threshold for the trial fit")
    s = np.array([x for x, _ in pts])
    p = np.array([v for _, v in pts])
    d0 = max(math.sqrt(float(np.sum(p * (s + 0.5) ** 2) / np.sum(p))), 0.25)
    (delta,), _ = curve_fit(_trial_ps, s, p, p0=(d0,), maxfev=2000)
    delta = abs(float(delta))
    resid = float(np.max(np.abs(_trial_ps(s, delta) - p)))
    return FitResult("trial_pS", {"delta": delta}, resid)


def fit_power_law(series, window: tuple[float, float]) -> FitResult:
    """Slope of log(delta) vs log(t) over a time window."""
    lo, hi = window
    pts = [(t, d) for t, d in sorted(series) if lo <= t <= hi]
    if len(pts) < 4:
        raise FitError("power-law window must contain at least 4 points")
    if any(t <= 0 or d <= 0 for t, d in pts):
        raise FitError("power-law fit needs positive times and values")
    x = np.log(np.array([t for t, _ in pts]))
    y = np.log(np.array([d for _, d in pts]))
    alpha, logc = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(np.polyval([alpha, logc], x) - y)))
    return FitResult("power_law", {"alpha": float(alpha), "prefactor": float(np.exp(logc))}, resid, window)


def _decay(t, a, b, c):
    # clamp the base so out-of-domain trial parameters stay finite for the solver
    return np.maximum(a + b * t, 1e-12) ** (-c)


def fit_decay(series) -> FitResult:
    """Three-parameter (a + b tJ)^(-c) fit of a positive decaying series.

    Deterministically seeded: c from the two-point log slope of the tail,
    a from the earliest value, b from the midpoint; bounded iterations.
    A constant series is flagged as the degenerate c -> 0 branch.
    """
    pts = sorted(series)
    if len(pts) < 5:
        raise FitError("decay fit needs at least 5 points")
    t = np.array([x for x, _ in pts])
    y = np.array([v for _, v in pts])
    if np.any(y <= 0):
        raise FitError("decay fit needs positive values")
    spread = float(y.max() - y.min())
    if spread < 1e-12 * float(y.max()):
        return FitResult("decay", {"a": float(y[0] ** -1.0), "b": 0.0, "c": 0.0}, spread, converged=False)
    i_mid = len(pts) // 2
    c0 = -(math.log(y[-1]) - math.log(y[i_mid])) / (math.log(t[-1]) - math.log(t[i_mid]))
    c0 = min(max(c0, 0.05), 10.0)
    a0 = max(float(y[0]) ** (-1.0 / c0), 1e-3)
    b0 = max((float(y[i_mid]) ** (-1.0 / c0) - a0) / t[i_mid], 1e-6)
    try:
        (a, b, c), _ = curve_fit(_decay, t, y, p0=(a0, b0, c0), maxfev=200 * 4)
        converged = True
    except RuntimeError:
        a, b, c = a0, b0, c0
        converged = False
    resid = float(np.max(np.abs(_decay(t, a, b, c) - y)))
    return FitResult("decay", {"a": float(a), "b": float(b), "c": float(c)}, resid, converged=converged)


def gaussian_shannon_entropy(delta: float) -> float:
    """log2(delta) + log2(sqrt(2 pi e)): Shannon entropy of the sector Gaussian."""
    if delta <= 0:
        raise FitError("delta must be positive")
    return math.log2(delta) + math.log2(math.sqrt(2.0 * math.pi * math.e))
