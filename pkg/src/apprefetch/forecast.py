"""One-step-ahead server-load forecasting.

Fixed-order seasonal model: first differences at lag 1 and lag 24 remove the
trend and the daily cycle, and a two-coefficient moving-average recursion is
fitted to the differenced series by conditional sum of squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SEASON",
    "MIN_FORECAST_HISTORY",
    "MIN_FIT_HISTORY",
    "SarimaParams",
    "difference",
    "fit",
    "forecast_one_step",
    "mape",
    "rolling_one_step",
]

SEASON = 24
# difference() consumes SEASON + 1 leading points.
MIN_FORECAST_HISTORY = SEASON + 2
# 49 points span 48 hours and leave 24 usable residual equations.
MIN_FIT_HISTORY = 2 * SEASON + 1

_BOX = 0.99
_GRID_STEP = 0.05
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SarimaParams:
    """Fitted moving-average coefficients (lag 1 and seasonal lag 24)."""

    theta: float
    seasonal_theta: float
    season_length: int = SEASON
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not (abs(self.theta) < 1 and abs(self.seasonal_theta) < 1):
            raise ValueError("coefficients must lie strictly inside (-1, 1)")


def difference(series) -> np.ndarray:
    """Apply the lag-1 and lag-24 double difference.

    Output entry i equals x[i+25] - x[i+24] - x[i+1] + x[i]; the result is 25
    points shorter than the input.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < MIN_FORECAST_HISTORY:
        raise ValueError(f"series must have at least {MIN_FORECAST_HISTORY} points")
    k = SEASON + 1
    return x[k:] - x[k - 1 : -1] - x[1 : -SEASON] + x[:-k]


def _residuals(w: np.ndarray, theta: float, stheta: float) -> np.ndarray:
    """One-step residuals with pre-sample residuals set to zero."""
    n = len(w)
    pad = SEASON + 1
    eps = np.zeros(n + pad)
    cross = theta * stheta
    for i in range(n):
        j = i + pad
        eps[j] = w[i] - theta * eps[j - 1] - stheta * eps[j - SEASON] + cross * eps[j - pad]
    return eps[pad:]


def _css(w: np.ndarray, theta: float, stheta: float) -> float:
    eps = _residuals(w, theta, stheta)
    return float(eps @ eps)


def _golden_min(f, lo: float, hi: float, iters: int = 40) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit(history) -> SarimaParams:
    """Estimate the two coefficients by conditional sum of squares.

    Coarse grid search (step 0.05) followed by two golden-section refinement
    sweeps, one per axis.  A window whose double difference is identically
    zero has a flat objective and returns (0, 0) flagged as degenerate.
    """
    x = np.asarray(history, dtype=float)
    if len(x) < MIN_FIT_HISTORY:
        raise ValueError(f"fit window must have at least {MIN_FIT_HISTORY} points")
    w = difference(x)
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.max(np.abs(w)) <= 1e-12 * scale:
        return SarimaParams(0.0, 0.0, degenerate=True)

    grid = np.arange(-0.95, 0.951, _GRID_STEP)
    best = (np.inf, 0.0, 0.0)
    for theta in grid:
        for stheta in grid:
            val = _css(w, theta, stheta)
            if val < best[0]:
                best = (val, float(theta), float(stheta))
    _, theta, stheta = best

    for _ in range(2):
        lo = max(-_BOX, theta - _GRID_STEP)
        hi = min(_BOX, theta + _GRID_STEP)
        theta = _golden_min(lambda v: _css(w, v, stheta), lo, hi)
        lo = max(-_BOX, stheta - _GRID_STEP)
        hi = min(_BOX, stheta + _GRID_STEP)
        stheta = _golden_min(lambda v: _css(w, theta, v), lo, hi)
    return SarimaParams(theta, stheta)


def forecast_one_step(params: SarimaParams, history) -> float:
    """Predict the next value from fitted residuals; clamped at zero."""
    x = np.asarray(history, dtype=float)
    if len(x) < MIN_FORECAST_HISTORY:
        raise ValueError(f"history must have at least {MIN_FORECAST_HISTORY} points")
    w = difference(x)
    theta, stheta = params.theta, params.seasonal_theta
    pad = SEASON + 1
    eps = np.zeros(len(w) + pad)
    eps[pad:] = _residuals(w, theta, stheta)
    n = len(w) + pad
    w_next = (
        theta * eps[n - 1]
        + stheta * eps[n - SEASON]
        - theta * stheta * eps[n - pad]
    )
    pred = x[-1] + x[-SEASON] - x[-pad] + w_next
    return max(0.0, float(pred))


def mape(predictions, actuals) -> float:
    """Mean absolute percentage error; points with zero actual are excluded."""
    pred = np.asarray(predictions, dtype=float)
    act = np.asarray(actuals, dtype=float)
    if pred.shape != act.shape or len(pred) < 1:
        raise ValueError("predictions and actuals must be equal-length, nonempty")
    mask = act != 0
    if not np.any(mask):
        raise ValueError("all actual values are zero; MAPE undefined")
    return float(np.mean(np.abs(pred[mask] - act[mask]) / act[mask]) * 100.0)


def rolling_one_step(
    series,
    window_hours: int = 48,
    refit_every: int = 24,
):
    """Walk the series producing one-step forecasts from a sliding window.

    The window handed to the fitter holds ``window_hours + 1`` points (the
    extra point anchors the double difference).  Coefficients are refitted
    every ``refit_every`` steps and reused in between.

    Returns (predictions, actuals, start_index, n_degenerate_fits).
    """
    x = np.asarray(series, dtype=float)
    win = window_hours + 1
    if win < MIN_FIT_HISTORY:
        raise ValueError(f"window_hours must be at least {MIN_FIT_HISTORY - 1}")
    if len(x) <= win:
        raise ValueError("series too short for the requested window")
    preds, acts = [], []
    params = None
    degenerate = 0
    for t in range(win, len(x)):
        hist = x[t - win : t]
        if params is None or (t - win) % refit_every == 0:
            params = fit(hist)
            if params.degenerate:
                degenerate += 1
        preds.append(forecast_one_step(params, hist))
        acts.append(x[t])
    return np.asarray(preds), np.asarray(acts), win, degenerate
