"""Small regression helpers for decay rates and envelopes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogLinearFit:
    rate: float  # decay rate: log y ~ intercept - rate * t
    intercept: float
    r2: float
    n: int

    @property
    def prefactor(self) -> float:
        return float(np.exp(self.intercept))


def loglinear_fit(t, y, floor: float = 0.0) -> LogLinearFit:
    """Least squares fit of ``log y`` against ``t``; points with ``y <= floor`` are dropped."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > max(floor, 0.0)
    t, ly = t[keep], np.log(y[keep])
    if t.size < 3:
        raise ValueError("fewer than three usable points for a log-linear fit")
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return LogLinearFit(float(-slope), float(intercept), float(r2), int(t.size))


def loglog_slope(x, y) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(slope)


@dataclass(frozen=True)
class Envelope:
    """Pointwise bound ``y(t) <= scale * shape(t)`` fitted on a window."""

    scale: float
    rate: float
    fit_window: tuple
    worst_ratio_outside: float  # max y/bound beyond the fit window (<= 1 means it held)


def exponential_envelope(t, y, rate: float, shape=None, fit_until: float | None = None,
                         check_until: float | None = None) -> Envelope:
    """Smallest ``C`` with ``y <= C shape(t) e^{-rate t}`` on ``[0, fit_until]``.

    The bound is then checked out of sample on ``(fit_until, check_until]``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    base = np.exp(-rate * t) * (1.0 if shape is None else np.asarray(shape, dtype=float))
    fit_until = t[-1] / 2 if fit_until is None else fit_until
    check_until = t[-1] if check_until is None else check_until
    inside = t <= fit_until
    outside = (t > fit_until) & (t <= check_until)
    scale = float(np.max(y[inside] / base[inside]))
    worst = float(np.max(y[outside] / (scale * base[outside]))) if outside.any() else 0.0
    return Envelope(scale, float(rate), (0.0, float(fit_until)), worst)
