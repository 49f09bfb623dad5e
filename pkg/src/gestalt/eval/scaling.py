"""Power-law fits L(x) = (C / x)^alpha and effective data/parameter multipliers."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import InputError


@dataclass
class ScalingFit:
    C: float
    alpha: float
    residual: float  # RMS error in log-loss
    n_points: int

    def predict(self, x):
        return (self.C / np.asarray(x, dtype=np.float64)) ** self.alpha

    def inverse(self, loss):
        """Resource needed to reach ``loss`` under this law: C * L^(-1/alpha)."""
        return self.C * np.asarray(loss, dtype=np.float64) ** (-1.0 / self.alpha)


def fit_power_law(points) -> ScalingFit:
    """Least squares on ln L = alpha * (ln C - ln x)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise InputError("need at least two (x, loss) points")
    x, loss = pts[:, 0], pts[:, 1]
    if np.any(x <= 0) or np.any(loss <= 0):
        raise InputError("x and loss must be positive")
    lx, ly = np.log(x), np.log(loss)
    if np.ptp(lx) == 0:
        raise InputError("all x values are equal; exponent is undetermined")
    A = np.stack([np.ones_like(lx), lx], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(A, ly, rcond=None)
    alpha = -slope
    if abs(alpha) < 1e-12:
        raise InputError("flat loss curve; scale constant is undetermined")
    C = math.exp(intercept / alpha)
    resid = float(np.sqrt(np.mean((ly - (intercept + slope * lx)) ** 2)))
    return ScalingFit(C, float(alpha), resid, len(pts))


def effective_multiplier(fit_ref: ScalingFit, achieved) -> np.ndarray:
    """m(x) = x_ref(L_other(x)) / x for each (x, loss_other) pair: how much more
    of x the reference model needs to match the other model's loss."""
    pts = np.asarray(achieved, dtype=np.float64).reshape(-1, 2)
    return fit_ref.inverse(pts[:, 1]) / pts[:, 0]


def fitted_multiplier(fit_ref: ScalingFit, fit_other: ScalingFit, xs) -> np.ndarray:
    """Multiplier when both models are represented by their fitted curves."""
    xs = np.asarray(xs, dtype=np.float64)
    return effective_multiplier(fit_ref, np.stack([xs, fit_other.predict(xs)], axis=1))


def ppl_to_nats(ppl):
    return np.log(np.asarray(ppl, dtype=np.float64))


def trend_slope(sizes, nll) -> float:
    """Slope of a least-squares line of NLL against ln(size)."""
    lx = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.asarray(nll, dtype=np.float64)
    if len(lx) < 2 or np.ptp(lx) == 0:
        raise InputError("need at least two distinct sizes")
    slope, _ = np.polyfit(lx, y, 1)
    return float(slope)


def read_points(path) -> list[tuple[float, float]]:
    """(x, loss) pairs from a CSV with an ``x,loss`` header (or two bare columns)."""
    rows = []
    with open(path, newline="") as f:
        for rec in csv.reader(f):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise InputError(f"{path}: non-numeric row {rec}")
    return rows
