"""Conformity scores, temporal weights, weighted quantiles and prediction intervals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("equal", "decay", "decay_squared", "decay_root")
_ALIASES = {"e": "equal", "d": "decay", "dsq": "decay_squared", "drt": "decay_root"}

# cumulative mass comparisons absorb this much floating-point slack
MASS_TOL = 1e-12


class DegenerateWeightsError(ValueError):
    pass


def conformity_score(q_lo, q_hi, y):
    """``max(q_lo - y, y - q_hi)``: negative inside the band, positive outside."""
    return np.maximum(np.asarray(q_lo) - y, np.asarray(y) - q_hi)


@dataclass(frozen=True)
class CalibrationSet:
    individual: np.ndarray
    decision_point: np.ndarray
    scores: np.ndarray
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not np.isfinite(self.scores).all():
            raise ValueError("calibration scores must be finite")


@dataclass(frozen=True)
class WeightScheme:
    """Fixed temporal weights ``psi ** f(|t - j|)`` plus the weight ``w_inf`` on the point at infinity."""

    kind: str = "decay"
    psi: float = 0.7
    w_inf: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.kind!r}; choose from {SCHEMES}")
        object.__setattr__(self, "kind", kind)
        if kind != "equal" and not 0 < self.psi < 1:
            raise ValueError("psi must be in (0, 1)")
        if not self.w_inf >= 0:
            raise ValueError("w_inf must be non-negative")

    def raw(self, target, points) -> np.ndarray:
        """Unnormalized weights of calibration points at decision points ``points`` for target ``target``."""
        gap = np.abs(np.asarray(points, dtype=float) - target)
        if self.kind == "equal":
            return np.ones_like(gap)
        if self.kind == "decay":
            return self.psi**gap
        if self.kind == "decay_squared":
            return self.psi ** (gap**2)
        return self.psi ** np.sqrt(gap)


def weights_for_target(scheme: WeightScheme, target: int, points):
    """Normalized weights for calibration points and the normalized point-mass weight at infinity."""
    if target < 1:
        raise ValueError("target decision point must be >= 1")
    w = scheme.raw(target, points)
    total = w.sum()
    if w.size and total == 0:
        raise DegenerateWeightsError(f"all calibration weights underflow to 0 for target {target}")
    denom = total + scheme.w_inf
    return w / denom, scheme.w_inf / denom


def weighted_quantile(scores, weights, w_inf, level):
    """Level-``level`` quantile of ``sum_k weights_k delta_{scores_k} + w_inf delta_{+inf}``.

    Returns the smallest score whose cumulative weight reaches ``level`` (ties
    pool their mass), or ``+inf`` when the finite scores carry too little mass.
    Weights need not be normalized; they are rescaled by their total with
    ``w_inf``.
    """
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum() + w_inf
    if scores.size == 0 or total <= 0:
        return np.inf
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    cum = np.cumsum(weights[order])
    need = level * total - MASS_TOL * total
    # only the last element of a run of ties holds the full pooled mass
    last = np.append(s[1:] != s[:-1], True)
    hit = np.flatnonzero(last & (cum >= need))
    return float(s[hit[0]]) if hit.size else np.inf


class WeightedCalibrator:
    """Calibration scores sorted once, for repeated weighted quantiles over many targets."""

    def __init__(self, points, scores):
        scores = np.asarray(scores, dtype=float)
        order = np.argsort(scores, kind="stable")
        self.scores = scores[order]
        self.points = np.asarray(points)[order]
        self.last = np.append(self.scores[1:] != self.scores[:-1], True)

    def quantile(self, scheme: WeightScheme, target: int, level: float, mask=None) -> float:
        """Weighted quantile for ``target``; ``mask`` (in sorted order) restricts usable scores."""
        w = scheme.raw(target, self.points)
        if mask is not None:
            w = np.where(mask, w, 0.0)
        tot = w.sum()
        if self.scores.size and tot == 0 and scheme.w_inf == 0:
            raise DegenerateWeightsError(f"no calibration weight for target {target}")
        total = tot + scheme.w_inf
        if total == 0:
            return np.inf
        cum = np.cumsum(w)
        hit = np.flatnonzero(self.last & (cum >= level * total - MASS_TOL * total))
        return float(self.scores[hit[0]]) if hit.size else np.inf


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    q_hat: float

    @property
    def unbounded(self) -> bool:
        return bool(np.isposinf(self.q_hat))

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __contains__(self, y) -> bool:
        return bool(self.lower <= y <= self.upper)


def build_interval(q_lo, q_hi, q_hat) -> PredictionInterval:
    """``[q_lo - q_hat, q_hi + q_hat]``; an infinite margin gives the whole real line.

    A negative margin wider than half the band would invert the endpoints;
    such intervals collapse to the band midpoint.
    """
    lower, upper = build_intervals(q_lo, q_hi, q_hat)
    return PredictionInterval(float(lower), float(upper), float(q_hat))


def build_intervals(q_lo, q_hi, q_hat):
    """Vectorized :func:`build_interval`; returns (lower, upper)."""
    q_hat = np.asarray(q_hat, dtype=float)
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    inf = np.isposinf(q_hat)
    with np.errstate(invalid="ignore"):
        lower = np.where(inf, -np.inf, q_lo - q_hat)
        upper = np.where(inf, np.inf, q_hi + q_hat)
    flip = lower > upper
    if np.any(flip):
        mid = 0.5 * (q_lo + q_hi)
        lower = np.where(flip, mid, lower)
        upper = np.where(flip, mid, upper)
    return lower, upper
