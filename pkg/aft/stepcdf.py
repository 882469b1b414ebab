"""
Proper step CDFs, the self-consistent residual estimator and the
jump-aware score functionals built on it
PATH: aft/stepcdf.py
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from core import DegenerateSample
from simpleLogger import SimpleLogger

logger = SimpleLogger('stepcdf')


@dataclass(frozen=True)
class MidCdfValue:
    f: float
    f_minus: float
    mid: float


@dataclass(frozen=True)
class StepCdf:
    """Sorted jump points with cumulative mass; cum[-1] == 1 for a proper CDF"""
    points: np.ndarray
    cum: np.ndarray

    @property
    def total(self) -> float:
        return float(self.cum[-1]) if self.cum.size else 0.0

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.cum, prepend=0.0)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_masses(cls, points, masses) -> 'StepCdf':
        """Proper CDF from positive masses (normalized to one)"""
        points = np.asarray(points, dtype=float)
        masses = np.asarray(masses, dtype=float)
        order = np.argsort(points, kind='stable')
        points, masses = points[order], masses[order]
        if np.any(np.diff(points) <= 0):
            raise ValueError("Jump points must be distinct")
        if np.any(masses <= 0):
            raise ValueError("Masses must be positive")
        cum = np.cumsum(masses / masses.sum())
        cum = np.minimum(cum, 1.0)
        cum[-1] = 1.0
        return cls(points=points, cum=cum)

    def values(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized (F(t), F(t-)) for an array of t"""
        t = np.asarray(t, dtype=float)
        padded = np.concatenate(([0.0], self.cum))
        f = padded[np.searchsorted(self.points, t, side='right')]
        f_minus = padded[np.searchsorted(self.points, t, side='left')]
        return f, f_minus

    def survival(self, t):
        f, _ = self.values(t)
        return 1.0 - f


def self_consistent(view) -> StepCdf:
    """
    Kaplan-Meier on (e, delta_mod). Censored residuals tied with failures stay
    in the risk set at that value. Proper because the largest residual is a failure.
    """
    e = view.e
    delta = view.delta_mod
    n = e.shape[0]
    if not np.any(delta):
        raise DegenerateSample("No failures after the last-observation rule")

    values, inverse = np.unique(e, return_inverse=True)
    counts = np.bincount(inverse)
    deaths = np.bincount(inverse, weights=delta.astype(float))
    at_risk = n - np.concatenate(([0], np.cumsum(counts)[:-1]))

    surv = np.cumprod(1.0 - deaths / at_risk)
    surv = np.maximum(surv, 0.0)

    mask = deaths > 0
    cum = np.minimum(1.0 - surv[mask], 1.0)
    return StepCdf(points=values[mask], cum=cum)


def eval(cdf: StepCdf, t: float) -> MidCdfValue:  # noqa: A001
    f, f_minus = cdf.values(np.array([t]))
    f, f_minus = float(f[0]), float(f_minus[0])
    return MidCdfValue(f=f, f_minus=f_minus, mid=0.5 * (f + f_minus))


def gamma_a(cdf: StepCdf, t: float, score) -> float:
    """A-difference quotient across the jump at t; a(F(t)) at a continuity point"""
    f, f_minus = cdf.values(np.array([t]))
    return float(score.jump_quotient(f, f_minus)[0])


def big_gamma_a(cdf: StepCdf, t: float, score) -> float:
    """[A(1) - A(F(t))]/[1 - F(t)], or a(1) once F(t) reaches 1"""
    f, _ = cdf.values(np.array([t]))
    return float(score.tail_mean(f)[0])


def stieltjes_gamma_integral(cdf: StepCdf, t: float, score) -> float:
    """Sum of gamma_a * jump over the jumps strictly above t"""
    above = cdf.points > t
    if not np.any(above):
        return 0.0
    hi = cdf.cum[above]
    lo = np.concatenate(([0.0], cdf.cum))[:-1][above]
    return float(np.sum(score.jump_quotient(hi, lo) * (hi - lo)))


def implicit_mid_cdf(cdf: StepCdf, t: float, score) -> Optional[float]:
    """
    Generalized mid-CDF: the u in [F(t-), F(t)] with a(u) equal to gamma_a.
    Needs a strictly monotone score across the jump; otherwise None.
    """
    value = eval(cdf, t)
    if value.f == value.f_minus:
        return value.f
    target = gamma_a(cdf, t, score)
    lo_gap = float(score.a(np.array([value.f_minus]))[0]) - target
    hi_gap = float(score.a(np.array([value.f]))[0]) - target
    if lo_gap == 0.0:
        return value.f_minus
    if hi_gap == 0.0:
        return value.f
    if lo_gap * hi_gap > 0:
        logger.debug(f"No sign change for implicit mid-CDF at t={t}")
        return None
    return brentq(lambda u: float(score.a(np.array([u]))[0]) - target,
                  value.f_minus, value.f, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def approx_gamma_a(cdf: StepCdf, t: float, score, h: float = 1e-4) -> float:
    """Second-order expansion a(H*) + a''(H*) * jump^2 / 24 of gamma_a"""
    value = eval(cdf, t)
    jump = value.f - value.f_minus
    mid = value.mid
    a_mid = float(score.a(np.array([mid]))[0])
    if jump == 0.0:
        return a_mid
    lo, hi = max(mid - h, 0.0), min(mid + h, 1.0)
    centre = 0.5 * (lo + hi)
    step = 0.5 * (hi - lo)
    a_vals = score.a(np.array([lo, centre, hi]))
    second = (a_vals[2] - 2.0 * a_vals[1] + a_vals[0]) / step ** 2
    return a_mid + float(second) * jump ** 2 / 24.0


def to_frame(cdf: StepCdf) -> pd.DataFrame:
    """(t, F_minus, F, mid) at each jump, for the km dump"""
    f_minus = np.concatenate(([0.0], cdf.cum[:-1]))
    return pd.DataFrame({
        't': cdf.points,
        'F_minus': f_minus,
        'F': cdf.cum,
        'mid': 0.5 * (cdf.cum + f_minus)
    })
