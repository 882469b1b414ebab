"""
Score functions a(u) on [0, 1] with antiderivatives A(u), A(0) = 0
PATH: aft/scores.py
"""
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.special import betaincinv, betaln, ndtri

from core import BadAlpha, BadInput, BadShape
from simpleLogger import SimpleLogger

logger = SimpleLogger('scores')

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _phi(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


class ScoreFunction:
    """
    Base score. Subclasses supply a() and A(); everything else is derived.
    All methods accept scalars or arrays and return arrays.
    """
    kind = 'score'

    def __init__(self, label: Optional[str] = None, params: Optional[Dict] = None,
                 monotone: bool = True):
        self.label = label or self.kind
        self.params = params or {}
        self.monotone = monotone

    def a(self, u) -> np.ndarray:
        raise NotImplementedError

    def A(self, u) -> np.ndarray:
        raise NotImplementedError

    @property
    def bounds(self) -> Tuple[float, float]:
        ends = self.a(np.array([0.0, 1.0]))
        return float(ends[0]), float(ends[1])

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.bounds)))

    @property
    def total(self) -> float:
        """A(1) - A(0)"""
        ends = self.A(np.array([0.0, 1.0]))
        return float(ends[1] - ends[0])

    def jump_quotient(self, hi, lo) -> np.ndarray:
        """[A(hi) - A(lo)]/(hi - lo), falling back to a(hi) when hi == lo"""
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        width = hi - lo
        flat = width <= 0
        out = np.empty_like(hi)
        if np.any(flat):
            out[flat] = self.a(hi[flat])
        if np.any(~flat):
            out[~flat] = (self.A(hi[~flat]) - self.A(lo[~flat])) / width[~flat]
        return out

    def tail_mean(self, f) -> np.ndarray:
        """[A(1) - A(f)]/(1 - f), equal to a(1) once f reaches 1"""
        f = np.atleast_1d(np.asarray(f, dtype=float))
        full = f >= 1.0
        out = np.empty_like(f)
        if np.any(full):
            out[full] = self.a(np.ones(int(full.sum())))
        if np.any(~full):
            a_one = self.A(np.array([1.0]))[0]
            out[~full] = (a_one - self.A(f[~full])) / (1.0 - f[~full])
        return out

    def describe(self) -> Dict:
        lo, hi = self.bounds
        return {'kind': self.kind, 'label': self.label, 'params': dict(self.params),
                'bounds': [lo, hi]}

    def __repr__(self) -> str:
        args = ','.join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind}({args})"


class WilcoxonScore(ScoreFunction):
    kind = 'wilcoxon'

    def a(self, u):
        return np.asarray(u, dtype=float).copy()

    def A(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * u * u

    def jump_quotient(self, hi, lo):
        # the mid-CDF, exactly
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        return 0.5 * (hi + lo)

    def tail_mean(self, f):
        f = np.atleast_1d(np.asarray(f, dtype=float))
        return 0.5 * (1.0 + f)


class LogrankScore(ScoreFunction):
    """a(u) = -1 - log(1 - c u); c = n/(n+1) keeps it bounded, c = 1 is the raw logrank score"""
    kind = 'shifted_logrank'

    def __init__(self, c: float, label=None, params=None):
        super().__init__(label=label, params=params)
        self.c = float(c)

    def a(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide='ignore'):
            return -1.0 - np.log1p(-self.c * u)

    def A(self, u):
        u = np.asarray(u, dtype=float)
        cu = self.c * u
        v = 1.0 - cu
        with np.errstate(divide='ignore', invalid='ignore'):
            vlogv = np.where(v > 0, v * np.log1p(-cu), 0.0)
        return -u + (vlogv + cu) / self.c


class GeneralizedFScore(ScoreFunction):
    """
    Log-F(2 m1, 2 m2) score. Writing x for the Beta(m1, m2) quantile of u,
    the F quantile is (m2/m1) x/(1-x), which reduces the score to
    a(u) = (m1 + m2) x - m1 and the antiderivative to -x^m1 (1-x)^m2 / B(m1, m2).
    """
    kind = 'generalized_f'

    def __init__(self, m1: float, m2: float, label=None):
        super().__init__(label=label, params={'m1': m1, 'm2': m2})
        self.m1 = float(m1)
        self.m2 = float(m2)
        self._log_beta = betaln(self.m1, self.m2)

    def _quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.m1 == 1.0 and self.m2 == 1.0:
            x = np.clip(u, 0.0, 1.0)
        else:
            x = betaincinv(self.m1, self.m2, np.clip(u, 0.0, 1.0))
        # analytic limits at the boundary
        x = np.where(u <= 0.0, 0.0, x)
        return np.where(u >= 1.0, 1.0, x)

    def a(self, u):
        x = self._quantile(u)
        return (self.m1 + self.m2) * x - self.m1

    def A(self, u):
        x = self._quantile(u)
        interior = (x > 0.0) & (x < 1.0)
        safe = np.where(interior, x, 0.5)
        log_density = self.m1 * np.log(safe) + self.m2 * np.log1p(-safe) - self._log_beta
        return np.where(interior, -np.exp(log_density), 0.0)


class NormalScore(ScoreFunction):
    """Raw van der Waerden score Phi^-1(u); unbounded, only useful through truncated()"""
    kind = 'normal'

    def a(self, u):
        return ndtri(np.asarray(u, dtype=float))

    def A(self, u):
        return -_phi(ndtri(np.asarray(u, dtype=float)))


class WinsorizedNormalScore(ScoreFunction):
    kind = 'winsorized_normal'

    def __init__(self, alpha: float, label=None):
        super().__init__(label=label, params={'alpha': alpha})
        self.alpha = float(alpha)
        self.z = float(-ndtri(self.alpha))

    def a(self, u):
        u = np.asarray(u, dtype=float)
        return ndtri(np.clip(u, self.alpha, 1.0 - self.alpha))

    def A(self, u):
        u = np.asarray(u, dtype=float)
        q = ndtri(np.clip(u, self.alpha, 1.0 - self.alpha))
        lower = -self.z * np.minimum(u, self.alpha)
        upper = self.z * np.maximum(u - (1.0 - self.alpha), 0.0)
        return lower + (_phi(self.z) - _phi(q)) + upper


class TruncatedScore(ScoreFunction):
    """base.a composed with u -> (n u + shift)/(n + 1); A by change of variable"""
    kind = 'truncated'

    def __init__(self, base: ScoreFunction, n: int, mode: str, label=None):
        super().__init__(label=label, params={'base': base.kind, 'n': n, 'mode': mode},
                         monotone=base.monotone)
        self.base = base
        self.n = int(n)
        self.shift = 0.5 if mode == 'normal' else 0.0
        self._A0 = float(base.A(np.array([self._map(0.0)]))[0])

    def _map(self, u):
        return (self.n * np.asarray(u, dtype=float) + self.shift) / (self.n + 1)

    def a(self, u):
        return self.base.a(self._map(u))

    def A(self, u):
        return (self.n + 1) / self.n * (self.base.A(self._map(u)) - self._A0)


class CustomScore(ScoreFunction):
    """User score; A falls back to cached adaptive quadrature when not supplied"""
    kind = 'custom'

    def __init__(self, a_fn: Callable, A_fn: Optional[Callable] = None,
                 label=None, monotone: bool = True):
        super().__init__(label=label or 'custom', params={}, monotone=monotone)
        self._a_fn = a_fn
        self._A_fn = A_fn
        self._cached_integral = lru_cache(maxsize=65536)(self._integral)

    def _integral(self, upper: float) -> float:
        value, _ = quad(lambda s: float(self._a_fn(s)), 0.0, upper,
                        epsabs=1e-12, epsrel=1e-12, limit=200)
        return value

    def a(self, u):
        u = np.asarray(u, dtype=float)
        return np.asarray(np.vectorize(lambda s: float(self._a_fn(s)))(u), dtype=float)

    def A(self, u):
        u = np.asarray(u, dtype=float)
        if self._A_fn is not None:
            return np.asarray(self._A_fn(u), dtype=float) - float(np.asarray(self._A_fn(0.0)))
        return np.asarray(np.vectorize(lambda s: self._cached_integral(float(s)))(u), dtype=float)


class ScaledScore(ScoreFunction):
    """c1 * base + c2, with A -> c1 A + c2 u"""
    kind = 'scaled'

    def __init__(self, base: ScoreFunction, c1: float, c2: float = 0.0, label=None):
        super().__init__(label=label or f"{base.label}*{c1}+{c2}",
                         params={'base': base.kind, 'c1': c1, 'c2': c2}, monotone=base.monotone)
        self.base = base
        self.c1 = float(c1)
        self.c2 = float(c2)

    def a(self, u):
        return self.c1 * self.base.a(u) + self.c2

    def A(self, u):
        return self.c1 * self.base.A(u) + self.c2 * np.asarray(u, dtype=float)

    def jump_quotient(self, hi, lo):
        return self.c1 * self.base.jump_quotient(hi, lo) + self.c2

    def tail_mean(self, f):
        return self.c1 * self.base.tail_mean(f) + self.c2


class GehanMarker:
    """Selects the Gehan / Fygenson-Ritov comparator in place of a score"""
    kind = 'gehan'
    label = 'gehan'
    bounded = True

    def describe(self) -> Dict:
        return {'kind': 'gehan', 'label': 'gehan', 'params': {}}

    def __repr__(self) -> str:
        return 'gehan()'


GEHAN = GehanMarker()


def is_gehan(score) -> bool:
    return score is None or isinstance(score, GehanMarker)


def wilcoxon() -> ScoreFunction:
    return WilcoxonScore(label='wilcoxon')


def shifted_logrank(n: int) -> ScoreFunction:
    if int(n) < 1:
        raise BadInput(f"shifted logrank needs n >= 1, got {n}")
    n = int(n)
    return LogrankScore(n / (n + 1.0), label='logrank', params={'n': n})


def logrank() -> ScoreFunction:
    score = LogrankScore(1.0, label='logrank_raw')
    score.kind = 'logrank'
    return score


def normal() -> ScoreFunction:
    return NormalScore(label='normal_raw')


def generalized_f(m1: float, m2: float) -> ScoreFunction:
    try:
        m1, m2 = float(m1), float(m2)
    except (TypeError, ValueError):
        raise BadShape(f"Shape parameters must be numbers: m1={m1}, m2={m2}")
    if not (np.isfinite(m1) and np.isfinite(m2) and m1 > 0 and m2 > 0):
        raise BadShape(f"Shape parameters must be finite and positive: m1={m1}, m2={m2}")
    return GeneralizedFScore(m1, m2, label=f"genf({m1:g},{m2:g})")


def winsorized_normal(alpha: float) -> ScoreFunction:
    alpha = float(alpha)
    if not 0.0 < alpha <= 0.5:
        raise BadAlpha(f"alpha must lie in (0, 1/2], got {alpha}")
    return WinsorizedNormalScore(alpha, label=f"normal({alpha:g})")


def truncated(score: ScoreFunction, n: int, mode: str = 'normal') -> ScoreFunction:
    if mode not in ('normal', 'extreme'):
        raise BadInput(f"Unknown truncation mode '{mode}'")
    if int(n) < 1:
        raise BadInput(f"truncation needs n >= 1, got {n}")
    return TruncatedScore(score, int(n), mode, label=f"{score.label}[{mode},{int(n)}]")


def custom(a: Callable, A: Optional[Callable] = None, label: str = 'custom',
           monotone: bool = True) -> ScoreFunction:
    return CustomScore(a, A, label=label, monotone=monotone)


def scaled(score: ScoreFunction, c1: float, c2: float = 0.0) -> ScoreFunction:
    return ScaledScore(score, c1, c2)


BUILTIN_NAMES = ('wilcoxon', 'logrank', 'normal', 'genf', 'gehan')


def _parse_params(text: str, spec: str) -> Dict[str, float]:
    params = {}
    for item in filter(None, (part.strip() for part in text.split(','))):
        if '=' not in item:
            raise BadInput(f"Bad score parameter '{item}' in '{spec}'")
        key, value = (s.strip() for s in item.split('=', 1))
        try:
            params[key] = float(value)
        except ValueError:
            raise BadInput(f"Score parameter {key} must be numeric in '{spec}'")
    return params


def parse_score(spec: str, n: Optional[int] = None):
    """wilcoxon | logrank | normal:alpha=<a> | genf:m1=<m1>,m2=<m2> | gehan"""
    name, _, rest = spec.strip().partition(':')
    name = name.strip().lower()
    params = _parse_params(rest, spec)

    if name == 'wilcoxon':
        return wilcoxon()
    if name == 'gehan':
        return GEHAN
    if name == 'logrank':
        size = int(params.get('n', n if n is not None else 0))
        if size < 1:
            raise BadInput("logrank needs the sample size n")
        return shifted_logrank(size)
    if name == 'normal':
        if 'alpha' not in params:
            raise BadInput(f"normal score needs alpha, e.g. normal:alpha=0.05 (got '{spec}')")
        return winsorized_normal(params['alpha'])
    if name == 'genf':
        if 'm1' not in params or 'm2' not in params:
            raise BadShape(f"genf needs m1 and m2, e.g. genf:m1=1,m2=10 (got '{spec}')")
        return generalized_f(params['m1'], params['m2'])
    raise BadInput(f"Unknown score '{spec}'; expected one of {', '.join(BUILTIN_NAMES)}")
