"""
Zero-crossing solver for the step-function estimating equation:
cyclic coordinate sweeps, each coordinate bracketed and bisected
PATH: aft/solver.py
"""
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import median_abs_deviation

import core
from core import BadInput, NoBracket, NotConverged
from simpleLogger import SimpleLogger
from aft.data import CensoredSample
from aft.rankest import estimating_function
from aft.scores import GEHAN

logger = SimpleLogger('solver')


@dataclass
class SolverConfig:
    tol_psi: float = 1e-2
    max_sweeps: int = 50
    bracket_init: Optional[float] = None      # None: derived from the data
    bracket_grow: float = 2.0
    beta0: Optional[np.ndarray] = None
    xtol: float = 1e-8
    max_expand: int = 40
    tol_abs: Optional[float] = None
    init: str = 'zero'

    def __post_init__(self):
        if not self.tol_psi > 0:
            raise BadInput("tol_psi must be positive", key='SOLVER.tol')
        if int(self.max_sweeps) < 1:
            raise BadInput("max_sweeps must be at least 1", key='SOLVER.max_sweeps')
        if not self.bracket_grow > 1:
            raise BadInput("bracket_grow must exceed 1", key='SOLVER.bracket_grow')
        if self.bracket_init is not None and not np.all(np.asarray(self.bracket_init) > 0):
            raise BadInput("bracket_init must be positive", key='SOLVER.bracket_init')
        if not self.xtol > 0:
            raise BadInput("xtol must be positive", key='SOLVER.xtol')
        if self.init not in ('zero', 'gehan', 'vector'):
            raise BadInput(f"Unknown init '{self.init}'", key='SOLVER.init')
        if self.init == 'vector' and self.beta0 is None:
            raise BadInput("init = vector needs beta0", key='SOLVER.beta0')
        if self.beta0 is not None:
            self.beta0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        self.max_sweeps = int(self.max_sweeps)
        self.max_expand = int(self.max_expand)

    @classmethod
    def from_config(cls, **overrides) -> 'SolverConfig':
        settings = core.solver_settings()
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['beta0'] = None if self.beta0 is None else self.beta0.tolist()
        if isinstance(self.bracket_init, np.ndarray):
            out['bracket_init'] = self.bracket_init.tolist()
        return out


@dataclass
class SolveOutcome:
    beta_hat: np.ndarray
    psi_at_solution: np.ndarray
    sweeps_used: int
    converged: bool
    crossing_widths: np.ndarray
    n: int
    threshold: float = float('nan')
    scale: float = float('nan')
    jump_floor: float = 0.0
    evaluations: int = 0
    brackets: List[Tuple[float, float, float, float]] = field(default_factory=list)
    target: Optional[np.ndarray] = None

    def to_dict(self) -> Dict:
        return {
            'beta_hat': self.beta_hat.tolist(),
            'psi_at_solution': self.psi_at_solution.tolist(),
            'sweeps_used': self.sweeps_used,
            'converged': self.converged,
            'crossing_widths': self.crossing_widths.tolist(),
            'threshold': self.threshold,
            'scale': self.scale,
            'jump_floor': self.jump_floor,
            'evaluations': self.evaluations,
            'n': self.n
        }


class _Counter:
    """Wraps fn so every evaluation is counted, and optionally recorded"""

    def __init__(self, fn, target):
        self.fn = fn
        self.target = target
        self.calls = 0
        self.recorded: Optional[List[np.ndarray]] = []

    def __call__(self, beta):
        self.calls += 1
        value = np.asarray(self.fn(beta), dtype=float) - self.target
        if self.recorded is not None:
            self.recorded.append(value)
        return value


def _bracket(coord: Callable[[float], float], t0: float, g0: float, half: float,
             grow: float, max_expand: int, k: int):
    """Expand symmetrically around t0 until a segment shows a sign change; nearest one wins."""
    left = [(t0, g0)]
    right = [(t0, g0)]
    step = half
    for _ in range(max_expand + 1):
        tr, tl = t0 + step, t0 - step
        gr, gl = coord(tr), coord(tl)
        found = []
        inner_r = right[-1]
        if inner_r[1] * gr <= 0:
            found.append(('up', inner_r, (tr, gr)))
        inner_l = left[-1]
        if gl * inner_l[1] <= 0:
            found.append(('down', (tl, gl), inner_l))
        right.append((tr, gr))
        left.append((tl, gl))
        if found:
            def distance(item):
                _, (a, ga), (b, gb) = item
                root = a if ga == gb else a - ga * (b - a) / (gb - ga)
                # upper side wins exact ties
                return (abs(root - t0), 0 if item[0] == 'up' else 1)
            _, (lo, glo), (hi, ghi) = min(found, key=distance)
            return lo, hi, glo, ghi
        step *= grow

    pattern = ''.join('+' if g > 0 else '-' if g < 0 else '0'
                      for _, g in list(reversed(left))[:-1] + right)
    raise NoBracket(f"Component {k + 1} never changed sign within the expansion bound",
                    coordinate=k + 1, sign_pattern=pattern,
                    span=[left[-1][0], right[-1][0]])


def _bisect(coord: Callable[[float], float], lo: float, hi: float, glo: float, ghi: float,
            xtol: float):
    """Shrink [lo, hi] to width < xtol keeping opposite signs; stops early on an exact zero."""
    if glo == 0.0:
        return lo, lo, 0.0, 0.0
    if ghi == 0.0:
        return hi, hi, 0.0, 0.0
    while hi - lo >= xtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = coord(mid)
        if gm == 0.0:
            return mid, mid, 0.0, 0.0
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    return lo, hi, glo, ghi


def _polish(coord: Callable[[float], float], bracket) -> Optional[float]:
    """
    Bisect a final bracket down to adjacent floats. A step
    function can be zero at a single point only, e.g. where residuals tie.
    Returns that point when it is hit, else None.
    """
    lo, hi = bracket[0], bracket[1]
    if lo == hi:
        return None
    glo, ghi = coord(lo), coord(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if (glo > 0) == (ghi > 0):
        return None
    lo, hi, glo, ghi = _bisect(coord, lo, hi, glo, ghi, 0.0)
    return lo if glo == 0.0 and lo == hi else None


def find_crossing(fn: Callable[[np.ndarray], np.ndarray], beta0, n: int, config: SolverConfig,
                  target=None, bracket_init=None) -> SolveOutcome:
    """
    Locate a zero crossing of fn(beta) - target where fn returns n^-1 Psi_n(beta).
    Raises NoBracket when a coordinate shows no sign change, NotConverged after max_sweeps.
    """
    beta = np.array(beta0, dtype=float).reshape(-1)
    p = beta.shape[0]
    target = np.zeros(p) if target is None else np.asarray(target, dtype=float).reshape(-1)
    if target.shape[0] != p:
        raise BadInput(f"target has length {target.shape[0]}, expected {p}")

    if bracket_init is None:
        bracket_init = config.bracket_init if config.bracket_init is not None else 1.0
    half_init = np.broadcast_to(np.asarray(bracket_init, dtype=float), (p,)).copy()

    g = _Counter(fn, target)
    g_start = g(beta)
    last_move = np.zeros(p)
    scale = float('nan')
    outcome = None

    for sweep in range(1, config.max_sweeps + 1):
        start = beta.copy()
        brackets = []
        for k in range(p):
            def coord(t, k=k):
                trial = beta.copy()
                trial[k] = t
                return float(g(trial)[k])

            t0 = beta[k]
            g0 = coord(t0)
            if g0 == 0.0:
                brackets.append((t0, t0, 0.0, 0.0))
                continue
            half = half_init[k] if sweep == 1 else max(4.0 * abs(last_move[k]), 10.0 * config.xtol)
            lo, hi, glo, ghi = _bracket(coord, t0, g0, half, config.bracket_grow, config.max_expand, k)
            lo, hi, glo, ghi = _bisect(coord, lo, hi, glo, ghi, config.xtol)
            beta[k] = 0.5 * (lo + hi)
            brackets.append((lo, hi, glo, ghi))

        psi_now = g(beta)
        if sweep == 1:
            values = np.concatenate(g.recorded) if g.recorded else np.zeros(1)
            scale = float(median_abs_deviation(values)) if values.size > 1 else 0.0
            if not scale > 0:
                scale = float(np.max(np.abs(g_start)))
            g.recorded = None

        jump_floor = max((abs(b[3] - b[2]) for b in brackets), default=0.0)
        base = config.tol_abs if config.tol_abs is not None else config.tol_psi * scale / np.sqrt(n)
        threshold = max(base, jump_floor)
        norm = float(np.max(np.abs(psi_now)))
        if norm > 0.0 and (norm <= threshold or sweep == config.max_sweeps):
            polished = beta.copy()
            for k in range(p):
                def coord(t, k=k):
                    trial = polished.copy()
                    trial[k] = t
                    return float(g(trial)[k])

                exact = _polish(coord, brackets[k])
                if exact is not None:
                    polished[k] = exact
            psi_polished = g(polished)
            if float(np.max(np.abs(psi_polished))) < norm:
                beta, psi_now = polished, psi_polished
                norm = float(np.max(np.abs(psi_now)))
                logger.debug(f"sweep {sweep}: exact zero at {np.array2string(beta, precision=17)}")
        last_move = beta - start

        outcome = SolveOutcome(
            beta_hat=beta.copy(),
            psi_at_solution=psi_now + target,
            sweeps_used=sweep,
            converged=norm <= threshold,
            crossing_widths=np.array([b[1] - b[0] for b in brackets]),
            n=int(n),
            threshold=float(threshold),
            scale=scale,
            jump_floor=float(jump_floor),
            evaluations=g.calls,
            brackets=brackets,
            target=target.copy()
        )
        logger.debug(f"sweep {sweep}: beta={np.array2string(beta, precision=6)} "
                     f"|g|={norm:.3e} threshold={threshold:.3e}")
        if outcome.converged:
            logger.debug(f"converged after {sweep} sweeps, {g.calls} evaluations")
            return outcome

    logger.warning(f"No convergence after {config.max_sweeps} sweeps "
                   f"(|g|={np.max(np.abs(outcome.psi_at_solution - target)):.3e}, "
                   f"threshold={outcome.threshold:.3e})")
    raise NotConverged(f"No convergence after {config.max_sweeps} sweeps", outcome=outcome,
                       beta_hat=outcome.beta_hat.tolist())


def auto_bracket(sample: CensoredSample) -> np.ndarray:
    """0.5 * robust scale of y over the column scale of each covariate"""
    spread = float(median_abs_deviation(sample.y, scale='normal'))
    columns = sample.x.std(axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        half = 0.5 * spread / columns
    return np.where(np.isfinite(half) & (half > 0), half, 1.0)


def initial_beta(sample: CensoredSample, config: SolverConfig) -> np.ndarray:
    if config.init == 'vector':
        if config.beta0.shape[0] != sample.p:
            raise BadInput(f"beta0 has length {config.beta0.shape[0]}, expected {sample.p}",
                           key='SOLVER.beta0')
        return config.beta0.copy()
    if config.init == 'gehan':
        warm = solve_gehan(sample, replace(config, init='zero', beta0=None))
        logger.debug(f"Gehan warm start at {warm.beta_hat}")
        return warm.beta_hat
    return np.zeros(sample.p)


def solve(sample: CensoredSample, score, config: Optional[SolverConfig] = None) -> SolveOutcome:
    return solve_offset(sample, score, config, target=None)


def solve_offset(sample: CensoredSample, score, config: Optional[SolverConfig] = None,
                 target=None, start=None) -> SolveOutcome:
    """Crossing of n^-1 Psi_n(beta) - target; start overrides the configured starting point"""
    config = config if config is not None else SolverConfig.from_config()
    beta0 = initial_beta(sample, config) if start is None else np.asarray(start, dtype=float)
    bracket = config.bracket_init if config.bracket_init is not None else auto_bracket(sample)
    fn = estimating_function(sample, score)
    return find_crossing(fn, beta0, sample.n, config, target=target, bracket_init=bracket)


def solve_gehan(sample: CensoredSample, config: Optional[SolverConfig] = None) -> SolveOutcome:
    return solve(sample, GEHAN, config)
