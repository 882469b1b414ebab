"""
Variance estimation and inference: Sigma-hat, the two Omega-hat procedures,
quasi-score and Wald tests, marginal confidence intervals
PATH: aft/varinf.py
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.special import ndtri
from scipy.stats import chi2

import core
from core import (BadInput, NoSolutionEitherSide, NotConverged, SingularOmega,
                  SingularSigma, SingularXi, SolverError)
from simpleLogger import SimpleLogger
from aft.data import CensoredSample
from aft.rankest import (EstimatingContext, estimating_function, failure_weights,
                         psi, risk_averages)
from aft.solver import (SolveOutcome, SolverConfig, auto_bracket, find_crossing,
                        solve)

logger = SimpleLogger('varinf')

COND_LIMIT = 1e12


@dataclass
class SigmaHat:
    matrix: np.ndarray
    at_beta: np.ndarray


@dataclass
class OmegaHat:
    matrix: np.ndarray
    method: str
    diagnostics: Dict = field(default_factory=dict)


@dataclass
class TestResult:
    statistic: float
    df: int
    p_value: float
    kind: str
    null: Optional[np.ndarray] = None

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind,
            'null': None if self.null is None else np.asarray(self.null).tolist(),
            'statistic': self.statistic,
            'df': self.df,
            'p_value': self.p_value
        }


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _psd_clean(m: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp eigenvalues at zero"""
    m = _symmetrize(np.asarray(m, dtype=float))
    values, vectors = eigh(m)
    if values.min() < -1e-10 * max(1.0, abs(values).max()):
        logger.debug(f"Clamping negative eigenvalue {values.min():.3e}")
    values = np.clip(values, 0.0, None)
    return _symmetrize((vectors * values) @ vectors.T)


def _sqrtm(m: np.ndarray) -> np.ndarray:
    values, vectors = eigh(_symmetrize(m))
    return _symmetrize((vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T)


def sigma_hat(ctx: EstimatingContext) -> SigmaHat:
    """(1/n) sum over failures of w(E_i)^2 H(E_i), H the risk-set covariance"""
    ra = risk_averages(ctx, use_raw_delta=ctx.gehan)
    weights = ra.theta0 if ctx.gehan else failure_weights(ctx)
    matrix = np.einsum('i,ijk->jk', np.square(weights), ra.h) / ctx.n
    return SigmaHat(matrix=_psd_clean(matrix), at_beta=ctx.view.beta.copy())


def sigma_hat_wilcoxon(ctx: EstimatingContext) -> SigmaHat:
    """Closed form for the Wilcoxon score: (1/4n) sum Delta_i S(E_i-)^2 H(E_i)"""
    ra = risk_averages(ctx)
    survival_minus = 1.0 - ctx.f_minus_obs[ra.index]
    matrix = np.einsum('i,ijk->jk', np.square(survival_minus), ra.h) / (4.0 * ctx.n)
    return SigmaHat(matrix=_psd_clean(matrix), at_beta=ctx.view.beta.copy())


def sigma_at(sample: CensoredSample, score, beta) -> SigmaHat:
    return sigma_hat(EstimatingContext.build(sample, beta, score))


def quasi_score_statistic(psi_value: np.ndarray, sigma: np.ndarray, n: int,
                          null=None) -> TestResult:
    psi_value = np.asarray(psi_value, dtype=float)
    p = psi_value.shape[0]
    if not np.any(psi_value):
        return TestResult(statistic=0.0, df=p, p_value=1.0, kind='quasi_score', null=null)
    cond = np.linalg.cond(sigma)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSigma(f"Sigma-hat is singular (condition number {cond:.3e})",
                            condition=float(cond))
    statistic = float(psi_value @ np.linalg.solve(sigma, psi_value)) / n
    return TestResult(statistic=statistic, df=p, p_value=float(chi2.sf(statistic, p)),
                      kind='quasi_score', null=null)


def quasi_score_test(sample: CensoredSample, score, beta_null) -> TestResult:
    """n^-1 Psi(b0)' Sigma(b0)^-1 Psi(b0) against chi-square with p degrees of freedom"""
    beta_null = np.asarray(beta_null, dtype=float).reshape(-1)
    ctx = EstimatingContext.build(sample, beta_null, score)
    value = psi(sample, beta_null, score)
    sigma = sigma_hat(ctx)
    return quasi_score_statistic(value, sigma.matrix, sample.n, null=beta_null)


def _offset_solve(fn, beta_hat, n, config, target, bracket_init):
    try:
        return find_crossing(fn, beta_hat, n, config, target=target, bracket_init=bracket_init)
    except SolverError as e:
        logger.warning(f"Offset solve failed ({e.code}): {e}")
        return None


def huang_sandwich(fn: Callable, beta_hat, sigma: np.ndarray, n: int,
                   config: Optional[SolverConfig] = None, workers: int = 1,
                   bracket_init=None) -> OmegaHat:
    """
    Solve fn(beta) = +/- C_k for each column k of C = (Sigma/n)^(1/2).
    Column k of B is half the spread of the two solutions; Omega = n B B'.
    """
    config = config if config is not None else SolverConfig.from_config()
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    p = beta_hat.shape[0]
    root = _sqrtm(np.asarray(sigma, dtype=float) / n)

    jobs = [(k, sign) for k in range(p) for sign in (1.0, -1.0)]

    def run(job):
        k, sign = job
        return _offset_solve(fn, beta_hat, n, config, sign * root[:, k], bracket_init)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    b = np.empty((p, p))
    fallbacks: List[Dict] = []
    for k in range(p):
        upper, lower = results[2 * k], results[2 * k + 1]
        if upper is not None and lower is not None:
            b[:, k] = 0.5 * (upper.beta_hat - lower.beta_hat)
        elif lower is not None:
            b[:, k] = beta_hat - lower.beta_hat
            fallbacks.append({'column': k + 1, 'side': 'lower'})
        elif upper is not None:
            b[:, k] = upper.beta_hat - beta_hat
            fallbacks.append({'column': k + 1, 'side': 'upper'})
        else:
            raise NoSolutionEitherSide(f"Both offset solves failed for column {k + 1}",
                                       coordinate=k + 1)
    if fallbacks:
        logger.info(f"Huang one-sided fallbacks: {fallbacks}")

    matrix = _symmetrize(n * b @ b.T)
    return OmegaHat(matrix=matrix, method='huang',
                    diagnostics={'fallbacks': fallbacks, 'b': b.tolist()})


def omega_huang(sample: CensoredSample, score, fit: SolveOutcome, sigma: SigmaHat,
                config: Optional[SolverConfig] = None, workers: int = 1) -> OmegaHat:
    config = config if config is not None else SolverConfig.from_config()
    bracket = config.bracket_init if config.bracket_init is not None else auto_bracket(sample)
    return huang_sandwich(estimating_function(sample, score), fit.beta_hat, sigma.matrix,
                          sample.n, config, workers=workers, bracket_init=bracket)


def monte_carlo_sandwich(fn: Callable, beta_hat, sigma: np.ndarray, n: int, b_reps: int,
                         dz: np.ndarray, seed=None) -> OmegaHat:
    """
    Regress centred n^-1/2 Psi(beta_hat + Z/sqrt(n)) on centred Z ~ N(0, D_Z),
    then Omega = Xi^-1 Sigma Xi^-1 with Xi the symmetrized negative slope.
    """
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    p = beta_hat.shape[0]
    dz = np.asarray(dz, dtype=float)
    if dz.shape != (p, p):
        raise BadInput(f"D_Z must be {p}x{p}, got {dz.shape}")
    if b_reps < 10 * p:
        logger.warning(f"Only {b_reps} Monte Carlo replicates for p={p}; at least {10 * p} advised")

    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal(np.zeros(p), dz, size=int(b_reps), method='eigh')
    root_n = np.sqrt(n)
    values = np.array([root_n * np.asarray(fn(beta_hat + zb / root_n)) for zb in z])

    zc = z - z.mean(axis=0)
    pc = values - values.mean(axis=0)
    coef, _, rank, _ = np.linalg.lstsq(zc, pc, rcond=None)
    if rank < p:
        raise SingularXi(f"Monte Carlo design has rank {rank} < {p}", rank=int(rank),
                         r_squared=None)

    fitted = zc @ coef
    total = float(np.sum(pc ** 2))
    r_squared = 1.0 - float(np.sum((pc - fitted) ** 2)) / total if total > 0 else 0.0

    xi = _symmetrize(-coef.T)
    cond = np.linalg.cond(xi)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularXi(f"Xi-hat is singular (condition number {cond:.3e})",
                         r_squared=r_squared, condition=float(cond))
    xi_inv = np.linalg.inv(xi)
    matrix = _symmetrize(xi_inv @ np.asarray(sigma, dtype=float) @ xi_inv)
    return OmegaHat(matrix=matrix, method='monte_carlo',
                    diagnostics={'r_squared': r_squared, 'b_reps': int(b_reps), 'xi': xi.tolist()})


def omega_monte_carlo(sample: CensoredSample, score, fit: SolveOutcome, sigma: SigmaHat,
                      b_reps: int = 500, dz=None, seed=None) -> OmegaHat:
    dz = np.eye(sample.p) if dz is None else dz
    return monte_carlo_sandwich(estimating_function(sample, score), fit.beta_hat, sigma.matrix,
                                sample.n, b_reps, dz, seed)


def wald(fit: SolveOutcome, omega: OmegaHat, beta_null) -> TestResult:
    beta_null = np.asarray(beta_null, dtype=float).reshape(-1)
    diff = fit.beta_hat - beta_null
    p = diff.shape[0]
    if not np.any(diff):
        return TestResult(statistic=0.0, df=p, p_value=1.0, kind='wald', null=beta_null)
    cond = np.linalg.cond(omega.matrix)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularOmega(f"Omega-hat is singular (condition number {cond:.3e})",
                            condition=float(cond))
    statistic = float(fit.n * diff @ np.linalg.solve(omega.matrix, diff))
    return TestResult(statistic=statistic, df=p, p_value=float(chi2.sf(statistic, p)),
                      kind='wald', null=beta_null)


def ci(fit: SolveOutcome, omega: OmegaHat, level: float = 0.95) -> Dict:
    """Marginal intervals beta_k -/+ z * sqrt(Omega_kk / n)"""
    if not 0 < level < 1:
        raise BadInput(f"level must lie in (0, 1), got {level}")
    diag = np.diag(omega.matrix)
    if np.any(diag <= 0):
        raise SingularOmega("Omega-hat has a non-positive diagonal entry", diagonal=diag.tolist())
    half = float(ndtri(0.5 + 0.5 * level)) * np.sqrt(diag / fit.n)
    return {'level': level, 'lower': (fit.beta_hat - half).tolist(),
            'upper': (fit.beta_hat + half).tolist()}


def ci_grid(fit: SolveOutcome, omega: OmegaHat, levels: Sequence[float]) -> List[Dict]:
    return [ci(fit, omega, level) for level in levels]


@dataclass
class FitResult:
    sample: CensoredSample
    score: object
    outcome: SolveOutcome
    sigma: SigmaHat
    omega: Optional[OmegaHat]
    tests: List[TestResult]
    intervals: Optional[Dict]
    method: str

    def to_report(self) -> Dict:
        return core.to_jsonable({
            'beta_hat': self.outcome.beta_hat,
            'sigma_hat': self.sigma.matrix,
            'omega_hat': None if self.omega is None else self.omega.matrix,
            'method': self.method,
            'tests': [t.to_dict() for t in self.tests],
            'ci': self.intervals,
            'solver': self.outcome.to_dict(),
            'score': self.score.describe()
        })


def fit(sample: CensoredSample, score, solver_config: Optional[SolverConfig] = None,
        variance: str = 'huang', mc_reps: int = 500, dz: str = 'scale', seed=None,
        level: float = 0.95, nulls: Optional[Sequence] = None, workers: int = 1) -> FitResult:
    """Solve, then Sigma-hat at beta-hat, Omega-hat, tests at each null and marginal CIs"""
    if variance not in ('huang', 'mc'):
        raise BadInput(f"Unknown variance method '{variance}'", key='VARIANCE.method')
    if dz not in ('scale', 'identity'):
        raise BadInput(f"Unknown D_Z choice '{dz}'", key='VARIANCE.dz')
    config = solver_config if solver_config is not None else SolverConfig.from_config()

    outcome = solve(sample, score, config)
    sigma = sigma_hat(EstimatingContext.build(sample, outcome.beta_hat, score))

    omega = omega_huang(sample, score, outcome, sigma, config, workers=workers)
    method = 'huang'
    if variance == 'mc':
        dz_matrix = np.diag(np.diag(omega.matrix)) if dz == 'scale' else np.eye(sample.p)
        if dz == 'scale' and not np.all(np.diag(dz_matrix) > 0):
            logger.warning("Huang diagonal not positive; using identity D_Z")
            dz_matrix = np.eye(sample.p)
        omega = omega_monte_carlo(sample, score, outcome, sigma, mc_reps, dz_matrix, seed)
        omega.diagnostics['dz'] = dz
        method = 'monte_carlo'

    nulls = [np.zeros(sample.p)] if nulls is None else [np.asarray(b, dtype=float) for b in nulls]
    tests: List[TestResult] = []
    for null in nulls:
        tests.append(quasi_score_test(sample, score, null))
        tests.append(wald(outcome, omega, null))

    return FitResult(sample=sample, score=score, outcome=outcome, sigma=sigma, omega=omega,
                     tests=tests, intervals=ci(outcome, omega, level), method=method)


def fit_report_on_failure(error: NotConverged, score) -> Dict:
    """Partial report for a fit whose solver gave up; Sigma and Omega are left empty"""
    outcome = error.outcome
    return core.to_jsonable({
        'beta_hat': outcome.beta_hat,
        'sigma_hat': None,
        'omega_hat': None,
        'method': None,
        'tests': [],
        'ci': None,
        'solver': outcome.to_dict(),
        'score': score.describe()
    })
