"""
Imputed ranks and the R-estimating function in rank and weighted-logrank
form, plus the Gehan comparator
PATH: aft/rankest.py
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from core import BadInput
from simpleLogger import SimpleLogger
from aft.data import CensoredSample, ResidualView, residuals
from aft.scores import GEHAN, ScoreFunction, is_gehan, wilcoxon
from aft.stepcdf import StepCdf, self_consistent

logger = SimpleLogger('rankest')


@dataclass(frozen=True)
class EstimatingContext:
    """Everything evaluated at one beta: residuals, self-consistent CDF and per-observation CDF values"""
    sample: CensoredSample
    view: ResidualView
    cdf: StepCdf
    score: object
    xbar: np.ndarray
    f_obs: np.ndarray
    f_minus_obs: np.ndarray

    @classmethod
    def build(cls, sample: CensoredSample, beta, score=None) -> 'EstimatingContext':
        if score is None:
            score = GEHAN
        if not is_gehan(score) and not score.bounded:
            raise BadInput(f"Score {score.label} is unbounded; wrap it with truncated()")
        view = residuals(sample, beta)
        cdf = self_consistent(view)
        f_obs, f_minus_obs = cdf.values(view.e)
        return cls(sample=sample, view=view, cdf=cdf, score=score,
                   xbar=sample.x.mean(axis=0), f_obs=f_obs, f_minus_obs=f_minus_obs)

    @property
    def n(self) -> int:
        return self.sample.n

    @property
    def gehan(self) -> bool:
        return is_gehan(self.score)


@dataclass(frozen=True)
class RiskAverages:
    """Risk-set moments at each failure observation (rows aligned with index)"""
    index: np.ndarray
    theta0: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    xbar_at: np.ndarray
    h: np.ndarray


def risk_averages(ctx: EstimatingContext, use_raw_delta: bool = False) -> RiskAverages:
    view = ctx.view
    n = ctx.n
    delta = view.delta if use_raw_delta else view.delta_mod
    index = np.flatnonzero(delta)

    # centred covariates keep theta2 - theta1^2/theta0 well conditioned
    xc = ctx.sample.x - ctx.xbar
    xs = xc[view.order]
    e_sorted = view.e[view.order]
    suffix1 = np.cumsum(xs[::-1], axis=0)[::-1]
    suffix2 = np.cumsum(np.einsum('ij,ik->ijk', xs, xs)[::-1], axis=0)[::-1]

    first = np.searchsorted(e_sorted, view.e[index], side='left')
    count = (n - first).astype(float)
    s1 = suffix1[first]
    s2 = suffix2[first]

    mean_c = s1 / count[:, None]
    h = s2 / count[:, None, None] - np.einsum('ij,ik->ijk', mean_c, mean_c)
    h = 0.5 * (h + np.transpose(h, (0, 2, 1)))

    theta0 = count / n
    theta1 = s1 / n + theta0[:, None] * ctx.xbar
    theta2 = (s2 + np.einsum('ij,k->ijk', s1, ctx.xbar) + np.einsum('j,ik->ijk', ctx.xbar, s1)) / n \
        + theta0[:, None, None] * np.outer(ctx.xbar, ctx.xbar)
    return RiskAverages(index=index, theta0=theta0, theta1=theta1, theta2=theta2,
                        xbar_at=mean_c + ctx.xbar, h=h)


def imputed_ranks(ctx: EstimatingContext) -> np.ndarray:
    """Failures: gamma_a across their own jump. Censored: tail mean Gamma_a past the residual."""
    score = ctx.score
    if ctx.gehan:
        raise BadInput("Imputed ranks need a score function, not the Gehan comparator")
    at_failure = score.jump_quotient(ctx.f_obs, ctx.f_minus_obs)
    at_censoring = score.tail_mean(ctx.f_obs)
    return np.where(ctx.view.delta_mod == 1, at_failure, at_censoring)


def psi_rank_form(ctx: EstimatingContext) -> np.ndarray:
    ranks = imputed_ranks(ctx)
    return ranks @ (ctx.sample.x - ctx.xbar)


def psi_centered_form(ctx: EstimatingContext) -> np.ndarray:
    """Sum of (R_i - (A(1) - A(0))) x_i; equal to the rank form because the ranks sum to n(A(1) - A(0))"""
    ranks = imputed_ranks(ctx)
    return (ranks - ctx.score.total) @ ctx.sample.x


def rank_sum_gap(ctx: EstimatingContext) -> float:
    return float(abs(imputed_ranks(ctx).sum() - ctx.n * ctx.score.total))


def check_rank_sum(ctx: EstimatingContext, tol: float = 1e-10) -> None:
    gap = rank_sum_gap(ctx)
    if gap > tol * ctx.n:
        logger.error(f"Rank-sum conservation violated: gap={gap:.3e} n={ctx.n} score={ctx.score.label}")
        raise AssertionError(f"rank sum off by {gap:.3e}")


def exact_weight(ctx: EstimatingContext, u: float) -> float:
    f, f_minus = ctx.cdf.values(np.array([u]))
    score = ctx.score
    return float(score.jump_quotient(f, f_minus)[0] - score.tail_mean(f)[0])


def failure_weights(ctx: EstimatingContext) -> np.ndarray:
    """Weights at each failure observation: exact score weight, or Y+(u)/n for Gehan"""
    view = ctx.view
    if ctx.gehan:
        index = np.flatnonzero(view.delta)
        e_sorted = view.e[view.order]
        first = np.searchsorted(e_sorted, view.e[index], side='left')
        return (ctx.n - first) / ctx.n
    index = np.flatnonzero(view.delta_mod)
    f, f_minus = ctx.f_obs[index], ctx.f_minus_obs[index]
    return ctx.score.jump_quotient(f, f_minus) - ctx.score.tail_mean(f)


def psi_wlr_form(ctx: EstimatingContext) -> np.ndarray:
    """Weighted-logrank form: sum over failures of w(E_i) (x_i - Xbar(E_i))"""
    if ctx.gehan:
        return psi_gehan(ctx)
    ra = risk_averages(ctx)
    weights = failure_weights(ctx)
    return weights @ (ctx.sample.x[ra.index] - ra.xbar_at)


def psi_gehan(ctx: EstimatingContext) -> np.ndarray:
    """Gehan weight Y+(u)/n on the observed (raw) failure indicators"""
    ra = risk_averages(ctx, use_raw_delta=True)
    weights = ra.theta0
    return weights @ (ctx.sample.x[ra.index] - ra.xbar_at)


def psi_gehan_pairwise(ctx: EstimatingContext) -> np.ndarray:
    """O(n^2) oracle: (1/n) sum_i (D_i+ - D_+i)(x_i - xbar), D_ij = delta_i 1{e_i < e_j}"""
    e = ctx.view.e
    delta = ctx.view.delta.astype(float)
    d = delta[:, None] * (e[:, None] < e[None, :])
    return (d.sum(axis=1) - d.sum(axis=0)) @ (ctx.sample.x - ctx.xbar) / ctx.n


def alternative_weight(ctx: EstimatingContext, u: float) -> float:
    """a(F*(u)) - Gamma_a(u): mid-CDF plugged straight into a"""
    f, f_minus = ctx.cdf.values(np.array([u]))
    score = ctx.score
    return float(score.a(0.5 * (f + f_minus))[0] - score.tail_mean(f)[0])


def psi_alternative(ctx: EstimatingContext) -> np.ndarray:
    ra = risk_averages(ctx)
    f, f_minus = ctx.f_obs[ra.index], ctx.f_minus_obs[ra.index]
    weights = ctx.score.a(0.5 * (f + f_minus)) - ctx.score.tail_mean(f)
    return weights @ (ctx.sample.x[ra.index] - ra.xbar_at)


def psi(sample: CensoredSample, beta, score=None, form: str = 'wlr') -> np.ndarray:
    ctx = EstimatingContext.build(sample, beta, score)
    if ctx.gehan:
        return psi_gehan(ctx)
    if form == 'rank':
        return psi_rank_form(ctx)
    if form == 'wlr':
        return psi_wlr_form(ctx)
    raise BadInput(f"Unknown form '{form}'; expected wlr or rank")


def estimating_function(sample: CensoredSample, score=None) -> Callable[[np.ndarray], np.ndarray]:
    """beta -> n^-1 Psi_n(beta)"""
    n = float(sample.n)

    def fn(beta):
        return psi(sample, beta, score) / n

    return fn


def population_ranks(delta, survival, score: Optional[ScoreFunction] = None) -> np.ndarray:
    """
    Imputed ranks under a known continuous residual law, given S at each
    observed residual. Wilcoxon gives delta (1 - S) + (1 - delta)(1 - S/2).
    """
    score = score if score is not None else wilcoxon()
    delta = np.asarray(delta)
    f = 1.0 - np.asarray(survival, dtype=float)
    return np.where(delta == 1, score.a(f), score.tail_mean(f))
