"""
Imputed ranks and the estimating function in its equivalent forms
"""
import numpy as np
import pytest

from core import BadInput
from aft.data import CensoredSample
from aft.rankest import (EstimatingContext, alternative_weight, check_rank_sum,
                         estimating_function, exact_weight, failure_weights,
                         imputed_ranks, population_ranks, psi, psi_alternative,
                         psi_centered_form, psi_gehan, psi_gehan_pairwise,
                         psi_rank_form, psi_wlr_form, rank_sum_gap, risk_averages)
from aft.scores import (GEHAN, generalized_f, logrank, normal, scaled, shifted_logrank,
                        truncated, wilcoxon, winsorized_normal)
from aft.varinf import quasi_score_test
from tests.base import BaseTest


def _scores(n):
    return [wilcoxon(), shifted_logrank(n), generalized_f(1, 10), generalized_f(10, 1),
            generalized_f(3, 3), winsorized_normal(0.05)]


class RankEstTest(BaseTest):
    """Test rank conservation and agreement between the rank, centred and weighted-logrank forms"""

    def test_01_rank_sum_conserved(self):
        """Imputed ranks sum to n times the score's total"""
        for ties in (False, True):
            sample = self.random_sample(80, ties=ties)
            beta = np.array([0.2, -0.4])
            for score in _scores(sample.n):
                ctx = EstimatingContext.build(sample, beta, score)
                self.check(f"{score.label} ties={ties}", rank_sum_gap(ctx) <= 1e-10 * sample.n,
                           rank_sum_gap(ctx))
                check_rank_sum(ctx)

    def test_02_rank_form_equals_wlr_form(self):
        for ties in (False, True):
            sample = self.random_sample(60, ties=ties)
            for beta in (np.zeros(2), np.array([0.5, -1.0])):
                for score in _scores(sample.n):
                    ctx = EstimatingContext.build(sample, beta, score)
                    self.assert_close(f"{score.label} ties={ties} beta={beta}",
                                      psi_wlr_form(ctx), psi_rank_form(ctx), atol=1e-9 * sample.n)

    def test_03_centred_form_equals_rank_form(self):
        sample = self.random_sample(50)
        for score in _scores(sample.n):
            ctx = EstimatingContext.build(sample, np.array([0.1, 0.1]), score)
            self.assert_close(score.label, psi_centered_form(ctx), psi_rank_form(ctx), atol=1e-9 * sample.n)

    def test_04_gehan_matches_pairwise(self):
        """Without ties the risk-set Gehan form equals the O(n^2) pairwise count"""
        sample = self.continuous_sample(70)
        for beta in (np.zeros(2), np.array([-0.3, 0.8])):
            ctx = EstimatingContext.build(sample, beta, GEHAN)
            self.assert_close(f"beta={beta}", psi_gehan(ctx), psi_gehan_pairwise(ctx), atol=1e-12)

    def test_05_wilcoxon_alternative_is_exact(self):
        """Plugging the mid-CDF into a is exact for a linear score"""
        sample = self.random_sample(40, ties=True)
        ctx = EstimatingContext.build(sample, np.array([0.3, 0.3]), wilcoxon())
        self.assert_close("alternative", psi_alternative(ctx), psi_wlr_form(ctx), atol=1e-10)

    def test_06_shift_invariance(self):
        """Adding constants to y or to a covariate column leaves Psi unchanged"""
        sample = self.random_sample(45)
        beta = np.array([0.4, -0.2])
        shifted = CensoredSample(y=sample.y + 3.0, delta=sample.delta, x=sample.x + np.array([1.5, -2.0]))
        for score in (wilcoxon(), generalized_f(1, 10), GEHAN):
            base = psi(sample, beta, score)
            other = psi(shifted, beta, score)
            self.assert_close(getattr(score, 'label', 'gehan'), other, base, atol=1e-9)

    def test_07_estimating_function_scaling(self):
        sample = self.random_sample(30)
        fn = estimating_function(sample, wilcoxon())
        beta = np.array([0.1, 0.2])
        self.assert_vector_close("psi/n", fn(beta), psi(sample, beta, wilcoxon()) / sample.n)

    def test_08_gehan_nondecreasing(self):
        """With one covariate the Gehan function never decreases in beta"""
        sample = self.continuous_sample(50, p=1)
        grid = np.linspace(-3, 3, 61)
        values = np.array([psi(sample, [b], GEHAN)[0] for b in grid])
        self.check("monotone", np.all(np.diff(values) >= -1e-12), values.tolist())
        self.check("changes sign", values[0] < 0 < values[-1], (values[0], values[-1]))

    def test_09_risk_set_moments(self):
        sample = self.continuous_sample(25)
        ctx = EstimatingContext.build(sample, np.zeros(2), wilcoxon())
        ra = risk_averages(ctx)
        i = 0
        obs = ra.index[i]
        at_risk = ctx.view.e >= ctx.view.e[obs]
        self.assert_close("theta0", ra.theta0[i], at_risk.mean(), atol=1e-14)
        self.assert_vector_close("xbar", ra.xbar_at[i], sample.x[at_risk].mean(axis=0))
        self.assert_close("H", ra.h[i], np.cov(sample.x[at_risk].T, bias=True), atol=1e-12)
        self.assert_vector_close("theta1", ra.theta1[i], sample.x[at_risk].sum(axis=0) / sample.n)

    def test_10_unbounded_score_rejected(self):
        sample = self.random_sample(20)
        with pytest.raises(BadInput):
            EstimatingContext.build(sample, np.zeros(2), logrank())
        with pytest.raises(BadInput):
            imputed_ranks(EstimatingContext.build(sample, np.zeros(2), GEHAN))
        with pytest.raises(BadInput):
            psi(sample, np.zeros(2), wilcoxon(), form='pairwise')
        self.check("errors raised", True)

    def test_11_population_ranks(self):
        delta = np.array([1, 0, 1, 0])
        surv = np.array([0.8, 0.6, 0.3, 0.1])
        ranks = population_ranks(delta, surv)
        expected = delta * (1 - surv) + (1 - delta) * (1 - surv / 2)
        self.assert_vector_close("wilcoxon", ranks, expected, atol=1e-15)
        self.assert_close("population rank mean", population_ranks([1] * 4, [1.0, 0.75, 0.5, 0.25]).mean(),
                          0.375, atol=1e-15)

    def test_12_random_corpus_with_ties(self):
        """Rank sums and the rank/weighted-logrank agreement hold across random sizes, ties and censoring"""
        rng = np.random.default_rng(7)
        for k in range(150):
            n = int(rng.integers(5, 201))
            sample = self.random_sample(n, censor=float(rng.uniform(0.0, 0.6)),
                                        ties=bool(rng.integers(0, 2)), rng=rng)
            scores = _scores(n) + [truncated(normal(), n)]
            for beta in rng.uniform(-1.5, 1.5, (3, 2)):
                for score in scores:
                    ctx = EstimatingContext.build(sample, beta, score)
                    where = f"dataset {k} n={n} {score.label}"
                    gap = rank_sum_gap(ctx)
                    if gap > 1e-10 * n:
                        self.check(f"rank sum {where}", False, gap)
                    wlr, rank = psi_wlr_form(ctx), psi_rank_form(ctx)
                    if np.max(np.abs(wlr - rank)) > 1e-9 * n:
                        self.assert_close(f"forms {where}", wlr, rank, atol=1e-9 * n)
        self.check("random corpus", True)

    def test_13_imputed_ranks_by_hand(self):
        """A censored middle observation takes the tail mean of the Wilcoxon score"""
        sample = CensoredSample(y=np.array([1.0, 2.0, 3.0]), delta=np.array([1, 0, 1]),
                                x=np.array([[0.0], [1.0], [2.0]]))
        ctx = EstimatingContext.build(sample, np.zeros(1), wilcoxon())
        self.assert_vector_close("ranks", imputed_ranks(ctx), [1 / 6, 2 / 3, 2 / 3], atol=1e-15)

    def test_14_exact_weight(self):
        """w(u) = -S(u-)/2 for Wilcoxon, with the mid-CDF alternative agreeing"""
        sample = CensoredSample(y=np.array([1.0, 2.0, 3.0]), delta=np.ones(3, dtype=int),
                                x=np.array([[0.0], [1.0], [2.0]]))
        ctx = EstimatingContext.build(sample, np.zeros(1), wilcoxon())
        self.assert_close("first failure", exact_weight(ctx, 1.0), -0.5, atol=1e-15)

        sample = self.random_sample(60, ties=True)
        ctx = EstimatingContext.build(sample, np.array([0.2, -0.1]), wilcoxon())
        failures = np.flatnonzero(ctx.view.delta_mod)
        u = ctx.view.e[failures]
        _, f_minus = ctx.cdf.values(u)
        expected = -(1.0 - f_minus) / 2
        self.assert_vector_close("vectorized", failure_weights(ctx), expected, atol=1e-14)
        self.assert_vector_close("pointwise", [exact_weight(ctx, t) for t in u], expected, atol=1e-14)
        self.assert_vector_close("alternative", [alternative_weight(ctx, t) for t in u], expected, atol=1e-14)

    def test_15_affine_score(self):
        """c1 a + c2 multiplies Psi by c1 and leaves the quasi-score statistic alone"""
        sample = self.random_sample(70, ties=True)
        beta = np.array([0.4, -0.2])
        base = generalized_f(3, 3)
        stretched = scaled(base, 2.5, -0.7)
        for form in ('rank', 'wlr'):
            self.assert_close(f"psi {form}", psi(sample, beta, stretched, form=form),
                              2.5 * psi(sample, beta, base, form=form), atol=1e-9 * sample.n)
        plain = quasi_score_test(sample, base, beta)
        scaled_test = quasi_score_test(sample, scaled(base, 2.5), beta)
        self.assert_close("statistic", scaled_test.statistic, plain.statistic, rtol=1e-10)
        self.assert_close("p-value", scaled_test.p_value, plain.p_value, rtol=1e-8, atol=1e-14)

    def test_16_gehan_tie_convention(self):
        """A failure tied with a censored residual counts it at risk; the pairwise count does not"""
        sample = CensoredSample(y=np.array([1.0, 1.0, 2.0]), delta=np.array([1, 0, 1]),
                                x=np.array([[0.0], [1.0], [3.0]]))
        ctx = EstimatingContext.build(sample, np.zeros(1), GEHAN)
        self.assert_vector_close("risk set", psi_gehan(ctx), [-4 / 3], atol=1e-14)
        self.assert_vector_close("strict pairs", psi_gehan_pairwise(ctx), [-1.0], atol=1e-14)
        self.assert_vector_close("dispatch", psi(sample, np.zeros(1), GEHAN), [-4 / 3], atol=1e-14)
