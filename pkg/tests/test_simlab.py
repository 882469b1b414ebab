"""
Simulation generator, campaigns, summaries and gates
"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from core import ConfigError
from aft.simlab import (DEFAULT_B_GRID, EULER, SIGMA_X, MethodSpec, SimDesign,
                        acceptance_gates, calibrate_censoring, censoring_rate,
                        coverage_curve, coverage_gates, draw_components, execute, generate,
                        load_campaign, power_curve, power_order_gates, run_campaign, sigma_parts,
                        table1_reference, population_rank_moments, true_survival,
                        write_outputs)
from aft.scores import generalized_f
from tests.base import BaseTest

CONF_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'conf')
SMALL_METHODS = (MethodSpec('raft.NoW', 'wilcoxon'), MethodSpec('fraft', 'gehan'))


def small_design(**overrides):
    settings = dict(n=60, reps=3, cells=((0.0, 0.0), (1.0, -1.0)), methods=SMALL_METHODS,
                    seed=5, workers=1, levels=(0.9, 0.95))
    settings.update(overrides)
    return SimDesign(**settings)


class SimLabTest(BaseTest):
    """Test the data generator, population moments and small end-to-end campaigns"""

    def test_01_design_validation(self):
        cases = [({'n': 10}, 'DESIGN.n'),
                 ({'levels': (0.5, 1.0)}, 'DESIGN.levels'),
                 ({'methods': (MethodSpec('a', 'wilcoxon'), MethodSpec('a', 'gehan'))}, 'METHODS'),
                 ({'methods': (MethodSpec('bad', 'genf:m1=0,m2=1'),)}, 'METHODS.bad'),
                 ({'variance': 'bootstrap'}, 'SIMULATION.variance'),
                 ({'cells': ((0.0, np.nan),)}, 'DESIGN.beta0')]
        for overrides, key in cases:
            with pytest.raises(ConfigError) as info:
                small_design(**overrides)
            self.check(f"key {key}", info.value.details['key'] == key, info.value.details)

    def test_02_censor_scale_reading(self):
        self.check("sd reading", small_design(censor_sd=4.0).censor_scale == 4.0)
        self.check("variance reading", small_design(censor_sd=4.0, censor_reading='variance').censor_scale == 2.0)

    def test_03_generator_layout(self):
        design = small_design()
        parts = draw_components(design, (1.0, -1.0), np.random.default_rng(1), n=500)
        x = parts['x']
        self.check("binary x2", set(np.unique(x[:, 1])) <= {0.0, 1.0})
        self.assert_vector_close("log t", parts['log_t'], x @ np.array([1.0, -1.0]) + parts['eps'])
        sample = generate(design, (1.0, -1.0), np.random.default_rng(1))
        again = generate(design, (1.0, -1.0), np.random.default_rng(1))
        self.check("reproducible", np.array_equal(sample.y, again.y) and np.array_equal(sample.x, again.x))
        self.check("size", sample.n == 60)

    def test_04_error_law(self):
        """Errors have mean zero and survival exp(-exp(k u - euler))"""
        design = small_design()
        eps = draw_components(design, (0.0, 0.0), np.random.default_rng(2), n=200000)['eps']
        self.assert_close("mean zero", eps.mean(), 0.0, atol=0.03)
        for u in (-2.0, 0.0, 1.0, 3.0):
            self.assert_close(f"S({u})", (eps > u).mean(), true_survival(u, design.weibull_shape), atol=0.005)
        self.check("euler constant", abs(EULER - 0.5772156649) < 1e-10)

    def test_05_censoring(self):
        design = small_design()
        rate = censoring_rate(design, 50000, np.random.default_rng(3))
        self.check("some censoring", 0.0 < rate < 1.0, rate)
        none = censoring_rate(small_design(censor_mu=float('inf')), 1000, np.random.default_rng(3))
        self.check("no censoring at infinity", none == 0.0)
        calibrated, decision = calibrate_censoring(design, draws=20000, seed=4)
        self.check("reading recorded", decision['reading'] in ('sd', 'variance'))
        self.check("design follows decision", calibrated.censor_reading == decision['reading'])

    def test_06_population_rank_moments(self):
        """Wilcoxon population ranks have mean 1/2 and the censoring-residual variance"""
        design = SimDesign(seed=6)
        moments = population_rank_moments(design, (0.0, 0.0), 200000, np.random.default_rng(6))
        self.check("moments within 3 SE", moments['passed'], moments)
        self.check("censoring lowers variance", moments['variance_target'] < 1.0 / 12.0)
        uncensored = population_rank_moments(SimDesign(censor_mu=float('inf')), (1.0, -1.0), 100000,
                                      np.random.default_rng(7))
        self.assert_close("uncensored target", uncensored['variance_target'], 1.0 / 12.0, atol=1e-15)
        self.check("uncensored passes", uncensored['passed'], uncensored)

    def test_07_generalized_f_rank_mean(self):
        moments = population_rank_moments(SimDesign(), (0.0, 0.0), 100000, np.random.default_rng(8),
                                   score=generalized_f(3, 3))
        self.check("mean", moments['passed'], moments)

    def test_08_sigma_parts_uncensored(self):
        """Without censoring Sigma_2 vanishes and Sigma_1 is Sigma_X/12"""
        design = SimDesign(censor_mu=float('inf'))
        parts = sigma_parts(design, (0.0, 0.0), 100000, np.random.default_rng(9))
        self.check("sigma2 zero", np.max(np.abs(parts['sigma2'])) <= 1e-12, parts['sigma2'])
        gap = np.abs(parts['sigma1'] - SIGMA_X / 12.0)
        self.check("sigma1 limit", np.all(gap <= 3 * parts['sigma1_se'] + 1e-12), gap.tolist())

    def test_09_sigma2_psd_under_censoring(self):
        parts = sigma_parts(SimDesign(), (0.0, 0.0), 50000, np.random.default_rng(10))
        self.check("psd", np.linalg.eigvalsh(parts['sigma2']).min() >= -1e-15)
        self.check("below sigma1", np.all(np.diag(parts['sigma2']) < np.diag(parts['sigma1'])))

    def test_10_small_campaign(self):
        design = small_design()
        report = run_campaign(design)
        records = report.records
        self.check("record count", len(records) == 2 * 3 * 2, len(records))
        table = report.table1
        self.check("table rows", len(table) == 4)
        self.check("accounted", bool(((table['n_ok'] + table['n_failed']) == 3).all()))
        self.check("reference attached", 'ref_Omega_2' in table.columns)
        ok = records[records['error'] == '']
        self.check("coverage flags", set(ok['cover_0.95_1'].unique()) <= {0, 1})
        self.check("decisions", 'table_coordinate_map' in report.decisions)

    def test_11_campaign_reproducible_across_workers(self):
        serial = run_campaign(small_design())
        pooled = run_campaign(small_design(workers=2))
        pd.testing.assert_frame_equal(serial.records, pooled.records)
        self.check("same records", True)

    def test_12_write_outputs(self, tmp_path):
        first = execute(small_design(), {'dir': str(tmp_path / 'a'), 'gates': True})
        execute(small_design(), {'dir': str(tmp_path / 'b'), 'gates': True})
        for name in ('table1.csv', 'coverage.csv', 'replicates.csv'):
            a = (tmp_path / 'a' / name).read_bytes()
            b = (tmp_path / 'b' / name).read_bytes()
            self.check(f"{name} identical", a == b)
        manifest = json.loads((tmp_path / 'a' / 'manifest.json').read_text())
        self.check("manifest seed", manifest['seed'] == 5)
        self.check("manifest files", 'table1.csv' in manifest['files'])
        self.check("gates present", isinstance(first.gates, list))
        written = write_outputs(first, str(tmp_path / 'c'), table1=False, coverage=False)
        self.check("optional tables skipped", not any(p.endswith('table1.csv') for p in written))

    def test_13_reference_mapping(self):
        ref = table1_reference((0.0, 0.0), 'raft.NoW')
        self.check("ten values", ref is not None and len(ref) == 10)
        self.assert_close("Omega for x2 is the table's first column", ref['ref_Omega_2'], 1.506, atol=1e-12)
        swapped = table1_reference((1.0, -1.0), 'raft.NoW')
        self.assert_close("cell swapped", swapped['ref_Omega_2'], 1.608, atol=1e-12)
        self.check("untabulated", table1_reference((0.5, -0.5), 'raft.NoW') is None)
        self.check("unknown method", table1_reference((0.0, 0.0), 'other') is None)

    def test_14_acceptance_gates_widen(self):
        row = {'beta0_1': 0.0, 'beta0_2': 0.0, 'method': 'raft.NoW', 'n_ok': 125,
               'bias_1': 8.0, 'bias_2': -8.0, 'Omega_1': 1.0, 'Omega_2': 1.5,
               'OmegaHat_1': 1.1, 'OmegaHat_2': 1.6, 'ref_Omega_2': 1.506,
               'reject_qs_zero': 0.05, 'reject_wald_zero': 0.06}
        gates = acceptance_gates(pd.DataFrame([row]), reps=125)
        bias = [g for g in gates if g['gate'].startswith('bias')]
        self.check("bias widened", all(g['bound'] == pytest.approx(0.1) for g in bias), bias)
        self.check("all pass", all(g['passed'] for g in gates), gates)
        strict = acceptance_gates(pd.DataFrame([row]), reps=500)
        self.check("bias fails unwidened", not all(g['passed'] for g in strict if g['gate'].startswith('bias')))

    def test_15_power_and_coverage_gates(self):
        power = pd.DataFrame([
            {'b': 0.4, 'method': 'raft.WW', 'test': 'wald', 'rejection_rate': 0.9, 'se': 0.01},
            {'b': 0.4, 'method': 'raft.NoW', 'test': 'wald', 'rejection_rate': 0.8, 'se': 0.01},
            {'b': 0.4, 'method': 'fraft', 'test': 'wald', 'rejection_rate': 0.85, 'se': 0.01},
        ])
        gates = power_order_gates(power)
        self.check("two comparisons", len(gates) == 2)
        self.check("inversion caught", [g['passed'] for g in gates] == [True, False], gates)
        coverage = pd.DataFrame([
            {'beta0_1': 0.0, 'beta0_2': 0.0, 'method': 'raft.WW', 'coordinate': 1, 'nominal': 0.95,
             'coverage': 0.94, 'se': 0.01, 'n_ok': 500},
            {'beta0_1': 0.0, 'beta0_2': 0.0, 'method': 'raft.WW', 'coordinate': 2, 'nominal': 0.9,
             'coverage': 0.80, 'se': 0.01, 'n_ok': 500},
        ])
        checked = coverage_gates(coverage)
        self.check("coverage gates", [g['passed'] for g in checked] == [True, False], checked)

    def test_16_load_campaigns(self):
        design, options = load_campaign(os.path.join(CONF_DIR, 'smoke.ini'))
        self.check("reps", design.reps == 50)
        self.check("methods", [m.label for m in design.methods] == ['raft.NoW', 'fraft'])
        self.check("gates off", options['gates'] is False)
        design, options = load_campaign(os.path.join(CONF_DIR, 'power.ini'))
        self.check("b grid cells", len(design.cells) == len(DEFAULT_B_GRID))
        self.check("antisymmetric cells", all(c[1] == -c[0] for c in design.cells))
        self.check("power on", options['power'] is True)
        design, _ = load_campaign(os.path.join(CONF_DIR, 'table1.ini'))
        self.check("six methods", len(design.methods) == 6)

    def test_17_load_campaign_errors(self, tmp_path):
        path = tmp_path / 'bad.ini'
        path.write_text("[DESIGN]\nn = many\n")
        with pytest.raises(ConfigError) as info:
            load_campaign(str(path))
        self.check("key reported", info.value.details['key'] == 'DESIGN.n')
        path.write_text("[SIMULATION]\ncheck_rank_sum = perhaps\n")
        with pytest.raises(ConfigError):
            load_campaign(str(path))
        with pytest.raises(ConfigError):
            load_campaign(str(tmp_path / 'missing.ini'))

    def test_18_power_and_coverage_curves(self):
        """Curves run one cell (b, -b) per grid point"""
        power = power_curve(small_design(), b_grid=(0.0, 0.5))
        self.check("power columns", list(power.columns) == ['b', 'method', 'test', 'rejection_rate', 'se', 'n_ok'],
                   list(power.columns))
        self.check("power grid", sorted(power['b'].unique()) == [0.0, 0.5], power['b'].unique())
        self.check("both tests", set(power['test']) == {'quasi_score', 'wald'})
        self.check("rates", bool(power['rejection_rate'].between(0, 1).all()))

        coverage = coverage_curve(small_design(), b_grid=(0.0,))
        self.check("coverage cell", set(zip(coverage['beta0_1'], coverage['beta0_2'])) == {(0.0, 0.0)})
        self.check("nominal levels", set(coverage['nominal']) == {0.9, 0.95}, set(coverage['nominal']))
        self.check("coordinates", set(coverage['coordinate']) == {1, 2})
        self.check("coverage range", bool(coverage['coverage'].between(0, 1).all()))
