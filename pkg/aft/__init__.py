"""
Rank-based estimation for the accelerated failure time model under right censoring
PATH: aft/__init__.py
"""
from aft.data import CensoredSample, load_csv, residuals, write_csv
from aft.rankest import EstimatingContext, estimating_function, psi
from aft.scores import (GEHAN, generalized_f, logrank, normal, parse_score,
                        shifted_logrank, truncated, wilcoxon, winsorized_normal)
from aft.solver import SolveOutcome, SolverConfig, solve, solve_gehan, solve_offset
from aft.stepcdf import StepCdf, self_consistent
from aft.varinf import (FitResult, OmegaHat, SigmaHat, TestResult, ci, fit,
                        omega_huang, omega_monte_carlo, quasi_score_test,
                        sigma_hat, wald)

__all__ = [
    'CensoredSample', 'load_csv', 'write_csv', 'residuals',
    'StepCdf', 'self_consistent',
    'GEHAN', 'wilcoxon', 'shifted_logrank', 'logrank', 'normal', 'generalized_f',
    'winsorized_normal', 'truncated', 'parse_score',
    'EstimatingContext', 'psi', 'estimating_function',
    'SolverConfig', 'SolveOutcome', 'solve', 'solve_offset', 'solve_gehan',
    'SigmaHat', 'OmegaHat', 'TestResult', 'FitResult', 'sigma_hat', 'quasi_score_test',
    'omega_huang', 'omega_monte_carlo', 'wald', 'ci', 'fit',
]
