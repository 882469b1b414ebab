#!/usr/bin/env python3
"""
Command-line front end: fit, test, km, psi and simulate
PATH: ./raft.py
"""
import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

import core
from core import BadInput, NotConverged, RaftError, dump_json, parse_vector
from simpleLogger import SimpleLogger
from aft import simlab
from aft.data import load_csv, residuals
from aft.rankest import psi as psi_value
from aft.scores import parse_score
from aft.solver import SolverConfig
from aft.stepcdf import self_consistent, to_frame
from aft.varinf import fit as fit_model
from aft.varinf import fit_report_on_failure, quasi_score_test, wald

logger = SimpleLogger('raft')
console = Console(stderr=True)


def _emit(obj, out: Optional[str]) -> None:
    if out:
        with open(out, 'w') as f:
            dump_json(obj, f)
        console.print(f"[green]Wrote {out}[/green]")
    else:
        dump_json(obj, sys.stdout)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = simlab.resolve_seed(None)
    console.print(f"[yellow]No --seed given; using seed {seed}[/yellow]")
    return seed


def _solver_config(args, p: int) -> SolverConfig:
    beta0 = parse_vector(getattr(args, 'beta', None), '--beta')
    if beta0 is not None and beta0.shape[0] != p:
        raise BadInput(f"--beta has length {beta0.shape[0]}, expected {p}", key='--beta')
    overrides = {'init': args.init}
    if beta0 is not None:
        overrides['beta0'] = beta0
    return SolverConfig.from_config(**overrides)


def _vector_or_zero(text: Optional[str], p: int, name: str) -> np.ndarray:
    vector = parse_vector(text, name)
    if vector is None:
        return np.zeros(p)
    if vector.shape[0] != p:
        raise BadInput(f"{name} has length {vector.shape[0]}, expected {p}", key=name)
    return vector


def cmd_fit(args) -> int:
    sample = load_csv(args.csv)
    score = parse_score(args.score, sample.n)
    settings = core.variance_settings()
    variance = args.variance or settings['method']
    seed = _seed(args) if variance == 'mc' else args.seed
    config = _solver_config(args, sample.p)
    nulls = [_vector_or_zero(args.null, sample.p, '--null')]

    try:
        result = fit_model(sample, score, config,
                           variance=variance,
                           mc_reps=args.mc_reps or settings['mc_reps'],
                           dz=args.dz or settings['dz'],
                           seed=seed,
                           level=args.level or settings['level'],
                           nulls=nulls,
                           workers=settings['workers'])
    except NotConverged as e:
        logger.warning(f"Fit did not converge: {e}")
        report = fit_report_on_failure(e, score)
        if args.out:
            _emit(report, args.out)
            dump_json(e.to_dict(), sys.stdout)
        else:
            # one document on stdout: the partial report carries the error
            report['error'] = e.to_dict()
            dump_json(report, sys.stdout)
        return e.exit_code

    report = result.to_report()
    _emit(report, args.out)
    console.print(f"beta_hat = {np.array2string(result.outcome.beta_hat, precision=6)} "
                  f"({result.outcome.sweeps_used} sweeps, {result.method})")
    return core.EXIT_CODES['ok']


def cmd_test(args) -> int:
    sample = load_csv(args.csv)
    score = parse_score(args.score, sample.n)
    null = _vector_or_zero(args.null, sample.p, '--null')
    results = [quasi_score_test(sample, score, null).to_dict()]
    if args.wald:
        settings = core.variance_settings()
        fitted = fit_model(sample, score, _solver_config(args, sample.p), variance='huang',
                           nulls=[null], workers=settings['workers'])
        results.append(wald(fitted.outcome, fitted.omega, null).to_dict())
    _emit({'score': score.describe(), 'tests': results}, args.out)
    return core.EXIT_CODES['ok']


def cmd_km(args) -> int:
    sample = load_csv(args.csv)
    beta = _vector_or_zero(args.beta, sample.p, '--beta')
    frame = to_frame(self_consistent(residuals(sample, beta)))
    if args.out:
        frame.to_csv(args.out, index=False, float_format='%.17g')
        console.print(f"[green]Wrote {args.out}[/green]")
    else:
        frame.to_csv(sys.stdout, index=False, float_format='%.17g')
    return core.EXIT_CODES['ok']


def cmd_psi(args) -> int:
    sample = load_csv(args.csv)
    score = parse_score(args.score, sample.n)
    beta = _vector_or_zero(args.beta, sample.p, '--beta')
    value = psi_value(sample, beta, score, form=args.form)
    _emit({'beta': beta, 'psi': value, 'psi_over_n': value / sample.n, 'form': args.form,
           'score': score.describe()}, args.out)
    return core.EXIT_CODES['ok']


def _print_gates(gates: List[dict]) -> None:
    if not gates:
        return
    table = Table(title="Acceptance gates")
    table.add_column("Gate", style="cyan")
    table.add_column("Where")
    table.add_column("Value", justify="right")
    table.add_column("Bound", justify="right")
    table.add_column("Status", justify="center")
    for gate in gates:
        status = "[green]✓[/green]" if gate['passed'] else "[red]✗[/red]"
        table.add_row(gate['gate'], gate['where'], f"{gate['value']:.4g}", f"{gate['bound']:.4g}", status)
    console.print(table)


def cmd_simulate(args) -> int:
    design, options = simlab.load_campaign(args.campaign)
    overrides = {'seed': args.seed if args.seed is not None else design.seed}
    if overrides['seed'] is None:
        overrides['seed'] = _seed(args)
    if args.full:
        overrides['reps'] = 1000
    if args.workers:
        overrides['workers'] = args.workers
    design = replace(design, **overrides)
    if args.out_dir:
        options['dir'] = args.out_dir

    with console.status(f"Running campaign {os.path.basename(args.campaign)} ..."):
        report = simlab.execute(design, options)
    _print_gates(report.gates)
    console.print(f"[green]Campaign done: {report.progress['fits_ok']} fits, "
                  f"{report.progress['fits_failed']} failures, outputs in {options['dir']}[/green]")
    return core.EXIT_CODES['ok']


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='raft', description='Rank-based AFT regression under right censoring')
    parser.add_argument('--config', help='Alternate config.ini')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, score=True):
        p.add_argument('csv', help='CSV with header time,status,x1,...,xp')
        if score:
            p.add_argument('--score', default='wilcoxon',
                           help='wilcoxon | logrank | normal:alpha=<a> | genf:m1=<m1>,m2=<m2> | gehan')
        p.add_argument('--out', help='Write the report here instead of stdout')

    p = sub.add_parser('fit', help='Fit beta, estimate Sigma and Omega, test and build intervals')
    common(p)
    p.add_argument('--variance', choices=['huang', 'mc'])
    p.add_argument('--mc-reps', type=int)
    p.add_argument('--dz', choices=['scale', 'identity'])
    p.add_argument('--null', help='Null vector for the tests, e.g. 0,0 (default zero)')
    p.add_argument('--level', type=float)
    p.add_argument('--seed', type=int)
    p.add_argument('--init', choices=['zero', 'gehan', 'vector'])
    p.add_argument('--beta', help='Starting vector for --init vector')
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser('test', help='Quasi-score test at a null, optionally with the Wald test')
    common(p)
    p.add_argument('--null', required=True)
    p.add_argument('--wald', action='store_true')
    p.add_argument('--init', choices=['zero', 'gehan', 'vector'])
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser('km', help='Dump the self-consistent residual CDF at beta')
    common(p, score=False)
    p.add_argument('--beta')
    p.set_defaults(handler=cmd_km)

    p = sub.add_parser('psi', help='Evaluate the estimating function at beta')
    common(p)
    p.add_argument('--beta')
    p.add_argument('--form', choices=['wlr', 'rank'], default='wlr')
    p.set_defaults(handler=cmd_psi)

    p = sub.add_parser('simulate', help='Run a simulation campaign from an INI file')
    p.add_argument('campaign', help='Campaign INI, e.g. conf/table1.ini')
    p.add_argument('--seed', type=int)
    p.add_argument('--full', action='store_true', help='1000 replicates')
    p.add_argument('--workers', type=int)
    p.add_argument('--out-dir')
    p.set_defaults(handler=cmd_simulate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            if not os.path.exists(args.config):
                raise BadInput(f"Config file not found: {args.config}", key='--config')
            core.load_config(args.config)
        logger.debug(f"Arguments parsed: {vars(args)}")
        return args.handler(args)
    except RaftError as e:
        logger.error(f"{args.command} failed: [{e.code}] {e}")
        dump_json(e.to_dict(), sys.stdout)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        dump_json({'error': str(e), 'code': 'internal'}, sys.stdout)
        return core.EXIT_CODES['input']


if __name__ == '__main__':
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        sys.exit(130)
