"""
Core shared resources for raftlab
PATH: ./core.py
"""
import configparser
import json
import math
import os
from typing import Any, Dict, Optional

import numpy as np

from simpleLogger import SimpleLogger

# Version info
VERSION = '1.2.0'
BUILD_DATE = '2026-10-17'

# Initialize logger
logger = SimpleLogger('core')

# Exit codes shared by the CLI and anything that wraps it
EXIT_CODES = {
    'ok': 0,
    'input': 1,
    'not_converged': 2,
    'singular': 3
}


class RaftError(Exception):
    """Base for every error raised by the estimation library"""
    code = 'internal'
    exit_code = EXIT_CODES['input']

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        out = {'error': self.message, 'code': self.code}
        for key, value in self.details.items():
            if key == 'outcome':
                continue
            out[key] = value
        return out


class InputError(RaftError):
    code = 'bad_input'


class BadInput(InputError):
    code = 'bad_input'


class NonFinite(InputError):
    code = 'non_finite'


class NonpositiveTime(InputError):
    code = 'nonpositive_time'


class BadStatus(InputError):
    code = 'bad_status'


class ConstantCovariate(InputError):
    code = 'constant_covariate'


class DegenerateSample(InputError):
    code = 'degenerate_sample'


class BadShape(InputError):
    code = 'bad_shape'


class BadAlpha(InputError):
    code = 'bad_alpha'


class ConfigError(InputError):
    code = 'config_error'


class SolverError(RaftError):
    code = 'solver_error'
    exit_code = EXIT_CODES['not_converged']


class NoBracket(SolverError):
    code = 'no_bracket'


class NotConverged(SolverError):
    code = 'not_converged'

    @property
    def outcome(self):
        return self.details.get('outcome')


class NoSolutionEitherSide(SolverError):
    code = 'no_solution_either_side'


class SingularMatrix(RaftError):
    code = 'singular_matrix'
    exit_code = EXIT_CODES['singular']


class SingularSigma(SingularMatrix):
    code = 'singular_sigma'


class SingularXi(SingularMatrix):
    code = 'singular_xi'


class SingularOmega(SingularMatrix):
    code = 'singular_omega'


class NumpyJSONEncoder(json.JSONEncoder):
    """JSON encoder that understands numpy scalars and arrays"""
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        return super().default(obj)


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any double"""
    return '%.17g' % value


def to_jsonable(obj):
    """Round-trip through the encoder so nested numpy values become plain python"""
    return json.loads(json.dumps(obj, cls=NumpyJSONEncoder, allow_nan=True))


def dump_json(obj, stream) -> None:
    json.dump(obj, stream, cls=NumpyJSONEncoder, indent=2)
    stream.write('\n')


def parse_vector(text: Optional[str], name: str = 'vector') -> Optional[np.ndarray]:
    """Parse '0.5,-1' into a float vector; empty or None gives None"""
    if text is None or not str(text).strip():
        return None
    try:
        values = [float(v) for v in str(text).split(',') if v.strip()]
    except ValueError as e:
        raise BadInput(f"Cannot parse {name} '{text}': {e}", key=name)
    if not values or not all(math.isfinite(v) for v in values):
        raise BadInput(f"Invalid {name} '{text}'", key=name)
    return np.asarray(values, dtype=float)


# Load and validate configuration
config = configparser.ConfigParser()
config_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.ini')


def load_config(path: Optional[str] = None) -> configparser.ConfigParser:
    """(Re)load config.ini, validating the estimation sections"""
    global config_path
    target = path or config_path
    parser = configparser.ConfigParser()
    if os.path.exists(target):
        parser.read(target)
    else:
        logger.warning(f"Config file not found: {target}, using defaults")

    try:
        _validate(parser)
    except (configparser.Error, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        raise ConfigError(f"Failed to load configuration: {e}", key=getattr(e, 'key', None))

    config.clear()
    config.read_dict({s: dict(parser.items(s)) for s in parser.sections()})
    config_path = target
    return config


class _KeyError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _validate(parser: configparser.ConfigParser) -> None:
    tol = parser.getfloat('SOLVER', 'tol', fallback=1e-2)
    if not tol > 0:
        raise _KeyError('SOLVER.tol', 'must be positive')
    if parser.getint('SOLVER', 'max_sweeps', fallback=50) < 1:
        raise _KeyError('SOLVER.max_sweeps', 'must be at least 1')
    if parser.getfloat('SOLVER', 'bracket_grow', fallback=2.0) <= 1:
        raise _KeyError('SOLVER.bracket_grow', 'must exceed 1')
    bracket_init = parser.get('SOLVER', 'bracket_init', fallback='auto').strip()
    if bracket_init != 'auto' and not float(bracket_init) > 0:
        raise _KeyError('SOLVER.bracket_init', "must be 'auto' or positive")
    init = parser.get('SOLVER', 'init', fallback='zero').strip()
    if init not in ('zero', 'gehan', 'vector'):
        raise _KeyError('SOLVER.init', 'must be zero, gehan or vector')
    if parser.get('VARIANCE', 'method', fallback='huang').strip() not in ('huang', 'mc'):
        raise _KeyError('VARIANCE.method', 'must be huang or mc')
    if parser.get('VARIANCE', 'dz', fallback='scale').strip() not in ('scale', 'identity'):
        raise _KeyError('VARIANCE.dz', 'must be scale or identity')
    level = parser.getfloat('VARIANCE', 'level', fallback=0.95)
    if not 0 < level < 1:
        raise _KeyError('VARIANCE.level', 'must lie in (0, 1)')


def solver_settings() -> Dict[str, Any]:
    """Solver section as a plain dict with fallbacks applied"""
    tol_abs = config.get('SOLVER', 'tol_abs', fallback='').strip()
    bracket_init = config.get('SOLVER', 'bracket_init', fallback='auto').strip()
    return {
        'tol_psi': config.getfloat('SOLVER', 'tol', fallback=1e-2),
        'tol_abs': float(tol_abs) if tol_abs else None,
        'xtol': config.getfloat('SOLVER', 'xtol', fallback=1e-8),
        'max_sweeps': config.getint('SOLVER', 'max_sweeps', fallback=50),
        'max_expand': config.getint('SOLVER', 'max_expand', fallback=40),
        'bracket_init': None if bracket_init == 'auto' else float(bracket_init),
        'bracket_grow': config.getfloat('SOLVER', 'bracket_grow', fallback=2.0),
        'init': config.get('SOLVER', 'init', fallback='zero').strip(),
        'beta0': parse_vector(config.get('SOLVER', 'beta0', fallback=''), 'SOLVER.beta0')
    }


def variance_settings() -> Dict[str, Any]:
    return {
        'method': config.get('VARIANCE', 'method', fallback='huang').strip(),
        'mc_reps': config.getint('VARIANCE', 'mc_reps', fallback=500),
        'dz': config.get('VARIANCE', 'dz', fallback='scale').strip(),
        'workers': config.getint('VARIANCE', 'workers', fallback=1),
        'level': config.getfloat('VARIANCE', 'level', fallback=0.95)
    }


def simulation_settings() -> Dict[str, Any]:
    return {
        'workers': config.getint('SIMULATION', 'workers', fallback=os.cpu_count() or 1),
        'test_level': config.getfloat('SIMULATION', 'test_level', fallback=0.05),
        'out_dir': config.get('SIMULATION', 'out_dir', fallback='results')
    }


try:
    load_config()
except ConfigError as e:
    raise SystemExit(f"Failed to initialize core components: {e}")
