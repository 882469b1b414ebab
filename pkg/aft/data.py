"""
Observed-data model and residuals on the log-time scale
PATH: aft/data.py
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from core import (BadInput, BadStatus, ConstantCovariate, NonFinite,
                  NonpositiveTime)
from simpleLogger import SimpleLogger

logger = SimpleLogger('data')


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CensoredSample:
    """Right-censored sample: log times y, failure indicators delta, covariates x (n x p)"""
    y: np.ndarray
    delta: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        raw_delta = np.asarray(self.delta)

        if y.ndim != 1 or raw_delta.ndim != 1 or x.ndim != 2:
            raise BadInput("y and delta must be vectors and x a matrix")
        n = y.shape[0]
        if raw_delta.shape[0] != n or x.shape[0] != n:
            raise BadInput(f"Length mismatch: y={n}, delta={raw_delta.shape[0]}, x rows={x.shape[0]}")
        if n < 2:
            raise BadInput(f"Need at least 2 observations, got {n}")
        if x.shape[1] < 1:
            raise BadInput("Need at least one covariate column")
        if x.shape[1] > n:
            raise BadInput(f"p={x.shape[1]} must not exceed n={n}")

        if not np.all(np.isfinite(y)):
            raise NonFinite("Non-finite log time", row=int(np.flatnonzero(~np.isfinite(y))[0]) + 1)
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise NonFinite("Non-finite covariate", row=int(bad[0]) + 1, column=int(bad[1]) + 1)
        try:
            delta_float = raw_delta.astype(float)
        except (TypeError, ValueError):
            raise BadStatus("Status values must be 0 or 1")
        bad_status = ~np.isin(delta_float, (0.0, 1.0))
        if np.any(bad_status):
            raise BadStatus("Status values must be 0 or 1", row=int(np.flatnonzero(bad_status)[0]) + 1)

        constant = np.all(x == x[0], axis=0)
        if np.any(constant):
            column = int(np.flatnonzero(constant)[0]) + 1
            raise ConstantCovariate(f"Covariate x{column} is constant", column=column)

        object.__setattr__(self, 'y', _frozen(y))
        object.__setattr__(self, 'delta', _frozen(delta_float.astype(np.int8), dtype=np.int8))
        object.__setattr__(self, 'x', _frozen(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def censoring_rate(self) -> float:
        return float(1.0 - self.delta.mean())

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'CensoredSample':
        """Build from a frame with columns time, status, x1..xp (time on the original positive scale)"""
        columns = [str(c).strip() for c in frame.columns]
        if len(columns) < 3 or columns[0] != 'time' or columns[1] != 'status':
            raise BadInput(f"Expected header time,status,x1,...,xp; got {','.join(columns)}")
        expected = [f"x{j}" for j in range(1, len(columns) - 1)]
        if columns[2:] != expected:
            raise BadInput(f"Covariate columns must be named {','.join(expected)}")

        try:
            values = frame.apply(pd.to_numeric, errors='raise').to_numpy(dtype=float)
        except (ValueError, TypeError) as e:
            raise BadInput(f"Non-numeric value in input: {e}")

        time = values[:, 0]
        if np.any(np.isnan(time)):
            raise NonFinite("Missing time value", row=int(np.flatnonzero(np.isnan(time))[0]) + 1)
        nonpositive = ~(time > 0)
        if np.any(nonpositive):
            row = int(np.flatnonzero(nonpositive)[0]) + 1
            raise NonpositiveTime(f"time must be strictly positive (row {row})", row=row)

        with np.errstate(over='ignore'):
            y = np.log(time)
        return cls(y=y, delta=values[:, 1], x=values[:, 2:])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'time': np.exp(self.y), 'status': self.delta.astype(int)})
        for j in range(self.p):
            frame[f"x{j + 1}"] = self.x[:, j]
        return frame


def load_csv(path: str) -> CensoredSample:
    """Read a time,status,x1..xp CSV; log times are taken here"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise BadInput(f"Cannot read {path}: {e}")
    sample = CensoredSample.from_frame(frame)
    logger.debug(f"Loaded {path}: n={sample.n} p={sample.p} censored={sample.censoring_rate:.3f}")
    return sample


def write_csv(sample: CensoredSample, path: str) -> None:
    sample.to_frame().to_csv(path, index=False, float_format='%.17g')


@dataclass(frozen=True)
class ResidualView:
    """Residuals at one beta with the last-observation rule applied"""
    beta: np.ndarray
    e: np.ndarray
    order: np.ndarray
    delta_mod: np.ndarray
    delta: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.e.shape[0]

    @property
    def e_sorted(self) -> np.ndarray:
        return self.e[self.order]


def residuals(sample: CensoredSample, beta) -> ResidualView:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != sample.p:
        raise BadInput(f"beta has length {beta.shape[0]}, expected {sample.p}")
    if not np.all(np.isfinite(beta)):
        raise NonFinite("beta must be finite")

    with np.errstate(over='ignore', invalid='ignore'):
        e = sample.y - sample.x @ beta
    if not np.all(np.isfinite(e)):
        raise NonFinite("Residual overflow", beta=beta.tolist())

    # exact ties only; every observation sharing the maximum becomes a failure
    delta_mod = sample.delta.copy()
    delta_mod[e == e.max()] = 1

    order = np.argsort(e, kind='stable')
    return ResidualView(
        beta=_frozen(beta),
        e=_frozen(e),
        order=_frozen(order, dtype=np.intp),
        delta_mod=_frozen(delta_mod, dtype=np.int8),
        delta=sample.delta
    )
