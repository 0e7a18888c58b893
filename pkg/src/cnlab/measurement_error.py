"""Measurement-error injection.

Observed values are modeled as ``Y = X + eps``. Four error modes are
supported:

* ``RANDOM_IID``: eps ~ N(0, sigma), centered and independent of everything.
* ``SYSTEMATIC_SHIFT``: eps ~ N(mu, sigma) with mu != 0, a location shift.
* ``COVARIATE_DEPENDENT``: eps ~ N(mu_z, sigma_z) where a Bernoulli covariate
  Z (independent of X) selects the parameters per affected row.
* ``VALUE_DEPENDENT``: eps ~ N(slope * (x - median), sigma), so the shift is a
  monotone (linear) function of the observed value itself.

The study grid only exercises the first two modes; the other two take
explicit parameter objects. In every mode only a random subset of rows
(the affected mask) is perturbed, each row being selected independently
with probability ``rate``. Throughout, the second normal parameter is a
standard deviation, not a variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .datagen import LabeledDataset
from .exceptions import InvalidParams, UnsupportedCondition
from .rng import RngStream

GRID_DIM = 3
GRID_RATES = (0.1, 0.2, 0.4)


class ErrorType(Enum):
    RANDOM_IID = "random"
    SYSTEMATIC_SHIFT = "systematic"
    COVARIATE_DEPENDENT = "covariate"
    VALUE_DEPENDENT = "value"


class VariablesAffected(Enum):
    ONE = "one"
    ALL = "all"


class Magnitude(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


_MAG_INDEX = {Magnitude.LOW: 0, Magnitude.MEDIUM: 1, Magnitude.HIGH: 2}

# Noise grids, one value per magnitude level (low, medium, high).
_RANDOM_SD = {
    VariablesAffected.ONE: ((4.0, 8.0, 16.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
    VariablesAffected.ALL: ((4.0, 8.0, 16.0), (2.0, 4.0, 16.0), (6.0, 12.0, 24.0)),
}
_SYSTEMATIC_MEAN = {
    VariablesAffected.ONE: ((2.5, 5.0, 10.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
    VariablesAffected.ALL: ((2.5, 5.0, 10.0), (-2.5, -5.0, -10.0), (1.25, 2.5, 5.0)),
}
_SYSTEMATIC_SD = 2.0


@dataclass(frozen=True)
class ErrorCondition:
    """One cell of the error design: mode, scope, severity and rate."""

    error_type: ErrorType
    variables: VariablesAffected
    magnitude: Magnitude | None
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "type": self.error_type.value,
            "variables": self.variables.value,
            "magnitude": self.magnitude.value if self.magnitude is not None else None,
            "rate": self.rate,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ErrorCondition":
        magnitude = Magnitude(doc["magnitude"]) if doc.get("magnitude") is not None else None
        return cls(
            error_type=ErrorType(doc["type"]),
            variables=VariablesAffected(doc["variables"]),
            magnitude=magnitude,
            rate=float(doc["rate"]),
        )


@dataclass(frozen=True)
class NoiseParams:
    """Per-variable (shift mean, shift sd); (0, 0) leaves a variable alone."""

    shift_means: np.ndarray
    shift_sds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.shift_means, dtype=float).reshape(-1)
        sds = np.asarray(self.shift_sds, dtype=float).reshape(-1)
        if means.size != sds.size:
            raise InvalidParams("shift means and sds must have equal length")
        if np.any(sds < 0):
            raise InvalidParams("shift sds must be nonnegative")
        object.__setattr__(self, "shift_means", means)
        object.__setattr__(self, "shift_sds", sds)

    @property
    def affected_variables(self) -> np.ndarray:
        return np.flatnonzero((self.shift_means != 0) | (self.shift_sds != 0))


@dataclass(frozen=True)
class CovariateShiftParams:
    """Explicit parameters for covariate-dependent error: a Bernoulli(pi_z)
    covariate Z, drawn independently of X, selects (mu0, sigma0) or
    (mu1, sigma1) for each affected row."""

    variables: tuple[int, ...]
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    pi_z: float = 0.5

    def __post_init__(self):
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise InvalidParams("sigmas must be nonnegative")
        if not 0.0 <= self.pi_z <= 1.0:
            raise InvalidParams("pi_z must lie in [0, 1]")
        object.__setattr__(self, "variables", tuple(int(v) for v in self.variables))


@dataclass(frozen=True)
class ValueDependentParams:
    """Explicit parameters for value-dependent error: the shift mean is
    ``slope * (x - column median)``, keeping overall location interpretable."""

    variables: tuple[int, ...]
    slope: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidParams("sigma must be nonnegative")
        object.__setattr__(self, "variables", tuple(int(v) for v in self.variables))


def resolve_noise_params(condition: ErrorCondition, d: int = GRID_DIM) -> NoiseParams:
    """Look up the study grid's per-variable noise parameters.

    Only the random and systematic-shift modes have grid entries; the
    covariate- and value-dependent modes take explicit parameter objects
    instead and raise :class:`UnsupportedCondition` here.
    """
    if condition.error_type in (ErrorType.COVARIATE_DEPENDENT, ErrorType.VALUE_DEPENDENT):
        raise UnsupportedCondition(f"{condition.error_type.value} error takes explicit parameters")
    if d != GRID_DIM:
        raise UnsupportedCondition(f"noise grids are defined for d={GRID_DIM}, got d={d}")
    if condition.magnitude is None:
        raise UnsupportedCondition("grid conditions require a magnitude level")
    level = _MAG_INDEX[condition.magnitude]
    if condition.error_type is ErrorType.RANDOM_IID:
        sds = [per_var[level] for per_var in _RANDOM_SD[condition.variables]]
        means = [0.0] * GRID_DIM
    else:
        means = [per_var[level] for per_var in _SYSTEMATIC_MEAN[condition.variables]]
        sds = [_SYSTEMATIC_SD if m != 0 else 0.0 for m in means]
    return NoiseParams(shift_means=np.array(means), shift_sds=np.array(sds))


def select_affected(n: int, rate: float, rng: RngStream) -> np.ndarray:
    """Boolean mask with entry i true iff U_i <= rate, U_i iid uniform.

    The affected count is Binomial(n, rate), not an exact fraction.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    return rng.generator.random(n) <= rate


def inject(
    data: LabeledDataset,
    condition: ErrorCondition,
    params: NoiseParams | CovariateShiftParams | ValueDependentParams,
    rng: RngStream,
) -> LabeledDataset:
    """Return a copy of ``data`` with measurement error added.

    A fresh affected mask is drawn from ``rng`` (rate taken from the
    condition), then per-row draws perturb the affected variables. Rows
    outside the mask, unaffected variables and all labels are returned
    unchanged; the input dataset is never mutated.
    """
    if data.n == 0:
        raise ValueError("data must be non-empty")
    values = data.values.copy()
    gen = rng.generator
    mask = gen.random(data.n) <= condition.rate
    rows = np.flatnonzero(mask)
    m = rows.size

    if condition.error_type in (ErrorType.RANDOM_IID, ErrorType.SYSTEMATIC_SHIFT):
        if not isinstance(params, NoiseParams):
            raise InvalidParams("random/systematic injection requires NoiseParams")
        if params.shift_means.size != data.dim:
            raise InvalidParams("params dimension does not match data")
        if condition.error_type is ErrorType.RANDOM_IID and np.any(params.shift_means != 0):
            raise InvalidParams("random error must have zero shift means")
        cols = params.affected_variables
        if m and cols.size:
            draws = params.shift_means[cols] + gen.standard_normal((m, cols.size)) * params.shift_sds[cols]
            values[np.ix_(rows, cols)] += draws
    elif condition.error_type is ErrorType.COVARIATE_DEPENDENT:
        if not isinstance(params, CovariateShiftParams):
            raise InvalidParams("covariate-dependent injection requires CovariateShiftParams")
        cols = np.asarray(params.variables, dtype=int)
        if m and cols.size:
            z = gen.random(m) < params.pi_z
            mu = np.where(z, params.mu1, params.mu0)
            sigma = np.where(z, params.sigma1, params.sigma0)
            draws = mu[:, None] + gen.standard_normal((m, cols.size)) * sigma[:, None]
            values[np.ix_(rows, cols)] += draws
    elif condition.error_type is ErrorType.VALUE_DEPENDENT:
        if not isinstance(params, ValueDependentParams):
            raise InvalidParams("value-dependent injection requires ValueDependentParams")
        cols = np.asarray(params.variables, dtype=int)
        if m and cols.size:
            medians = np.median(data.values[:, cols], axis=0)
            mu = params.slope * (values[np.ix_(rows, cols)] - medians)
            draws = mu + gen.standard_normal((m, cols.size)) * params.sigma
            values[np.ix_(rows, cols)] += draws
    else:  # pragma: no cover
        raise InvalidParams(f"unknown error type {condition.error_type}")

    return LabeledDataset(values=values, labels=data.labels.copy())
