"""Stochastic K-armed reward processes.

Three noise families are supported:

* ``GAUSSIAN``: ``Y_k = mu_k + sigma * Z`` with ``Z ~ N(0, 1)``.
* ``STUDENT_T``: ``Y_k = mu_k + sigma * T`` with ``T`` a *standard* Student-t
  draw with ``dof`` degrees of freedom.  By default ``T`` is not rescaled, so
  its variance is ``dof / (dof - 2)``; set ``standardize=True`` on the model to
  rescale it to unit variance.
* ``SKEW_T``: ``Y_k = mu_k + sigma * S_k`` with ``S_k`` an Azzalini skew-t draw
  with per-arm shape ``skew_shapes[k]``, affinely standardised to zero mean and
  unit variance using its closed-form moments.

Every round draws the full vector of K potential rewards so that counterfactual
coverage can be evaluated for arms that were not pulled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "RewardFamily",
    "RewardModel",
    "RewardVector",
    "sample_round",
    "sample_rounds",
    "standard_skew_t",
    "standardized_noise",
    "skew_t_moments",
]


class RewardFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"
    SKEW_T = "skew_t"

    @classmethod
    def parse(cls, value: "str | RewardFamily") -> "RewardFamily":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"normal": "gaussian", "t": "student_t", "studentt": "student_t", "skewt": "skew_t"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ConfigurationError(f"unknown reward family {value!r}; valid: {valid}") from None


def skew_t_moments(dof: float, shape: float) -> tuple[float, float]:
    """Mean and variance of the Azzalini skew-t with ``dof`` and ``shape``."""
    if dof <= 2:
        raise ConfigurationError(f"skew-t variance undefined for dof={dof} (need dof > 2)")
    delta = shape / math.sqrt(1.0 + shape * shape)
    b = math.sqrt(dof / math.pi) * math.exp(math.lgamma((dof - 1) / 2) - math.lgamma(dof / 2))
    mean = b * delta
    var = dof / (dof - 2) - mean * mean
    return mean, var


def _skew_t_draws(dof: float, shapes: np.ndarray, size: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    # Stochastic representation: Z = delta |U0| + sqrt(1 - delta^2) U1 is skew-normal,
    # and Z / sqrt(V / dof) with V ~ chi2(dof) is skew-t.
    shapes = np.asarray(shapes, dtype=float)
    delta = shapes / np.sqrt(1.0 + shapes**2)
    u0 = rng.standard_normal(size)
    u1 = rng.standard_normal(size)
    v = rng.chisquare(dof, size)
    z = delta * np.abs(u0) + np.sqrt(1.0 - delta**2) * u1
    x = z / np.sqrt(v / dof)
    b = math.sqrt(dof / math.pi) * math.exp(math.lgamma((dof - 1) / 2) - math.lgamma(dof / 2))
    mean = b * delta
    sd = np.sqrt(dof / (dof - 2) - mean**2)
    return (x - mean) / sd


def standard_skew_t(dof: float, shape: float, rng: np.random.Generator, size=None):
    """Draw from the standardised (zero mean, unit variance) Azzalini skew-t.

    ``shape = 0`` gives the Student-t rescaled by ``sqrt((dof - 2) / dof)``.
    Returns a float when ``size`` is None, otherwise an array of that shape.
    """
    if dof <= 2:
        raise ConfigurationError(f"skew-t requires dof > 2 for a finite variance, got {dof}")
    out = _skew_t_draws(dof, np.asarray(shape, dtype=float), () if size is None else size, rng)
    return float(out) if size is None else out


def standardized_noise(
    family: "RewardFamily | str",
    rng: np.random.Generator,
    size,
    dof: float | None = None,
    shape: float = 0.0,
) -> np.ndarray:
    """Zero-mean, unit-variance noise from ``family``."""
    family = RewardFamily.parse(family)
    if family is RewardFamily.GAUSSIAN:
        return rng.standard_normal(size)
    if dof is None or dof <= 2:
        raise ConfigurationError(f"{family.value} noise requires dof > 2, got {dof}")
    if family is RewardFamily.STUDENT_T:
        return rng.standard_t(dof, size) * math.sqrt((dof - 2) / dof)
    return _skew_t_draws(dof, np.asarray(shape, dtype=float), size, rng)


@dataclass(frozen=True)
class RewardModel:
    """Immutable generator of K potential rewards per round.

    Parameters
    ----------
    kind : RewardFamily
    means : sequence of float
        Arm means ``mu_k``; exactly one arm must attain the maximum.
    scale : float
        Noise scale ``sigma`` (> 0).
    dof : float, optional
        Degrees of freedom for the t families (> 2).
    skew_shapes : sequence of float, optional
        Per-arm skew-t shape; required for ``SKEW_T``.
    standardize : bool
        Rescale Student-t noise to unit variance.  Ignored by the other
        families (Gaussian is already standard, skew-t is always standardised).
    """

    kind: RewardFamily
    means: tuple[float, ...]
    scale: float
    dof: float | None = None
    skew_shapes: tuple[float, ...] | None = None
    standardize: bool = False
    _means_arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardFamily.parse(self.kind))
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if len(means) < 2:
            raise ConfigurationError(f"need at least 2 arms, got {len(means)}")
        if not all(math.isfinite(m) for m in means):
            raise ConfigurationError("arm means must be finite")
        top = max(means)
        if sum(m == top for m in means) != 1:
            raise ConfigurationError(f"optimal arm must be unique, got means {means}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if self.kind is not RewardFamily.GAUSSIAN:
            if self.dof is None or not self.dof > 2:
                raise ConfigurationError(f"{self.kind.value} requires dof > 2, got {self.dof}")
        if self.kind is RewardFamily.SKEW_T:
            if self.skew_shapes is None or len(self.skew_shapes) != len(means):
                raise ConfigurationError("skew_t requires one skew shape per arm")
            object.__setattr__(self, "skew_shapes", tuple(float(s) for s in self.skew_shapes))
        object.__setattr__(self, "_means_arr", np.asarray(means))

    @property
    def n_arms(self) -> int:
        return len(self.means)

    @property
    def optimal_arm(self) -> int:
        """0-based index of the optimal arm."""
        return int(np.argmax(self._means_arr))

    @property
    def gaps(self) -> np.ndarray:
        return self._means_arr.max() - self._means_arr

    def noise(self, n_rounds: int, rng: np.random.Generator) -> np.ndarray:
        shape = (n_rounds, self.n_arms)
        if self.kind is RewardFamily.GAUSSIAN:
            return rng.standard_normal(shape)
        if self.kind is RewardFamily.STUDENT_T:
            z = rng.standard_t(self.dof, shape)
            return z * math.sqrt((self.dof - 2) / self.dof) if self.standardize else z
        return _skew_t_draws(self.dof, np.asarray(self.skew_shapes), shape, rng)


@dataclass(frozen=True)
class RewardVector:
    values: np.ndarray
    round: int


def sample_rounds(model: RewardModel, n_rounds: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``(n_rounds, K)`` matrix of potential rewards."""
    return model._means_arr + model.scale * model.noise(n_rounds, rng)


def sample_round(model: RewardModel, rng: np.random.Generator, t: int = 1) -> RewardVector:
    """Draw the K potential rewards of round ``t``."""
    if t < 1:
        raise ConfigurationError(f"round index must be >= 1, got {t}")
    return RewardVector(values=sample_rounds(model, 1, rng)[0], round=t)
