"""Arm-selection indices and their resolution into a decision.

Index-based policies (K arms, round ``t``):

=====================  ===================================================
``UCB1``               ``mean + sqrt(beta log t / (2 N))``
``MV_UCB1``            ``rho mean - (1 - rho) sd + sqrt(beta log t / N)``
``CP_UCB``             ``U``
``CP_BANDIT``          ``(1 - lam) U - lam |L|``
``CP_ESI``             ``U / |L|``
``REGIME_CP``          ``U`` in Bull/Neutral, ``-|L|`` in Bear
``REGIME_MV_UCB1``     ``mean + bonus`` in Bull/Neutral, ``MV + bonus`` in Bear
=====================  ===================================================

where ``[L, U]`` is the arm's conformal interval.  The argmax of the indices
may be randomised: with probability ``eps`` one of the other K - 1 arms is
drawn uniformly instead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .conformal import ArmState, ConformalInterval
from .errors import ConfigurationError, InvalidIndexError

__all__ = [
    "ESI_FLOOR",
    "Decision",
    "EpsilonSchedule",
    "PolicyKind",
    "PolicySpec",
    "Regime",
    "cp_index",
    "epsilon_at",
    "mv_ucb1_index",
    "randomise",
    "regime_cp_index",
    "regime_mv_index",
    "select",
    "ucb1_index",
]

ESI_FLOOR = 1e-12


class PolicyKind(str, enum.Enum):
    UCB1 = "ucb1"
    MV_UCB1 = "mv_ucb1"
    CP_UCB = "cp_ucb"
    CP_BANDIT = "cp_bandit"
    CP_ESI = "cp_esi"
    REGIME_CP = "regime_cp"
    REGIME_MV_UCB1 = "regime_mv_ucb1"

    @classmethod
    def parse(cls, value) -> "PolicyKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "mvucb1": "mv_ucb1",
            "cpucb": "cp_ucb",
            "cpbandit": "cp_bandit",
            "cpesi": "cp_esi",
            "regimeawarecp": "regime_cp",
            "regime_aware_cp": "regime_cp",
            "regimeawaremvucb1": "regime_mv_ucb1",
            "regime_aware_mv_ucb1": "regime_mv_ucb1",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ConfigurationError(f"unknown policy kind {value!r}; valid kinds: {valid}") from None

    @property
    def is_conformal(self) -> bool:
        return self in (PolicyKind.CP_UCB, PolicyKind.CP_BANDIT, PolicyKind.CP_ESI, PolicyKind.REGIME_CP)

    @property
    def is_regime_aware(self) -> bool:
        return self in (PolicyKind.REGIME_CP, PolicyKind.REGIME_MV_UCB1)


class Regime(str, enum.Enum):
    BULL = "bull"
    NEUTRAL = "neutral"
    BEAR = "bear"


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exploration probability over rounds.

    ``mode`` is ``"none"`` (always 0), ``"constant"`` (``value``) or
    ``"decay"`` (``t**-value / (K - 1)``).
    """

    mode: str = "none"
    value: float = 0.0

    def __post_init__(self):
        mode = str(self.mode).strip().lower()
        object.__setattr__(self, "mode", mode)
        if mode not in ("none", "constant", "decay"):
            raise ConfigurationError(f"unknown epsilon schedule {self.mode!r}; valid: none, constant, decay")
        if mode == "constant" and not 0 <= self.value < 1:
            raise ConfigurationError(f"constant epsilon must lie in [0, 1), got {self.value}")
        if mode == "decay" and not self.value > 0:
            raise ConfigurationError(f"decay exponent gamma must be positive, got {self.value}")

    @classmethod
    def none(cls):
        return cls("none", 0.0)

    @classmethod
    def constant(cls, eps: float):
        return cls("constant", eps)

    @classmethod
    def decay(cls, gamma: float):
        return cls("decay", gamma)

    def __str__(self):
        return "none" if self.mode == "none" else f"{self.mode}({self.value:g})"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    beta: float = 2.0
    rho: float = 0.5
    lam: float = 0.0
    epsilon: EpsilonSchedule = EpsilonSchedule()

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind.parse(self.kind))
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.rho <= 1:
            raise ConfigurationError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0 <= self.lam <= 1:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")

    def describe(self) -> str:
        k = self.kind
        if k is PolicyKind.CP_BANDIT:
            return f"CP-Bandit(lambda={self.lam:g})"
        return {
            PolicyKind.UCB1: "UCB1",
            PolicyKind.MV_UCB1: "MV-UCB1",
            PolicyKind.CP_UCB: "CP-UCB",
            PolicyKind.CP_ESI: "CP-ESI",
            PolicyKind.REGIME_CP: "Regime-Aware CP",
            PolicyKind.REGIME_MV_UCB1: "Regime-Aware MV-UCB1",
        }[k]


@dataclass(frozen=True)
class Decision:
    chosen_arm: int
    deterministic_arm: int
    indices: np.ndarray
    randomised: bool


# ---------------------------------------------------------------------------
# Index functions
# ---------------------------------------------------------------------------


def _bonus(n: int, t: int, beta: float, denom_factor: float) -> float:
    return math.sqrt(beta * math.log(t) / (denom_factor * n))


def ucb1_index(state: ArmState, t: int, beta: float = 2.0) -> float:
    """UCB1 index; ``+inf`` for an arm that has never been pulled."""
    n = state.pull_count
    if n == 0:
        return math.inf
    if t < 1:
        raise ConfigurationError(f"round must be >= 1, got {t}")
    return state.mean + _bonus(n, t, beta, 2.0)


def mv_ucb1_index(state: ArmState, t: int, beta: float = 2.0, rho: float = 0.5) -> float:
    """Mean-variance UCB1 index.  The bonus uses ``N``, not ``2N``."""
    n = state.pull_count
    if n == 0:
        return math.inf
    if t < 1:
        raise ConfigurationError(f"round must be >= 1, got {t}")
    return rho * state.mean - (1.0 - rho) * state.sd + _bonus(n, t, beta, 1.0)


def cp_index(interval: ConformalInterval, spec: PolicySpec) -> float:
    u, lo = interval.upper, interval.lower
    kind = spec.kind
    if kind is PolicyKind.CP_UCB:
        return u
    if kind is PolicyKind.CP_BANDIT:
        return (1.0 - spec.lam) * u - spec.lam * abs(lo)
    if kind is PolicyKind.CP_ESI:
        return u / max(abs(lo), ESI_FLOOR)
    raise ConfigurationError(f"{kind.value} is not a stationary conformal policy")


def regime_cp_index(interval: ConformalInterval, regime: Regime) -> float:
    if regime is Regime.BEAR:
        return -abs(interval.lower)
    return interval.upper


def regime_mv_index(state: ArmState, t: int, beta: float, rho: float, regime: Regime) -> float:
    if regime is Regime.BEAR:
        return mv_ucb1_index(state, t, beta, rho)
    n = state.pull_count
    if n == 0:
        return math.inf
    return state.mean + _bonus(n, t, beta, 1.0)


# ---------------------------------------------------------------------------
# Selection and randomisation
# ---------------------------------------------------------------------------


def select(indices, tie_rule: str = "random", rng: np.random.Generator | None = None) -> int:
    """0-based argmax of ``indices``; NaN entries never win.

    Ties are broken uniformly at random (``tie_rule="random"``, needs ``rng``)
    or towards the lowest index (``"first"``).
    """
    idx = np.asarray(indices, dtype=float)
    if idx.ndim != 1 or idx.size < 2:
        raise InvalidIndexError(f"need a vector of at least 2 indices, got shape {idx.shape}")
    if np.isnan(idx).all():
        raise InvalidIndexError("all selection indices are NaN")
    top = np.nanmax(idx)
    winners = np.flatnonzero(idx == top)
    if winners.size == 1 or tie_rule == "first":
        return int(winners[0])
    if tie_rule != "random":
        raise ConfigurationError(f"unknown tie rule {tie_rule!r}; valid: random, first")
    if rng is None:
        raise ConfigurationError("random tie-breaking needs a random generator")
    return int(winners[rng.integers(winners.size)])


def epsilon_at(t: int, n_arms: int, schedule: EpsilonSchedule) -> float:
    if t < 1:
        raise ConfigurationError(f"round must be >= 1, got {t}")
    if schedule.mode == "none":
        return 0.0
    if schedule.mode == "constant":
        return schedule.value
    if n_arms < 2:
        raise ConfigurationError("decaying exploration needs at least 2 arms")
    return t ** (-schedule.value) / (n_arms - 1)


def randomise(
    deterministic_arm: int,
    eps: float,
    n_arms: int,
    rng: np.random.Generator,
    indices=None,
) -> Decision:
    """Keep ``deterministic_arm`` w.p. ``1 - eps``, else a uniform other arm."""
    if n_arms < 2:
        raise ConfigurationError("randomisation needs at least 2 arms")
    if not 0 <= eps < 1:
        raise ConfigurationError(f"eps must lie in [0, 1), got {eps}")
    idx = np.asarray(indices, dtype=float) if indices is not None else np.full(n_arms, np.nan)
    # one Bernoulli draw per call keeps streams aligned across eps values
    if rng.random() < eps:
        other = int(rng.integers(n_arms - 1))
        chosen = other if other < deterministic_arm else other + 1
        return Decision(chosen, deterministic_arm, idx, True)
    return Decision(deterministic_arm, deterministic_arm, idx, False)


def arm_probabilities(deterministic_arm: int, eps: float, n_arms: int) -> np.ndarray:
    """Selection law of :func:`randomise` as a probability vector."""
    p = np.full(n_arms, eps / (n_arms - 1))
    p[deterministic_arm] = 1.0 - eps
    return p
