"""Episode loop, Monte-Carlo replication and evaluation metrics.

An episode starts with a round-robin warm-up (``2K`` rounds for conformal
policies so every arm has one training and one calibration point, ``K`` rounds
for the UCB family).  Each later round computes an interval and an index per
arm, takes the argmax, optionally randomises it, observes the chosen arm
(partial feedback) or every arm (full feedback), and updates the observed
arms' histories and adaptive miscoverage levels.

The reward matrix of an episode is drawn up front from its own stream, so all
policies face identical rewards for a given replicate seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conformal import ArmState, PredictorKind, SplitRule, aci_update, predict_interval
from .environments import RewardModel, sample_rounds
from .errors import ConfigurationError
from .policies import (
    PolicyKind,
    PolicySpec,
    Regime,
    cp_index,
    epsilon_at,
    mv_ucb1_index,
    randomise,
    regime_cp_index,
    regime_mv_index,
    select,
    ucb1_index,
)

__all__ = [
    "CPConfig",
    "EpisodeTrace",
    "Feedback",
    "MetricsSummary",
    "best_arm_curve",
    "coverage_and_width",
    "play",
    "regret_curve",
    "replicate_rngs",
    "run_episode",
    "run_monte_carlo",
    "summarise",
    "warmup_length",
]


class Feedback(str, enum.Enum):
    PARTIAL = "partial"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Feedback":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigurationError(f"unknown feedback mode {value!r}; valid: partial, full") from None


@dataclass(frozen=True)
class CPConfig:
    """Conformal settings shared by every arm of an episode."""

    alpha: float = 0.2
    aci: bool = True
    aci_step: float = 0.005
    split_rule: SplitRule = SplitRule.ALTERNATING
    predictor: PredictorKind = PredictorKind.CONSTANT
    ridge: float = 0.0
    tie_rule: str = "random"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.aci_step <= 0:
            raise ConfigurationError(f"ACI step must be positive, got {self.aci_step}")
        object.__setattr__(self, "split_rule", SplitRule.parse(self.split_rule))
        object.__setattr__(self, "predictor", PredictorKind.parse(self.predictor))


def warmup_length(kind: PolicyKind, n_arms: int) -> int:
    kind = PolicyKind.parse(kind)
    return 2 * n_arms if kind.is_conformal else n_arms


@dataclass
class EpisodeTrace:
    """Per-round record of one episode.

    Arrays are indexed by round ``t - 1`` (and arm, 0-based).  ``lower`` and
    ``upper`` hold NaN for rounds in which no interval was formed.
    """

    chosen: np.ndarray  # (T,) int
    deterministic: np.ndarray  # (T,) int
    randomised: np.ndarray  # (T,) bool
    rewards: np.ndarray  # (T, K) potential rewards
    observed: np.ndarray  # (T, K) bool
    lower: np.ndarray  # (T, K)
    upper: np.ndarray  # (T, K)
    regimes: list | None = None
    warmup: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.chosen.size)

    @property
    def n_arms(self) -> int:
        return int(self.rewards.shape[1])

    @property
    def realised(self) -> np.ndarray:
        """Reward of the chosen arm in each round."""
        return self.rewards[np.arange(self.horizon), self.chosen]

    def pull_counts(self) -> np.ndarray:
        return self.observed.sum(axis=0)

    # -- serialisation -------------------------------------------------
    COLUMNS = ("t", "chosen", "deterministic", "randomised", "regime", "observed", "rewards", "lower", "upper")

    def records(self):
        """Yield one dict per round (arms 1-based), in ``COLUMNS`` order."""
        for i in range(self.horizon):
            yield {
                "t": i + 1,
                "chosen": int(self.chosen[i]) + 1,
                "deterministic": int(self.deterministic[i]) + 1,
                "randomised": bool(self.randomised[i]),
                "regime": None if self.regimes is None else _regime_name(self.regimes[i]),
                "observed": [int(k) + 1 for k in np.flatnonzero(self.observed[i])],
                "rewards": [float(v) for v in self.rewards[i]],
                "lower": [None if math.isnan(v) else float(v) for v in self.lower[i]],
                "upper": [None if math.isnan(v) else float(v) for v in self.upper[i]],
            }

    @classmethod
    def from_records(cls, records, warmup: int = 0, meta: dict | None = None) -> "EpisodeTrace":
        recs = list(records)
        T = len(recs)
        K = len(recs[0]["rewards"])
        observed = np.zeros((T, K), dtype=bool)
        for i, r in enumerate(recs):
            observed[i, [k - 1 for k in r["observed"]]] = True

        def arr(key):
            return np.array([[np.nan if v is None else v for v in r[key]] for r in recs], dtype=float)

        regimes = [r["regime"] for r in recs]
        return cls(
            chosen=np.array([r["chosen"] - 1 for r in recs]),
            deterministic=np.array([r["deterministic"] - 1 for r in recs]),
            randomised=np.array([r["randomised"] for r in recs], dtype=bool),
            rewards=arr("rewards"),
            observed=observed,
            lower=arr("lower"),
            upper=arr("upper"),
            regimes=None if all(g is None for g in regimes) else regimes,
            warmup=warmup,
            meta=dict(meta or {}),
        )


def _regime_name(r):
    if r is None:
        return None
    return r.value if isinstance(r, Regime) else str(r)


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------


def play(
    rewards: np.ndarray,
    spec: PolicySpec,
    rng: np.random.Generator,
    feedback: Feedback | str = Feedback.PARTIAL,
    cp: CPConfig = CPConfig(),
    regimes: Sequence[Regime] | Callable[[int], Regime] | None = None,
    contexts: np.ndarray | None = None,
    warmup: int | None = None,
) -> EpisodeTrace:
    """Run a policy against a fixed ``(T, K)`` matrix of potential rewards.

    ``regimes`` is required for regime-aware policies: either a sequence of
    length T or a callable ``regime(t)`` evaluated only after warm-up.
    ``contexts`` (``(T, p)``) feeds the linear quantile predictor; context
    ``t`` is known before round ``t`` is played.
    """
    rewards = np.asarray(rewards, dtype=float)
    T, K = rewards.shape
    kind = spec.kind
    feedback = Feedback.parse(feedback)
    if K < 2:
        raise ConfigurationError("need at least 2 arms")
    w = warmup_length(kind, K) if warmup is None else warmup
    if T <= w:
        raise ConfigurationError(f"horizon T={T} must exceed the warm-up length {w}")
    if kind.is_regime_aware and regimes is None:
        raise ConfigurationError(f"{kind.value} needs a regime sequence")
    if cp.predictor is PredictorKind.LINEAR and contexts is None and kind.is_conformal:
        raise ConfigurationError("linear quantile predictor needs contexts")
    regime_at = regimes if callable(regimes) else (lambda t: regimes[t - 1]) if regimes is not None else None

    states = [ArmState(k, alpha=cp.alpha) for k in range(K)]
    chosen = np.empty(T, dtype=np.int64)
    det = np.empty(T, dtype=np.int64)
    rand_flag = np.zeros(T, dtype=bool)
    observed = np.zeros((T, K), dtype=bool)
    lower = np.full((T, K), np.nan)
    upper = np.full((T, K), np.nan)
    regime_log: list | None = [None] * T if regime_at is not None else None
    full = feedback is Feedback.FULL
    contextual = cp.predictor is PredictorKind.LINEAR

    # interval cache: valid until the arm's state changes (or context changes)
    cache: list = [None] * K
    stale = [True] * K
    idx = np.empty(K)

    for t in range(1, T + 1):
        i = t - 1
        ctx = None if contexts is None else contexts[i]
        if t <= w:
            a = (t - 1) % K
            chosen[i] = det[i] = a
        else:
            regime = regime_at(t) if regime_at is not None else None
            if regime_log is not None:
                regime_log[i] = regime
            if kind.is_conformal:
                for k in range(K):
                    if stale[k] or contextual:
                        cache[k] = predict_interval(
                            states[k], ctx, cp.split_rule, cp.predictor, ridge=cp.ridge
                        )
                        stale[k] = False
                    iv = cache[k]
                    lower[i, k] = iv.lower
                    upper[i, k] = iv.upper
                    idx[k] = regime_cp_index(iv, regime) if kind is PolicyKind.REGIME_CP else cp_index(iv, spec)
            else:
                for k in range(K):
                    st = states[k]
                    n = st.pull_count
                    if kind is PolicyKind.UCB1:
                        v = ucb1_index(st, t, spec.beta)
                        half = math.sqrt(spec.beta * math.log(t) / (2 * n))
                    elif kind is PolicyKind.MV_UCB1:
                        v = mv_ucb1_index(st, t, spec.beta, spec.rho)
                        half = math.sqrt(spec.beta * math.log(t) / n)
                    else:
                        v = regime_mv_index(st, t, spec.beta, spec.rho, regime)
                        half = math.sqrt(spec.beta * math.log(t) / n)
                    idx[k] = v
                    lower[i, k] = st.mean - half
                    upper[i, k] = st.mean + half
            a_det = select(idx, cp.tie_rule, rng)
            eps = epsilon_at(t, K, spec.epsilon)
            d = randomise(a_det, eps, K, rng)
            a = d.chosen_arm
            chosen[i] = a
            det[i] = a_det
            rand_flag[i] = d.randomised

        seen = range(K) if full else (a,)
        for k in seen:
            y = rewards[i, k]
            observed[i, k] = True
            st = states[k]
            if cp.aci and kind.is_conformal and not math.isnan(lower[i, k]):
                aci_update(st, lower[i, k] <= y <= upper[i, k], cp.aci_step, cp.alpha)
            st.add(y, ctx)
            stale[k] = True

    meta = {"policy": spec.describe(), "kind": kind.value, "feedback": feedback.value}
    return EpisodeTrace(chosen, det, rand_flag, rewards, observed, lower, upper, regime_log, w, meta)


def replicate_rngs(seed: int, replicate: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(reward stream, policy stream) for replicate ``replicate`` of ``seed``.

    Streams depend only on (seed, replicate), so replicates are independent of
    execution order and adding replicates leaves earlier ones unchanged.
    """
    rew = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate, 0)))
    pol = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate, 1)))
    return rew, pol


def run_episode(
    model: RewardModel,
    spec: PolicySpec,
    horizon: int,
    feedback: Feedback | str = Feedback.PARTIAL,
    seed: int = 0,
    replicate: int = 0,
    cp: CPConfig = CPConfig(),
    regimes=None,
) -> EpisodeTrace:
    w = warmup_length(spec.kind, model.n_arms)
    if horizon <= w:
        raise ConfigurationError(f"horizon T={horizon} must exceed the warm-up length {w}")
    rew_rng, pol_rng = replicate_rngs(seed, replicate)
    rewards = sample_rounds(model, horizon, rew_rng)
    trace = play(rewards, spec, pol_rng, feedback, cp, regimes=regimes)
    trace.meta.update(
        seed=seed,
        replicate=replicate,
        means=list(model.means),
        optimal_arm=model.optimal_arm,
    )
    return trace


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _gaps_of(trace: EpisodeTrace, means=None) -> np.ndarray:
    m = np.asarray(means if means is not None else trace.meta["means"], dtype=float)
    return m.max() - m


def regret_curve(trace: EpisodeTrace, means=None) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged and cumulative pseudo-regret of one episode.

    Returns ``(avg, cum)`` with ``avg[t-1] = cum[t-1] / t`` and
    ``cum[t-1] = sum_{i<=t} (mu* - mu_{a_i})``.
    """
    gaps = _gaps_of(trace, means)
    cum = np.cumsum(gaps[trace.chosen])
    return cum / np.arange(1, cum.size + 1), cum


def best_arm_curve(trace: EpisodeTrace, optimal_arm: int | None = None) -> np.ndarray:
    """Cumulative share of rounds in which the optimal arm was chosen."""
    k = trace.meta["optimal_arm"] if optimal_arm is None else optimal_arm
    hits = np.cumsum(trace.chosen == k)
    return hits / np.arange(1, hits.size + 1)


def coverage_and_width(trace: EpisodeTrace) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm coverage of the potential reward and mean interval width.

    Averages run over the rounds in which the arm had an interval; arms with
    no interval at all get NaN.
    """
    has = ~np.isnan(trace.lower)
    inside = (trace.lower <= trace.rewards) & (trace.rewards <= trace.upper)
    n = has.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = np.where(n > 0, (inside & has).sum(axis=0) / n, np.nan)
        width = np.where(n > 0, np.nansum(trace.upper - trace.lower, axis=0) / n, np.nan)
    return cov, width


@dataclass
class MetricsSummary:
    """Monte-Carlo aggregate for one policy.

    Curves have length T; ``*_lo``/``*_hi`` are the 2.5% and 97.5% empirical
    quantiles across replicates.  Coverage and width are per arm, averaged
    over replicates, with the across-replicate SD.
    """

    policy: str
    replicates: int
    horizon: int
    regret_mean: np.ndarray
    regret_lo: np.ndarray
    regret_hi: np.ndarray
    cum_regret_mean: np.ndarray
    cum_regret_lo: np.ndarray
    cum_regret_hi: np.ndarray
    best_arm_mean: np.ndarray
    best_arm_lo: np.ndarray
    best_arm_hi: np.ndarray
    coverage_mean: np.ndarray
    coverage_sd: np.ndarray
    width_mean: np.ndarray
    width_sd: np.ndarray
    final_regret: np.ndarray  # (M,) time-averaged regret at T per replicate

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsSummary":
        kw = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


def _band(x: np.ndarray):
    lo, hi = np.quantile(x, [0.025, 0.975], axis=0)
    return x.mean(axis=0), lo, hi


def summarise(traces: Sequence[EpisodeTrace], policy: str | None = None, means=None) -> MetricsSummary:
    """Aggregate the four evaluation metrics over replicate traces."""
    if not traces:
        raise ConfigurationError("no traces to summarise")
    avg, cum, best, cov, wid = [], [], [], [], []
    for tr in traces:
        a, c = regret_curve(tr, means)
        avg.append(a)
        cum.append(c)
        opt = int(np.argmax(np.asarray(means, dtype=float))) if means is not None else None
        best.append(best_arm_curve(tr, opt))
        cv, wd = coverage_and_width(tr)
        cov.append(cv)
        wid.append(wd)
    avg, cum, best, cov, wid = map(np.asarray, (avg, cum, best, cov, wid))
    r = _band(avg)
    c = _band(cum)
    b = _band(best)
    return MetricsSummary(
        policy=policy or traces[0].meta.get("policy", ""),
        replicates=len(traces),
        horizon=traces[0].horizon,
        regret_mean=r[0],
        regret_lo=r[1],
        regret_hi=r[2],
        cum_regret_mean=c[0],
        cum_regret_lo=c[1],
        cum_regret_hi=c[2],
        best_arm_mean=b[0],
        best_arm_lo=b[1],
        best_arm_hi=b[2],
        coverage_mean=cov.mean(axis=0),
        coverage_sd=cov.std(axis=0, ddof=1) if len(traces) > 1 else np.zeros(cov.shape[1]),
        width_mean=wid.mean(axis=0),
        width_sd=wid.std(axis=0, ddof=1) if len(traces) > 1 else np.zeros(wid.shape[1]),
        final_regret=avg[:, -1].copy(),
    )


def run_monte_carlo(
    model: RewardModel,
    spec: PolicySpec,
    horizon: int,
    replicates: int,
    seed: int = 0,
    feedback: Feedback | str = Feedback.PARTIAL,
    cp: CPConfig = CPConfig(),
    keep_traces: bool = False,
    progress: Callable[[int], None] | None = None,
):
    """Run ``replicates`` independent episodes and summarise them.

    Returns the :class:`MetricsSummary`, or ``(summary, traces)`` when
    ``keep_traces`` is set.
    """
    if replicates < 1:
        raise ConfigurationError(f"need at least one replicate, got {replicates}")
    traces = []
    for m in range(replicates):
        traces.append(run_episode(model, spec, horizon, feedback, seed, m, cp))
        if progress is not None:
            progress(m)
    summary = summarise(traces, spec.describe())
    return (summary, traces) if keep_traces else summary
