"""Gaussian-emission hidden Markov model for market regime detection.

The model has ``S`` hidden states with initial law ``delta``, row-stochastic
transition matrix ``A`` and univariate Gaussian emissions ``N(mu_s, var_s)``.
Parameters are fitted by Baum-Welch (EM) with scaled forward-backward
recursions.  Regimes are read off the *filtering* distribution
``P(Z_t = s | R_1..R_t)`` so no future observation leaks into a label.

States are mapped to Bull / Neutral / Bear by sorting emission variances in
ascending order (ties broken by higher mean first).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .policies import Regime

__all__ = [
    "VAR_FLOOR",
    "HmmModel",
    "RegimeMap",
    "causal_regimes",
    "em_fit",
    "filter_path",
    "forward_filter",
    "infer_regime",
    "label_states",
    "log_likelihood",
    "model_from_dict",
    "model_to_dict",
]

VAR_FLOOR = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HmmModel:
    initial: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_path: tuple[float, ...] = ()
    degenerate: bool = False

    def __post_init__(self):
        d = np.asarray(self.initial, dtype=float)
        A = np.atleast_2d(np.asarray(self.transition, dtype=float))
        mu = np.asarray(self.means, dtype=float).ravel()
        var = np.asarray(self.variances, dtype=float).ravel()
        S = d.size
        if S < 1 or A.shape != (S, S) or mu.size != S or var.size != S:
            raise ConfigurationError(
                f"inconsistent HMM shapes: initial {d.shape}, transition {A.shape}, means {mu.shape}, variances {var.shape}"
            )
        if (d < 0).any() or abs(d.sum() - 1.0) > 1e-8:
            raise ConfigurationError("initial distribution must be non-negative and sum to 1")
        if (A < 0).any() or np.abs(A.sum(axis=1) - 1.0).max() > 1e-8:
            raise ConfigurationError("transition rows must be non-negative and sum to 1")
        if not (var > 0).all():
            raise ConfigurationError("emission variances must be positive")
        for name, arr in (("initial", d), ("transition", A), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "loglik_path", tuple(float(v) for v in self.loglik_path))

    @property
    def n_states(self) -> int:
        return int(self.initial.size)

    def permuted(self, order) -> "HmmModel":
        """Same model with states relabelled so that new state i is old ``order[i]``."""
        p = np.asarray(order, dtype=int)
        return HmmModel(
            self.initial[p],
            self.transition[np.ix_(p, p)],
            self.means[p],
            self.variances[p],
            self.loglik_path,
            self.degenerate,
        )


# ---------------------------------------------------------------------------
# Forward-backward
# ---------------------------------------------------------------------------


def _log_emissions(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    diff = x[:, None] - means[None, :]
    return -0.5 * (_LOG_2PI + np.log(variances)[None, :] + diff * diff / variances[None, :])


def _as_series(returns) -> np.ndarray:
    x = np.asarray(returns, dtype=float).ravel()
    if x.size == 0:
        raise InsufficientDataError("return series is empty")
    if not np.isfinite(x).all():
        raise ConfigurationError("return series contains non-finite values")
    return x


def _forward(model: HmmModel, x: np.ndarray, warn: bool = True):
    """Scaled forward pass.

    Returns filtered probabilities (T, S), emissions divided by their row
    maximum (T, S), the per-step normalisers in those shifted units (T,) and
    the log normalisers in original units (T,).
    """
    logb = _log_emissions(x, model.means, model.variances)
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    T, S = b.shape
    alpha = np.empty((T, S))
    scale = np.empty(T)
    logc = np.empty(T)
    prev = model.initial
    fallbacks = 0
    for t in range(T):
        a = (prev if t == 0 else prev @ model.transition) * b[t]
        c = a.sum()
        if not c > 0:
            # every reachable state has zero density: restart from a uniform prior
            fallbacks += 1
            c = float(b[t].sum()) / S
            a = b[t] / (c * S) if c > 0 else np.full(S, 1.0 / S)
            c = c or 1.0
        else:
            a = a / c
        alpha[t] = a
        scale[t] = c
        logc[t] = math.log(c) + shift[t]
        prev = a
    if fallbacks and warn:
        warnings.warn(f"{fallbacks} observation(s) had zero likelihood under all reachable states; restarted the filter from a uniform prior")
    return alpha, b, scale, logc


def filter_path(model: HmmModel, returns) -> np.ndarray:
    """Filtered state probabilities ``P(Z_t = s | R_1..R_t)`` for every t, shape (T, S)."""
    return _forward(model, _as_series(returns))[0]


def forward_filter(model: HmmModel, returns) -> np.ndarray:
    """Filtering distribution at the last observation of ``returns``."""
    return filter_path(model, returns)[-1]


def log_likelihood(model: HmmModel, returns) -> float:
    return float(_forward(model, _as_series(returns))[3].sum())


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------


def _quantile_init(x: np.ndarray, S: int, var_floor: float) -> HmmModel:
    # split the sorted values into S equal-count blocks; one state per block
    blocks = np.array_split(np.sort(x), S)
    means = np.array([blk.mean() for blk in blocks])
    pooled = x.var()
    variances = np.array([blk.var() if blk.size > 1 else pooled for blk in blocks])
    variances = np.maximum(variances, max(var_floor, 1e-3 * pooled))
    stay = 0.9
    A = np.full((S, S), (1.0 - stay) / (S - 1))
    np.fill_diagonal(A, stay)
    return HmmModel(np.full(S, 1.0 / S), A, means, variances)


def _random_init(x: np.ndarray, S: int, var_floor: float, rng: np.random.Generator) -> HmmModel:
    means = rng.choice(x, size=S, replace=False) if x.size >= S else rng.normal(x.mean(), x.std() + 1e-12, S)
    variances = np.maximum(x.var() * rng.uniform(0.5, 1.5, S), var_floor)
    A = rng.dirichlet(np.full(S, 1.0) + 5.0 * np.eye(S)[0], size=S)
    A = np.array([np.roll(row, i) for i, row in enumerate(A)])
    return HmmModel(rng.dirichlet(np.ones(S)), A, np.sort(means), variances)


def _em_step(model: HmmModel, x: np.ndarray, var_floor: float):
    alpha, b, scale, logc = _forward(model, x, warn=False)
    T, S = alpha.shape
    A = model.transition
    beta = np.empty((T, S))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (b[t + 1] * beta[t + 1])) / scale[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    # pairwise posteriors P(Z_t = i, Z_{t+1} = j | R), summed over t
    xi = alpha[:-1, :, None] * A[None] * ((b[1:] * beta[1:]) / scale[1:, None])[:, None, :]
    xi /= xi.sum(axis=(1, 2), keepdims=True)
    xi_sum = xi.sum(axis=0)
    occ = gamma.sum(axis=0)
    initial = gamma[0] / gamma[0].sum()
    rows = xi_sum.sum(axis=1, keepdims=True)
    transition = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), A)
    safe = np.where(occ > 0, occ, 1.0)
    means = np.where(occ > 0, gamma.T @ x / safe, model.means)
    dev = x[:, None] - means[None, :]
    variances = np.where(occ > 0, (gamma * dev * dev).sum(axis=0) / safe, model.variances)
    variances = np.maximum(variances, var_floor)
    return HmmModel(initial, transition, means, variances), float(logc.sum())


def em_fit(
    returns,
    n_states: int = 3,
    max_iter: int = 200,
    tol: float = 1e-8,
    var_floor: float = VAR_FLOOR,
    init: HmmModel | str = "quantile",
    restarts: int = 0,
    rng: np.random.Generator | None = None,
) -> HmmModel:
    """Fit an ``n_states`` Gaussian HMM to ``returns`` by EM.

    ``init`` is ``"quantile"`` (deterministic segmentation by value),
    ``"random"`` (needs ``rng``) or an explicit starting model.  With
    ``restarts > 0`` that many extra random starts are tried and the fit with
    the highest final log-likelihood is kept.  Iteration stops once the
    log-likelihood gain drops below ``tol`` or after ``max_iter`` steps;
    ``loglik_path`` records the log-likelihood before every update and after
    the last one.
    """
    x = _as_series(returns)
    S = int(n_states)
    if S < 1:
        raise ConfigurationError(f"need at least one state, got {S}")
    if x.size < 10 * S:
        raise InsufficientDataError(f"need at least {10 * S} observations for {S} states, got {x.size}")

    if x.var() <= var_floor:
        warnings.warn("return series is (near-)constant; emission variances set to the floor")
        A = np.full((S, S), 1.0 / S)
        m = HmmModel(np.full(S, 1.0 / S), A, np.full(S, x.mean()), np.full(S, var_floor), degenerate=True)
        return HmmModel(m.initial, m.transition, m.means, m.variances, (log_likelihood(m, x),), True)

    if S == 1:
        m = HmmModel(np.ones(1), np.ones((1, 1)), np.array([x.mean()]), np.array([max(x.var(), var_floor)]))
        return HmmModel(m.initial, m.transition, m.means, m.variances, (log_likelihood(m, x),))

    if isinstance(init, HmmModel):
        starts = [init]
    elif init == "quantile":
        starts = [_quantile_init(x, S, var_floor)]
    elif init == "random":
        if rng is None:
            raise ConfigurationError("random initialisation needs a random generator")
        starts = [_random_init(x, S, var_floor, rng)]
    else:
        raise ConfigurationError(f"unknown init rule {init!r}; valid: quantile, random")
    if restarts:
        if rng is None:
            raise ConfigurationError("random restarts need a random generator")
        starts += [_random_init(x, S, var_floor, rng) for _ in range(restarts)]

    best = None
    for start in starts:
        model, path = start, []
        for _ in range(max_iter):
            new, ll = _em_step(model, x, var_floor)
            path.append(ll)
            model = new
            if len(path) > 1 and path[-1] - path[-2] < tol:
                break
        path.append(log_likelihood(model, x))
        fitted = HmmModel(model.initial, model.transition, model.means, model.variances, tuple(path))
        if best is None or path[-1] > best.loglik_path[-1]:
            best = fitted
    return best


# ---------------------------------------------------------------------------
# Regime labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeMap:
    """Label of each hidden state (index = state, 0-based)."""

    state_to_label: tuple[Regime, ...]
    _rank: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(Regime(v) if not isinstance(v, Regime) else v for v in self.state_to_label)
        if sorted(r.value for r in labels) != sorted(r.value for r in Regime):
            raise ConfigurationError(f"regime map must be a permutation of bull/neutral/bear, got {labels}")
        object.__setattr__(self, "state_to_label", labels)
        order = [Regime.BULL, Regime.NEUTRAL, Regime.BEAR]
        object.__setattr__(self, "_rank", tuple(order.index(r) for r in labels))

    @classmethod
    def identity(cls) -> "RegimeMap":
        return cls((Regime.BULL, Regime.NEUTRAL, Regime.BEAR))

    def label(self, state: int) -> Regime:
        return self.state_to_label[state]

    def state_of(self, regime: Regime) -> int:
        return self.state_to_label.index(Regime(regime))


def label_states(model: HmmModel, rule: str = "variance") -> RegimeMap:
    """Bull / Neutral / Bear by ascending emission variance (ties: higher mean first)."""
    if model.n_states != 3:
        raise ConfigurationError(f"regime labelling needs exactly 3 states, got {model.n_states}")
    if rule == "variance":
        order = sorted(range(3), key=lambda s: (model.variances[s], -model.means[s], s))
    elif rule == "mean":
        order = sorted(range(3), key=lambda s: (-model.means[s], model.variances[s], s))
    else:
        raise ConfigurationError(f"unknown labelling rule {rule!r}; valid: variance, mean")
    labels = [None] * 3
    for regime, s in zip((Regime.BULL, Regime.NEUTRAL, Regime.BEAR), order):
        labels[s] = regime
    return RegimeMap(tuple(labels))


def _pick_state(probs: np.ndarray, regime_map: RegimeMap) -> int:
    top = probs.max()
    tied = np.flatnonzero(probs == top)
    # exact ties go to the calmest state
    return int(min(tied, key=lambda s: regime_map._rank[s]))


def infer_regime(model: HmmModel, returns, regime_map: RegimeMap | None = None) -> Regime:
    """Regime of the filtered argmax state at the last observation."""
    regime_map = regime_map or label_states(model)
    return regime_map.label(_pick_state(forward_filter(model, returns), regime_map))


def causal_regimes(
    returns,
    burn_in: int,
    n_states: int = 3,
    refit_every: int | None = None,
    **fit_kwargs,
) -> tuple[list, HmmModel, RegimeMap]:
    """Regime label for every index of ``returns`` using only data up to it.

    The model is fitted once on ``returns[:burn_in]`` (and refitted on the
    expanding window every ``refit_every`` observations when given).  Entries
    before ``burn_in`` are ``None``.  Returns (labels, last model, last map).
    """
    x = _as_series(returns)
    if burn_in < 10 * n_states:
        raise ConfigurationError(f"HMM burn-in must be at least {10 * n_states} observations, got {burn_in}")
    if x.size < burn_in:
        raise ConfigurationError(f"series of length {x.size} is shorter than the HMM burn-in {burn_in}")
    labels: list = [None] * x.size
    fit_points = [burn_in]
    if refit_every:
        fit_points += list(range(burn_in + refit_every, x.size, refit_every))
    fit_points.append(x.size)
    model = regime_map = None
    for start, stop in zip(fit_points[:-1], fit_points[1:]):
        model = em_fit(x[:start], n_states, **fit_kwargs)
        regime_map = label_states(model)
        alpha = filter_path(model, x[:stop])
        for t in range(start, stop):
            labels[t] = regime_map.label(_pick_state(alpha[t], regime_map))
    return labels, model, regime_map


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def model_to_dict(model: HmmModel, regime_map: RegimeMap | None = None) -> dict:
    d = {
        "n_states": model.n_states,
        "initial": model.initial.tolist(),
        "transition": model.transition.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "loglik_path": list(model.loglik_path),
        "degenerate": model.degenerate,
    }
    if regime_map is not None:
        d["labels"] = [r.value for r in regime_map.state_to_label]
    return d


def model_from_dict(d: dict) -> tuple[HmmModel, RegimeMap | None]:
    try:
        model = HmmModel(
            np.asarray(d["initial"], dtype=float),
            np.asarray(d["transition"], dtype=float),
            np.asarray(d["means"], dtype=float),
            np.asarray(d["variances"], dtype=float),
            tuple(d.get("loglik_path", ())),
            bool(d.get("degenerate", False)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"HMM record is missing field {exc.args[0]!r}") from None
    labels = d.get("labels")
    return model, (RegimeMap(tuple(Regime(v) for v in labels)) if labels else None)


def dumps(model: HmmModel, regime_map: RegimeMap | None = None) -> str:
    return json.dumps(model_to_dict(model, regime_map), indent=2)
