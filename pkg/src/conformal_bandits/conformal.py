"""Split conformal prediction and conformalised quantile regression (CQR).

The per-arm pipeline is::

    history --split--> (train, calib)
    train   --fit_quantiles--> q_lo(x), q_hi(x)         at levels a/2, 1 - a/2
    calib   --cqr_scores-->    S_i = max(q_lo - Y_i, Y_i - q_hi)
    scores  --conformal_quantile--> Q                   at level (1 - a)(1 + 1/n)
    interval = [q_lo(x) - Q, q_hi(x) + Q]

where ``a`` is the arm's current adaptive miscoverage level, moved online by
:func:`aci_update` (adaptive conformal inference).

Empirical quantiles use the ceiling convention: the ``level``-quantile of ``n``
sorted values is the order statistic at 1-based position ``ceil(level * n)``.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, InsufficientDataError

__all__ = [
    "ALPHA_FLOOR",
    "ALPHA_CEILING",
    "ArmState",
    "ConformalInterval",
    "PredictorKind",
    "QuantilePredictor",
    "SplitRule",
    "Split",
    "aci_update",
    "conformal_quantile",
    "cqr_scores",
    "empirical_quantile",
    "fit_quantiles",
    "pinball_loss",
    "predict_interval",
    "split_conformal_interval",
    "split_history",
]

ALPHA_FLOOR = 0.01
ALPHA_CEILING = 0.99
# Guards ceil() against representation error, e.g. 0.8 * 1.25 * 4 = 4.000000000000001.
_LEVEL_EPS = 1e-9


class PredictorKind(str, enum.Enum):
    CONSTANT = "constant"  # context-free empirical quantiles
    LINEAR = "linear"  # linear quantile regression under the pinball loss

    @classmethod
    def parse(cls, value) -> "PredictorKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        key = {"constantempirical": "constant", "empirical": "constant", "linearpinball": "linear"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown predictor kind {value!r}; valid: constant, linear") from None


class SplitRule(str, enum.Enum):
    ALTERNATING = "alternating"  # odd-numbered observations train, even-numbered calibrate
    HALVES = "halves"  # first ceil(n/2) train, remainder calibrate

    @classmethod
    def parse(cls, value) -> "SplitRule":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigurationError(f"unknown split rule {value!r}; valid: alternating, halves") from None


def empirical_quantile(values, level: float) -> float:
    """Ceiling-rule empirical quantile: order statistic ``ceil(level * n)``."""
    arr = np.asarray(values, dtype=float).ravel()
    n = arr.size
    if n == 0:
        raise InsufficientDataError("empirical quantile of an empty sample")
    k = min(max(math.ceil(level * n - _LEVEL_EPS), 1), n)
    return float(np.partition(arr, k - 1)[k - 1])


def pinball_loss(residuals, tau: float) -> np.ndarray:
    """Elementwise pinball loss ``rho_tau(u)`` of residuals ``u = y - q``."""
    u = np.asarray(residuals, dtype=float)
    return np.where(u >= 0, tau * u, (tau - 1.0) * u)


# ---------------------------------------------------------------------------
# Arm state
# ---------------------------------------------------------------------------


class ArmState:
    """Observed history of one arm plus its adaptive miscoverage level.

    Running mean/SD are maintained with Welford's update.  For the default
    alternating split the sorted training rewards and the calibration rewards
    are cached so that :func:`predict_interval` does not re-sort the history.
    """

    def __init__(
        self,
        arm_id: int,
        alpha: float = 0.2,
        alpha_floor: float = ALPHA_FLOOR,
        alpha_ceiling: float = ALPHA_CEILING,
    ):
        if not 0 < alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
        if not 0 < alpha_floor <= alpha_ceiling < 1:
            raise ConfigurationError("need 0 < alpha_floor <= alpha_ceiling < 1")
        self.arm_id = arm_id
        self.alpha_floor = alpha_floor
        self.alpha_ceiling = alpha_ceiling
        self.aci_alpha = min(max(alpha, alpha_floor), alpha_ceiling)
        self.rewards: list[float] = []
        self.contexts: list = []
        self._mean = 0.0
        self._m2 = 0.0
        self._train_sorted: list[float] = []
        self._calib = np.empty(64)
        self._n_calib = 0

    def __repr__(self):
        return (
            f"ArmState(arm_id={self.arm_id}, pull_count={self.pull_count}, "
            f"mean={self.mean:.4g}, sd={self.sd:.4g}, aci_alpha={self.aci_alpha:.4g})"
        )

    @property
    def pull_count(self) -> int:
        return len(self.rewards)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def sd(self) -> float:
        """Sample standard deviation (``ddof=1``); 0 with fewer than 2 rewards."""
        n = len(self.rewards)
        return math.sqrt(max(self._m2, 0.0) / (n - 1)) if n > 1 else 0.0

    @property
    def has_context(self) -> bool:
        return any(c is not None for c in self.contexts)

    def add(self, reward: float, context=None) -> None:
        reward = float(reward)
        n = len(self.rewards)
        self.rewards.append(reward)
        self.contexts.append(None if context is None else np.atleast_1d(np.asarray(context, dtype=float)))
        delta = reward - self._mean
        self._mean += delta / (n + 1)
        self._m2 += delta * (reward - self._mean)
        # alternating split: 0-based even positions train, odd positions calibrate
        if n % 2 == 0:
            bisect.insort(self._train_sorted, reward)
        else:
            if self._n_calib == self._calib.size:
                self._calib = np.concatenate([self._calib, np.empty(self._calib.size)])
            self._calib[self._n_calib] = reward
            self._n_calib += 1

    def context_matrix(self, indices) -> np.ndarray | None:
        if not self.has_context:
            return None
        return np.vstack([self.contexts[i] for i in indices])


def aci_update(state: ArmState, covered: bool, step: float = 0.005, target_alpha: float = 0.2) -> ArmState:
    """Move the arm's miscoverage level towards the target coverage.

    ``alpha <- clamp(alpha + step * (target_alpha - miss))`` with ``miss = 1``
    when the observed reward fell outside its interval.  Mutates and returns
    ``state``.
    """
    if step <= 0:
        raise ConfigurationError(f"ACI step must be positive, got {step}")
    if not 0 < target_alpha < 1:
        raise ConfigurationError(f"target alpha must lie in (0, 1), got {target_alpha}")
    miss = 0.0 if covered else 1.0
    a = state.aci_alpha + step * (target_alpha - miss)
    state.aci_alpha = min(max(a, state.alpha_floor), state.alpha_ceiling)
    return state


# ---------------------------------------------------------------------------
# Split / fit / score / calibrate
# ---------------------------------------------------------------------------


class Split(NamedTuple):
    train: np.ndarray  # 0-based observation indices
    calib: np.ndarray


def split_history(state: ArmState | int, rule: SplitRule | str = SplitRule.ALTERNATING) -> Split:
    """Partition observation positions ``0..n-1`` into train and calibration sets.

    ``state`` may also be the observation count itself.
    """
    n = state if isinstance(state, (int, np.integer)) else state.pull_count
    if n < 2:
        raise InsufficientDataError(f"split needs at least 2 observations, got {n}")
    rule = SplitRule.parse(rule)
    idx = np.arange(n)
    if rule is SplitRule.ALTERNATING:
        return Split(idx[0::2], idx[1::2])
    cut = (n + 1) // 2
    return Split(idx[:cut], idx[cut:])


@dataclass
class QuantilePredictor:
    """Fitted lower/upper quantile model.

    For ``CONSTANT`` the parameters are the two scalar quantiles; for
    ``LINEAR`` they are ``(intercept, *slopes)`` vectors for each level.
    """

    kind: PredictorKind
    lo_level: float
    hi_level: float
    lo_params: np.ndarray
    hi_params: np.ndarray

    def predict(self, x=None) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper quantile predictions, with crossings swapped."""
        if self.kind is PredictorKind.CONSTANT:
            n = 1 if x is None else np.atleast_2d(np.asarray(x, dtype=float)).shape[0]
            lo = np.full(n, float(self.lo_params[0]))
            hi = np.full(n, float(self.hi_params[0]))
        else:
            if x is None:
                raise ConfigurationError("linear quantile predictor needs a context")
            X = np.atleast_2d(np.asarray(x, dtype=float))
            lo = self.lo_params[0] + X @ self.lo_params[1:]
            hi = self.hi_params[0] + X @ self.hi_params[1:]
        return np.minimum(lo, hi), np.maximum(lo, hi)


def _fit_linear_pinball(
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    ridge: float = 0.0,
    max_iter: int = 20000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Subgradient descent on mean pinball loss + ``ridge * ||slopes||^2``.

    Features are centred and scaled internally; the returned vector is
    ``(intercept, *slopes)`` on the original scale.  Returns the best iterate.
    """
    n, p = X.shape
    mu = X.mean(axis=0)
    sc = X.std(axis=0)
    sc[sc == 0] = 1.0
    Z = np.hstack([np.ones((n, 1)), (X - mu) / sc])
    y_scale = max(float(np.std(y)), 1e-12)
    # start from least squares, then refine under the pinball loss
    theta, *_ = np.linalg.lstsq(Z, y, rcond=None)
    theta[0] = empirical_quantile(y - Z[:, 1:] @ theta[1:], tau)
    # ridge acts on original-scale slopes b = beta / sc
    pen = np.r_[0.0, ridge / sc**2]

    def objective(th):
        return float(pinball_loss(y - Z @ th, tau).mean() + np.sum(pen * th**2))

    best, best_obj = theta.copy(), objective(theta)
    step0 = y_scale
    stall = 0
    for k in range(max_iter):
        r = y - Z @ theta
        g = -Z.T @ np.where(r >= 0, tau, tau - 1.0) / n + 2.0 * pen * theta
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        theta = theta - (step0 / math.sqrt(k + 1)) * g / gn
        obj = objective(theta)
        if obj < best_obj - tol:
            best, best_obj, stall = theta.copy(), obj, 0
        else:
            stall += 1
            if stall > 2000:
                break
    slopes = best[1:] / sc
    intercept = best[0] - float(mu @ slopes)
    return np.r_[intercept, slopes]


def fit_quantiles(
    y,
    lo_level: float,
    hi_level: float,
    kind: PredictorKind | str = PredictorKind.CONSTANT,
    X=None,
    ridge: float = 0.0,
) -> QuantilePredictor:
    """Fit lower/upper quantile predictors on training rewards ``y``."""
    kind = PredictorKind.parse(kind)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise InsufficientDataError("cannot fit quantiles on an empty training set")
    if not 0 < lo_level < hi_level < 1:
        raise ConfigurationError(f"need 0 < lo_level < hi_level < 1, got {lo_level}, {hi_level}")
    if kind is PredictorKind.CONSTANT:
        lo = np.array([empirical_quantile(y, lo_level)])
        hi = np.array([empirical_quantile(y, hi_level)])
    else:
        if X is None:
            raise ConfigurationError("linear quantile regression needs contexts")
        X = np.asarray(X, dtype=float).reshape(y.size, -1)
        lo = _fit_linear_pinball(X, y, lo_level, ridge)
        hi = _fit_linear_pinball(X, y, hi_level, ridge)
    return QuantilePredictor(kind, lo_level, hi_level, lo, hi)


def cqr_scores(y_calib, predictor: QuantilePredictor, X_calib=None) -> np.ndarray:
    """Conformity scores ``max(q_lo(x) - y, y - q_hi(x))``; may be negative."""
    y = np.asarray(y_calib, dtype=float).ravel()
    if y.size == 0:
        raise InsufficientDataError("no calibration points")
    lo, hi = predictor.predict(X_calib if predictor.kind is PredictorKind.LINEAR else np.empty((y.size, 0)))
    return np.maximum(lo - y, y - hi)


def conformal_quantile(scores, alpha: float) -> float:
    """Empirical ``(1 - alpha)(1 + 1/n)``-quantile of ``scores``.

    When the adjusted level reaches 1 the largest score is returned instead
    of infinity.
    """
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.asarray(scores, dtype=float).ravel()
    n = s.size
    if n == 0:
        raise InsufficientDataError("conformal quantile of an empty score set")
    k = math.ceil((1.0 - alpha) * (n + 1) - _LEVEL_EPS)
    if k >= n:
        return float(s.max())
    return float(np.partition(s, max(k, 1) - 1)[max(k, 1) - 1])


@dataclass(frozen=True)
class ConformalInterval:
    lower: float
    upper: float
    level: float
    score_quantile: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def __contains__(self, y) -> bool:
        return self.lower <= y <= self.upper


def predict_interval(
    state: ArmState,
    context=None,
    rule: SplitRule | str = SplitRule.ALTERNATING,
    kind: PredictorKind | str = PredictorKind.CONSTANT,
    alpha: float | None = None,
    ridge: float = 0.0,
) -> ConformalInterval:
    """CQR interval for the arm's next reward at miscoverage ``alpha``.

    ``alpha`` defaults to the arm's current adaptive level ``state.aci_alpha``.
    """
    a = state.aci_alpha if alpha is None else alpha
    kind = PredictorKind.parse(kind)
    rule = SplitRule.parse(rule)
    n = state.pull_count
    if n < 2:
        raise InsufficientDataError(f"arm {state.arm_id} has {n} observations; need 2 to calibrate")
    if kind is PredictorKind.CONSTANT and rule is SplitRule.ALTERNATING:
        train = state._train_sorted
        m = len(train)
        q_lo = train[min(max(math.ceil(a / 2 * m - _LEVEL_EPS), 1), m) - 1]
        q_hi = train[min(max(math.ceil((1 - a / 2) * m - _LEVEL_EPS), 1), m) - 1]
        calib = state._calib[: state._n_calib]
        scores = np.maximum(q_lo - calib, calib - q_hi)
        q = conformal_quantile(scores, a)
        return ConformalInterval(q_lo - q, q_hi + q, 1.0 - a, q)

    split = split_history(state, rule)
    y = np.asarray(state.rewards)
    X_train = state.context_matrix(split.train)
    X_calib = state.context_matrix(split.calib)
    if kind is PredictorKind.LINEAR and (X_train is None or context is None):
        raise ConfigurationError("linear quantile predictor needs contexts for history and query")
    pred = fit_quantiles(y[split.train], a / 2, 1 - a / 2, kind, X=X_train, ridge=ridge)
    q = conformal_quantile(cqr_scores(y[split.calib], pred, X_calib), a)
    lo, hi = pred.predict(None if kind is PredictorKind.CONSTANT else np.atleast_2d(context))
    return ConformalInterval(float(lo[0]) - q, float(hi[0]) + q, 1.0 - a, q)


def split_conformal_interval(
    y_train,
    y_calib,
    alpha: float,
    X_train=None,
    X_calib=None,
    x_new=None,
) -> ConformalInterval:
    """Symmetric split-CP interval from absolute residual scores.

    The point predictor is the training mean, or an ordinary least-squares
    fit when contexts are supplied.
    """
    y_train = np.asarray(y_train, dtype=float).ravel()
    y_calib = np.asarray(y_calib, dtype=float).ravel()
    if y_train.size == 0 or y_calib.size == 0:
        raise InsufficientDataError("split CP needs non-empty train and calibration sets")
    if X_train is None:
        f_calib = np.full(y_calib.size, y_train.mean())
        f_new = float(y_train.mean())
    else:
        Zt = np.column_stack([np.ones(y_train.size), np.asarray(X_train, dtype=float).reshape(y_train.size, -1)])
        coef, *_ = np.linalg.lstsq(Zt, y_train, rcond=None)
        Zc = np.column_stack([np.ones(y_calib.size), np.asarray(X_calib, dtype=float).reshape(y_calib.size, -1)])
        f_calib = Zc @ coef
        f_new = float(np.r_[1.0, np.atleast_1d(np.asarray(x_new, dtype=float))] @ coef)
    q = conformal_quantile(np.abs(f_calib - y_calib), alpha)
    return ConformalInterval(f_new - q, f_new + q, 1.0 - alpha, q)
