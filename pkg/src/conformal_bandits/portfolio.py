"""Portfolio allocation as a three-armed bandit.

Arms are portfolio strategies over ``n`` assets:

* ``SA`` (sell all): zero weights, reward 0.
* ``EW`` (equal weight): ``w = 1/n``.
* ``MV`` (mean-variance): ``argmin w' S w - m' w`` subject to ``sum(w) = 1``,
  with ``S`` the ridge-regularised sample covariance and ``m`` the sample mean
  of a trailing window.  Short positions are allowed.

On decision date ``j`` every strategy's weights use returns up to ``j - 1``
only and the arm's reward is the realised log-return ``w_j' R_j``.  Wealth
compounds as ``wealth * exp(reward)``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, InsufficientDataError, SolverError
from .harness import CPConfig, EpisodeTrace, Feedback, play, replicate_rngs
from .hmm import HmmModel, RegimeMap, causal_regimes
from .policies import EpsilonSchedule, PolicyKind, PolicySpec

__all__ = [
    "BacktestConfig",
    "FinancialMetrics",
    "HoldSpec",
    "BacktestData",
    "PolicyBacktest",
    "PriceSeries",
    "ReturnSeries",
    "Strategy",
    "WealthCurve",
    "arm_rewards",
    "backtest",
    "default_policy_grid",
    "financial_metrics",
    "load_prices",
    "log_returns",
    "mv_weights",
    "parse_backtest_policy",
    "prepare_backtest",
    "strategy_weights",
    "wealth_path",
]


# ---------------------------------------------------------------------------
# Prices and returns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriceSeries:
    """Cleaned price table.  ``filled[j, i]`` marks forward-filled cells."""

    dates: tuple[_dt.date, ...]
    tickers: tuple[str, ...]
    prices: np.ndarray
    filled: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        if p.ndim != 2 or p.shape != (len(self.dates), len(self.tickers)):
            raise ConfigurationError(
                f"price matrix shape {p.shape} does not match {len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ConfigurationError("dates must be strictly increasing")
        if not (p > 0).all():
            raise ConfigurationError("prices must be positive")
        object.__setattr__(self, "prices", p)
        f = np.zeros(p.shape, dtype=bool) if self.filled is None else np.asarray(self.filled, dtype=bool)
        object.__setattr__(self, "filled", f)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    def column(self, ticker: str) -> np.ndarray:
        return self.prices[:, self.tickers.index(ticker)]

    def select(self, tickers: Sequence[str]) -> "PriceSeries":
        idx = [self.tickers.index(t) for t in tickers]
        return PriceSeries(self.dates, tuple(tickers), self.prices[:, idx], self.filled[:, idx])


@dataclass(frozen=True)
class ReturnSeries:
    dates: tuple[_dt.date, ...]  # date of each return's end point
    tickers: tuple[str, ...]
    returns: np.ndarray


def _parse_date(text: str, line: int) -> _dt.date:
    try:
        return _dt.date.fromisoformat(text.strip())
    except ValueError:
        raise IngestionError(f"line {line}: cannot parse date {text!r} (expected YYYY-MM-DD)") from None


def load_prices(path, date_column: str = "date") -> PriceSeries:
    """Read a CSV with a date column and one price column per ticker.

    Rows are sorted by date (with a warning if the file was out of order).
    Empty cells are forward-filled from the previous date and flagged.
    Non-numeric or non-positive prices, duplicate dates and leading gaps raise
    :class:`IngestionError` naming the file line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"price file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if date_column not in header:
            raise IngestionError(f"{path}: line 1: missing date column {date_column!r}")
        di = header.index(date_column)
        tickers = [h for i, h in enumerate(header) if i != di]
        if not tickers:
            raise IngestionError(f"{path}: line 1: no ticker columns")
        if len(set(tickers)) != len(tickers):
            raise IngestionError(f"{path}: line 1: duplicate ticker columns")
        rows = []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise IngestionError(f"{path}: line {line}: expected {len(header)} fields, got {len(rec)}")
            date = _parse_date(rec[di], line)
            vals = []
            for i, cell in enumerate(rec):
                if i == di:
                    continue
                name = header[i]
                cell = cell.strip()
                if cell == "" or cell.lower() in ("na", "nan", "null"):
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(f"{path}: line {line}, column {name!r}: cannot parse price {cell!r}") from None
                if not math.isfinite(v) or v <= 0:
                    raise IngestionError(f"{path}: line {line}, column {name!r}: price must be positive, got {cell}")
                vals.append(v)
            rows.append((date, line, vals))
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    if any(b[0] < a[0] for a, b in zip(rows, rows[1:])):
        warnings.warn(f"{path}: dates are out of order; rows were sorted")
        rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise IngestionError(f"{path}: duplicate date {a[0].isoformat()} on lines {a[1]} and {b[1]}")

    prices = np.array([r[2] for r in rows], dtype=float)
    filled = np.isnan(prices)
    for j in range(prices.shape[0]):
        for i in np.flatnonzero(filled[j]):
            if j == 0:
                raise IngestionError(
                    f"{path}: line {rows[j][1]}, column {tickers[i]!r}: missing price with no earlier value to carry forward"
                )
            prices[j, i] = prices[j - 1, i]
    if filled.any():
        warnings.warn(f"{path}: forward-filled {int(filled.sum())} missing price(s)")
    return PriceSeries(tuple(r[0] for r in rows), tuple(tickers), prices, filled)


def log_returns(prices: PriceSeries) -> ReturnSeries:
    if len(prices.dates) < 2:
        raise InsufficientDataError("need at least two price rows to form a return")
    r = np.diff(np.log(prices.prices), axis=0)
    return ReturnSeries(prices.dates[1:], prices.tickers, r)


# ---------------------------------------------------------------------------
# Strategy arms
# ---------------------------------------------------------------------------


class Strategy(str, enum.Enum):
    SA = "SA"
    EW = "EW"
    MV = "MV"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ConfigurationError(f"unknown strategy {value!r}; valid: SA, EW, MV") from None


ARMS = (Strategy.SA, Strategy.EW, Strategy.MV)


def mv_weights(cov, mean, ridge: float = 0.0) -> np.ndarray:
    """Closed-form solution of ``min w'Cw - m'w`` s.t. ``sum(w) = 1`` with ``C = cov + ridge I``.

    Stationarity of the Lagrangian gives ``2 C w - m - nu 1 = 0``; this and the
    budget constraint form one linear system in ``(w, nu)``.
    """
    C = np.atleast_2d(np.asarray(cov, dtype=float))
    m = np.asarray(mean, dtype=float).ravel()
    n = m.size
    if C.shape != (n, n):
        raise ConfigurationError(f"covariance shape {C.shape} does not match {n} means")
    if ridge < 0:
        raise ConfigurationError(f"ridge must be non-negative, got {ridge}")
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = 2.0 * (C + ridge * np.eye(n))
    kkt[:n, n] = -1.0
    kkt[n, :n] = 1.0
    rhs = np.r_[m, 1.0]
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        raise SolverError("mean-variance system is singular; increase the ridge") from None
    w = sol[:n]
    if not np.isfinite(w).all() or np.linalg.cond(kkt) > 1e14:
        raise SolverError("mean-variance system is ill-conditioned; increase the ridge")
    return w


def strategy_weights(strategy: Strategy | str, window_returns, ridge: float = 1e-3) -> np.ndarray:
    """Weights of ``strategy`` given a ``(window, n)`` block of past returns."""
    strategy = Strategy.parse(strategy)
    R = np.atleast_2d(np.asarray(window_returns, dtype=float))
    n = R.shape[1]
    if strategy is Strategy.SA:
        return np.zeros(n)
    if strategy is Strategy.EW:
        return np.full(n, 1.0 / n)
    if R.shape[0] < 2:
        raise InsufficientDataError("mean-variance weights need a window of at least 2 returns")
    return mv_weights(np.cov(R, rowvar=False).reshape(n, n), R.mean(axis=0), ridge)


def arm_rewards(returns: np.ndarray, start: int, window: int = 252, ridge: float = 1e-3):
    """Weights ``(D, 3, n)`` and rewards ``(D, 3)`` for decision rows ``start..end``.

    Row ``j`` of ``returns`` is realised on decision ``j``; weights use rows
    ``j - window .. j - 1``.  Arm order is SA, EW, MV.
    """
    R = np.asarray(returns, dtype=float)
    T, n = R.shape
    if window < 2:
        raise ConfigurationError(f"mean-variance window must be at least 2, got {window}")
    if start < window:
        raise ConfigurationError(f"first decision row {start} leaves fewer than {window} returns for the MV window")
    if start >= T:
        raise ConfigurationError("no decision dates left after the warm-up history")
    D = T - start
    W = np.zeros((D, 3, n))
    W[:, 1] = 1.0 / n
    for d in range(D):
        j = start + d
        W[d, 2] = strategy_weights(Strategy.MV, R[j - window : j], ridge)
    rewards = np.einsum("dkn,dn->dk", W, R[start:])
    return W, rewards


# ---------------------------------------------------------------------------
# Wealth and performance metrics
# ---------------------------------------------------------------------------


@dataclass
class WealthCurve:
    """Wealth path starting at 1 on the day before the first decision.

    ``arms`` and ``regimes`` have one entry per decision (``len(wealth) - 1``).
    """

    dates: tuple
    wealth: np.ndarray
    arms: list
    regimes: list

    def rows(self):
        yield (self.dates[0], 1.0, "", "")
        for d, w, a, r in zip(self.dates[1:], self.wealth[1:], self.arms, self.regimes):
            yield (d, float(w), a, r or "")


def wealth_path(rewards) -> np.ndarray:
    """``W_0 = 1``, ``W_j = W_{j-1} exp(r_j)``."""
    r = np.asarray(rewards, dtype=float)
    return np.exp(np.r_[0.0, np.cumsum(r)])


@dataclass(frozen=True)
class FinancialMetrics:
    total_return: float
    sharpe: float  # NaN when return SD is zero
    max_drawdown: float
    calmar: float  # +inf when drawdown is zero
    annualised_return: float

    def as_dict(self) -> dict:
        return {
            "total_return": self.total_return,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
            "calmar": self.calmar,
            "annualised_return": self.annualised_return,
        }


def max_drawdown(wealth) -> float:
    w = np.asarray(wealth, dtype=float)
    peak = np.maximum.accumulate(w)
    return float(np.max(1.0 - w / peak))


def financial_metrics(wealth, periods_per_year: int = 252) -> FinancialMetrics:
    """Total return, annualised Sharpe (zero risk-free rate), max drawdown, Calmar."""
    w = np.asarray(getattr(wealth, "wealth", wealth), dtype=float)
    if w.size < 2:
        raise InsufficientDataError("need at least two wealth points")
    if not (w > 0).all():
        raise ConfigurationError("wealth must stay positive")
    n = w.size - 1
    growth = w[-1] / w[0]
    r = np.diff(np.log(w))
    sd = r.std(ddof=1) if n > 1 else 0.0
    mu = r.mean()
    sharpe = math.nan if sd <= 1e-12 * max(1.0, abs(mu)) else float(mu / sd * math.sqrt(periods_per_year))
    dd = max_drawdown(w)
    ann = float(growth ** (periods_per_year / n) - 1.0)
    calmar = math.inf if dd <= 0 else ann / dd
    return FinancialMetrics(float(growth - 1.0), sharpe, dd, calmar, ann)


# ---------------------------------------------------------------------------
# Backtest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HoldSpec:
    """Buy-and-hold a single strategy arm."""

    arm: Strategy

    def __post_init__(self):
        object.__setattr__(self, "arm", Strategy.parse(self.arm))

    def describe(self) -> str:
        return f"Hold {self.arm.value}"


@dataclass(frozen=True)
class BacktestConfig:
    mv_window: int = 252
    # daily covariances are ~1e-4, so a smaller ridge lets the mean term drive
    # gross exposure past 10x; 1e-3 keeps it near 2x
    ridge: float = 1e-3
    hmm_burn_in: int = 504
    hmm_states: int = 3
    hmm_refit_every: int | None = None
    epsilon: float = 0.03
    gamma: float | None = None  # decay exponent; replaces the constant epsilon when set
    explore_full: bool = False  # keep epsilon exploration under full feedback
    alpha: float = 0.2
    aci_step: float = 0.005
    beta: float = 2.0
    rho: float = 0.5
    lam: float = 0.5
    runs: int = 1000
    periods_per_year: int = 252

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError(f"runs must be at least 1, got {self.runs}")
        if self.hmm_burn_in < 10 * self.hmm_states:
            raise ConfigurationError(f"HMM burn-in must be at least {10 * self.hmm_states}, got {self.hmm_burn_in}")

    @property
    def first_decision(self) -> int:
        # MV window and regime filter both need history strictly before the decision
        return max(self.mv_window, self.hmm_burn_in + 1)


_BACKTEST_NAMES = {
    "cp-ucb": "cp_ucb",
    "cp_ucb": "cp_ucb",
    "regime-aware cp": "regime_cp",
    "regime_cp": "regime_cp",
    "ucb1": "ucb1",
    "mv-ucb1": "mv_ucb1",
    "mv_ucb1": "mv_ucb1",
    "regime-aware mv-ucb1": "regime_mv_ucb1",
    "regime_mv_ucb1": "regime_mv_ucb1",
    "cp-bandit": "cp_bandit",
    "cp_bandit": "cp_bandit",
    "cp-esi": "cp_esi",
    "cp_esi": "cp_esi",
}


def parse_backtest_policy(name: str, cfg: BacktestConfig = BacktestConfig(), feedback=Feedback.PARTIAL):
    """Policy spec (or :class:`HoldSpec`) from a display name like ``"Regime-Aware CP"``.

    Conformal policies explore with constant ``cfg.epsilon`` (or the decaying
    schedule when ``cfg.gamma`` is set) under partial feedback and are
    deterministic under full feedback unless ``cfg.explore_full`` is set.
    """
    key = " ".join(str(name).strip().lower().split())
    if key.startswith("hold"):
        return HoldSpec(key[4:].strip(" _-"))
    kind = _BACKTEST_NAMES.get(key)
    if kind is None:
        kind = PolicyKind.parse(key).value
    kind = PolicyKind(kind)
    eps = EpsilonSchedule.none()
    if kind.is_conformal and (Feedback.parse(feedback) is Feedback.PARTIAL or cfg.explore_full):
        if cfg.gamma is not None:
            eps = EpsilonSchedule.decay(cfg.gamma)
        elif cfg.epsilon > 0:
            eps = EpsilonSchedule.constant(cfg.epsilon)
    return PolicySpec(kind, beta=cfg.beta, rho=cfg.rho, lam=cfg.lam, epsilon=eps)


def default_policy_grid() -> list[str]:
    return ["CP-UCB", "Regime-Aware CP", "UCB1", "MV-UCB1", "Regime-Aware MV-UCB1", "Hold MV", "Hold EW"]


@dataclass
class PolicyBacktest:
    name: str
    runs: list[FinancialMetrics]
    curve: WealthCurve  # first run
    wealth_runs: np.ndarray  # (runs, D + 1)
    traces: list[EpisodeTrace] = field(default_factory=list)

    @property
    def randomised(self) -> bool:
        return len(self.runs) > 1

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(m, metric) for m in self.runs]))

    def sd(self, metric: str) -> float:
        vals = [getattr(m, metric) for m in self.runs]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


@dataclass
class BacktestData:
    """Inputs shared by every policy of one backtest."""

    dates: tuple  # decision dates, with the preceding date first
    rewards: np.ndarray  # (D, 3)
    weights: np.ndarray  # (D, 3, n)
    regimes: list  # (D,) regime used at each decision
    hmm: HmmModel
    regime_map: RegimeMap
    benchmark: np.ndarray


def prepare_backtest(prices: PriceSeries, cfg: BacktestConfig = BacktestConfig(), benchmark: str | None = None) -> BacktestData:
    """Arm rewards and causal regime labels for every decision date.

    The benchmark for regime detection is the named price column (excluded
    from the asset set) or, by default, the equal-weight average of the
    assets' log returns.
    """
    if benchmark is not None:
        if benchmark not in prices.tickers:
            raise ConfigurationError(f"benchmark column {benchmark!r} not in price file")
        assets = prices.select([t for t in prices.tickers if t != benchmark])
        bench = np.diff(np.log(prices.column(benchmark)))
    else:
        assets = prices
        bench = None
    rets = log_returns(assets)
    R = rets.returns
    if bench is None:
        bench = R.mean(axis=1)
    start = cfg.first_decision
    if R.shape[0] <= start:
        raise ConfigurationError(
            f"history of {R.shape[0]} returns is too short for HMM burn-in {cfg.hmm_burn_in} and MV window {cfg.mv_window}"
        )
    labels, model, rmap = causal_regimes(bench, cfg.hmm_burn_in, cfg.hmm_states, cfg.hmm_refit_every)
    W, rewards = arm_rewards(R, start, cfg.mv_window, cfg.ridge)
    regimes = [labels[j - 1] for j in range(start, R.shape[0])]
    dates = (rets.dates[start - 1],) + tuple(rets.dates[start:])
    return BacktestData(dates, rewards, W, regimes, model, rmap, bench)


def _run_policy(name, spec, data: BacktestData, cfg: BacktestConfig, feedback, seed: int, keep_traces: bool) -> PolicyBacktest:
    regime_names = [r.value for r in data.regimes]
    if isinstance(spec, HoldSpec):
        k = ARMS.index(spec.arm)
        w = wealth_path(data.rewards[:, k])
        curve = WealthCurve(data.dates, w, [spec.arm.value] * len(data.regimes), regime_names)
        return PolicyBacktest(name, [financial_metrics(w, cfg.periods_per_year)], curve, w[None, :])
    randomised = spec.epsilon.mode != "none"
    n_runs = cfg.runs if randomised else 1
    cp = CPConfig(alpha=cfg.alpha, aci_step=cfg.aci_step)
    metrics, paths, traces, curve = [], [], [], None
    for run in range(n_runs):
        _, rng = replicate_rngs(seed, run)
        trace = play(data.rewards, spec, rng, feedback, cp, regimes=data.regimes)
        w = wealth_path(trace.realised)
        metrics.append(financial_metrics(w, cfg.periods_per_year))
        paths.append(w)
        if run == 0:
            curve = WealthCurve(data.dates, w, [ARMS[a].value for a in trace.chosen], regime_names)
        if keep_traces:
            traces.append(trace)
    return PolicyBacktest(name, metrics, curve, np.array(paths), traces)


def backtest(
    prices: PriceSeries,
    policies: Sequence[str] | None = None,
    cfg: BacktestConfig = BacktestConfig(),
    feedback: Feedback | str = Feedback.PARTIAL,
    seed: int = 0,
    benchmark: str | None = None,
    keep_traces: bool = False,
    data: BacktestData | None = None,
) -> tuple[dict[str, PolicyBacktest], BacktestData]:
    """Backtest every named policy on ``prices``.

    Randomised policies are replayed ``cfg.runs`` times with policy streams
    derived from ``seed``; deterministic policies and holds run once.
    """
    feedback = Feedback.parse(feedback)
    data = data or prepare_backtest(prices, cfg, benchmark)
    out = {}
    for name in policies or default_policy_grid():
        spec = parse_backtest_policy(name, cfg, feedback)
        out[name] = _run_policy(name, spec, data, cfg, feedback, seed, keep_traces)
    return out, data
