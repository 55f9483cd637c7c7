"""Conformal prediction bandits.

Multi-armed bandit policies that rank arms by conformal prediction intervals,
a Monte-Carlo harness for synthetic reward scenarios, a Gaussian HMM regime
detector and a regime-aware portfolio backtest.
"""

from ._version import __version__
from .conformal import ArmState, ConformalInterval, PredictorKind, SplitRule, predict_interval
from .environments import RewardFamily, RewardModel, sample_rounds
from .errors import (
    ConfigurationError,
    ConformalBanditsError,
    IngestionError,
    InsufficientDataError,
    InvalidIndexError,
    SolverError,
)
from .harness import CPConfig, EpisodeTrace, Feedback, MetricsSummary, run_episode, run_monte_carlo, summarise
from .hmm import HmmModel, RegimeMap, em_fit, filter_path, label_states
from .policies import EpsilonSchedule, PolicyKind, PolicySpec, Regime
from .portfolio import BacktestConfig, Strategy, backtest, financial_metrics, load_prices, mv_weights
from .scenarios import Scenario, load_scenario

__all__ = [
    "__version__",
    "ArmState",
    "BacktestConfig",
    "CPConfig",
    "ConfigurationError",
    "ConformalBanditsError",
    "ConformalInterval",
    "EpisodeTrace",
    "EpsilonSchedule",
    "Feedback",
    "HmmModel",
    "IngestionError",
    "InsufficientDataError",
    "InvalidIndexError",
    "MetricsSummary",
    "PolicyKind",
    "PolicySpec",
    "PredictorKind",
    "Regime",
    "RegimeMap",
    "RewardFamily",
    "RewardModel",
    "Scenario",
    "SolverError",
    "SplitRule",
    "Strategy",
    "backtest",
    "em_fit",
    "filter_path",
    "financial_metrics",
    "label_states",
    "load_prices",
    "load_scenario",
    "mv_weights",
    "predict_interval",
    "run_episode",
    "run_monte_carlo",
    "sample_rounds",
    "summarise",
]
