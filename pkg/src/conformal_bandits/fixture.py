"""Synthetic daily ETF prices with regime-switching dynamics.

The bundled offline data set is produced here from a fixed seed.  A hidden
three-state Markov chain (calm bull, choppy neutral, turbulent bear) drives a
market factor; each ETF loads on the factor with a sector-like beta and adds
idiosyncratic noise.  Bear phases are short, volatile and loss-making, bull
phases long and calm, which is the stylised pattern regime-aware allocation
rules are built for.
"""

from __future__ import annotations

import csv
import datetime as _dt
from pathlib import Path

import numpy as np

__all__ = ["FIXTURE_PATH", "TICKERS", "generate_fixture", "write_fixture"]

FIXTURE_PATH = Path(__file__).with_name("data") / "etf_fixture.csv"

# ticker: (factor beta, idiosyncratic daily vol, annual idiosyncratic drift)
TICKERS = {
    "TLT": (-0.25, 0.008, 0.00),
    "GLD": (0.05, 0.008, 0.03),
    "VNQ": (0.95, 0.007, 0.00),
    "EFA": (0.85, 0.005, -0.01),
    "VOO": (1.00, 0.002, 0.01),
    "EMB": (0.35, 0.004, -0.01),
    "DBC": (0.45, 0.010, 0.00),
    "XLF": (1.10, 0.007, 0.00),
    "XLK": (1.20, 0.007, 0.04),
    "XLV": (0.75, 0.006, 0.01),
}

# regime: (expected duration in days, factor daily mean, factor daily vol)
REGIMES = {
    "bull": (150.0, 0.0009, 0.006),
    "neutral": (60.0, 0.0001, 0.010),
    "bear": (30.0, -0.0025, 0.024),
}
# where the chain goes when it leaves each regime (bull, neutral, bear)
EXIT_ROUTES = np.array([[0.0, 0.7, 0.3], [0.6, 0.0, 0.4], [0.3, 0.7, 0.0]])


def _business_days(start: _dt.date, end: _dt.date) -> list[_dt.date]:
    days, d = [], start
    while d <= end:
        if d.weekday() < 5:
            days.append(d)
        d += _dt.timedelta(days=1)
    return days


def generate_fixture(seed: int = 2018, start: str = "2018-01-02", end: str = "2025-02-28"):
    """Return (dates, tickers, prices, regimes) for the synthetic market."""
    rng = np.random.default_rng(seed)
    dates = _business_days(_dt.date.fromisoformat(start), _dt.date.fromisoformat(end))
    T = len(dates)
    names = list(REGIMES)
    stay = np.array([1.0 - 1.0 / REGIMES[r][0] for r in names])
    A = EXIT_ROUTES * (1.0 - stay)[:, None]
    np.fill_diagonal(A, stay)
    z = np.empty(T - 1, dtype=int)
    z[0] = 0
    for t in range(1, T - 1):
        z[t] = rng.choice(3, p=A[z[t - 1]])
    f_mu = np.array([REGIMES[r][1] for r in names])
    f_sd = np.array([REGIMES[r][2] for r in names])
    factor = f_mu[z] + f_sd[z] * rng.standard_t(5, T - 1) * np.sqrt(3.0 / 5.0)
    tick = list(TICKERS)
    beta = np.array([TICKERS[k][0] for k in tick])
    idio_sd = np.array([TICKERS[k][1] for k in tick])
    drift = np.array([TICKERS[k][2] for k in tick]) / 252.0
    # idiosyncratic noise is louder in turbulent phases
    scale = np.where(z == 2, 1.8, 1.0)[:, None]
    eps = rng.standard_normal((T - 1, len(tick))) * idio_sd * scale
    r = factor[:, None] * beta + drift + eps
    start_px = rng.uniform(40.0, 250.0, len(tick)).round(2)
    logp = np.log(start_px) + np.vstack([np.zeros(len(tick)), np.cumsum(r, axis=0)])
    prices = np.exp(logp).round(4)
    regimes = ["bull"] + [names[s] for s in z]
    return dates, tick, prices, regimes


def write_fixture(path=FIXTURE_PATH, seed: int = 2018) -> Path:
    dates, tick, prices, _ = generate_fixture(seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *tick])
        for d, row in zip(dates, prices):
            w.writerow([d.isoformat(), *(f"{v:.4f}" for v in row)])
    return path


if __name__ == "__main__":
    print(write_fixture())
