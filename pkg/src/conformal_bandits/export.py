"""Result files.

Every file starts with one comment line::

    # conformal-bandits 0.1.0 | seed=7 | config=sha256:<hex>

where the hash covers the canonical JSON of the resolved configuration.
Nothing time-dependent is written, so re-running a command reproduces its
files byte for byte.  CSV readers should skip lines starting with ``#``;
:func:`read_json` and :func:`read_traces` do that themselves.

Trace files are JSON lines, one round per line, with keys ``policy``,
``replicate`` followed by :attr:`EpisodeTrace.COLUMNS` (arms are 1-based).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from ._version import __version__
from .errors import ConfigurationError
from .harness import EpisodeTrace, MetricsSummary
from .hmm import HmmModel, RegimeMap, model_to_dict

__all__ = [
    "TOOL",
    "config_hash",
    "header_line",
    "read_json",
    "read_summaries",
    "read_traces",
    "write_backtest_metrics",
    "write_curves",
    "write_json",
    "write_summaries",
    "write_table1",
    "write_traces",
    "write_wealth",
    "write_hmm",
    "write_regime_probabilities",
]

TOOL = "conformal-bandits"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def config_hash(config) -> str:
    text = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def header_line(seed, config) -> str:
    return f"# {TOOL} {__version__} | seed={seed} | config=sha256:{config_hash(config)}"


def _open(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="")


def write_json(path, obj, seed, config) -> Path:
    with _open(path) as fh:
        fh.write(header_line(seed, config) + "\n")
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)


def read_json(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}") from None
    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not a JSON result file ({exc.msg} at line {exc.lineno})") from None


def _write_csv(path, seed, config, columns, rows) -> Path:
    with _open(path) as fh:
        fh.write(header_line(seed, config) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return Path(path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# Simulation outputs
# ---------------------------------------------------------------------------


def write_summaries(path, summaries: Sequence[MetricsSummary], seed, config) -> Path:
    return write_json(path, {"config": config, "summaries": [s.to_dict() for s in summaries]}, seed, config)


def read_summaries(path) -> tuple[dict, list[MetricsSummary]]:
    data = read_json(path)
    if "summaries" not in data:
        raise ConfigurationError(f"{path}: no 'summaries' entry; not a simulate summary file")
    out = []
    for d in data["summaries"]:
        d = {k: ([float(x) for x in v] if isinstance(v, list) else v) for k, v in d.items()}
        out.append(MetricsSummary.from_dict(d))
    return data.get("config", {}), out


def write_table1(path, summaries: Sequence[MetricsSummary], seed, config) -> Path:
    """Coverage (%) and width per arm, mean and across-replicate SD."""
    K = len(summaries[0].coverage_mean)
    cols = ["metric", "policy"]
    for k in range(1, K + 1):
        cols += [f"arm{k}_mean", f"arm{k}_sd"]
    rows = []
    for metric, scale in (("coverage", 100.0), ("width", 1.0)):
        for s in summaries:
            mean = getattr(s, f"{metric}_mean")
            sd = getattr(s, f"{metric}_sd")
            row = [metric, s.policy]
            for k in range(K):
                row += [round(float(mean[k]) * scale, 6), round(float(sd[k]) * scale, 6)]
            rows.append(row)
    return _write_csv(path, seed, config, cols, rows)


_CURVES = {"regret": "regret", "cum_regret": "cum_regret", "best_arm": "best_arm"}


def write_curves(out_dir, summary: MetricsSummary, slug: str, seed, config) -> list[Path]:
    """``<curve>_<slug>.csv`` with columns t, mean, lo, hi."""
    paths = []
    for name, attr in _CURVES.items():
        mean, lo, hi = (getattr(summary, f"{attr}_{s}") for s in ("mean", "lo", "hi"))
        rows = ((t + 1, mean[t], lo[t], hi[t]) for t in range(len(mean)))
        paths.append(_write_csv(Path(out_dir) / f"{name}_{slug}.csv", seed, config, ["t", "mean", "lo", "hi"], rows))
    return paths


def write_traces(path, groups: dict[str, Sequence[EpisodeTrace]], seed, config, means=None) -> Path:
    """Write traces grouped by policy label.

    A ``#meta`` line after the header records the arm means and each
    policy's warm-up so metrics can be rebuilt from the file alone.
    """
    first = next(iter(groups.values()))[0]
    means = list(means if means is not None else first.meta.get("means", []))
    meta = {"means": means, "warmup": {p: (trs[0].warmup if trs else 0) for p, trs in groups.items()}}
    with _open(path) as fh:
        fh.write(header_line(seed, config) + "\n")
        fh.write("#meta " + json.dumps(_jsonable(meta), sort_keys=True, separators=(",", ":")) + "\n")
        for policy, traces in groups.items():
            for tr in traces:
                rep = tr.meta.get("replicate", 0)
                for rec in tr.records():
                    fh.write(json.dumps({"policy": policy, "replicate": rep, **rec}, separators=(",", ":")) + "\n")
    return Path(path)


def read_traces(path) -> tuple[dict[str, list[EpisodeTrace]], dict]:
    """Traces grouped by policy label (file order) and the ``#meta`` record."""
    groups: dict[tuple[str, int], list] = {}
    meta: dict = {}
    try:
        fh = Path(path).open()
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}") from None
    with fh:
        for n, line in enumerate(fh, start=1):
            if line.startswith("#meta "):
                meta = json.loads(line[6:])
                continue
            if not line.strip() or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                key = (rec.pop("policy"), rec.pop("replicate"))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigurationError(f"{path}:{n}: bad trace record ({exc})") from None
            groups.setdefault(key, []).append(rec)
    if not groups:
        raise ConfigurationError(f"{path}: no trace records")
    means = meta.get("means") or None
    out: dict[str, list[EpisodeTrace]] = {}
    for (policy, rep), recs in groups.items():
        m = {"policy": policy, "replicate": rep}
        if means:
            m.update(means=list(means), optimal_arm=int(np.argmax(means)))
        w = int(meta.get("warmup", {}).get(policy, 0))
        out.setdefault(policy, []).append(EpisodeTrace.from_records(recs, warmup=w, meta=m))
    return out, meta


# ---------------------------------------------------------------------------
# Backtest outputs
# ---------------------------------------------------------------------------

TABLE3_METRICS = ("total_return", "sharpe", "max_drawdown", "calmar")


def write_backtest_metrics(path, results: dict, seed, config) -> Path:
    """One row per strategy; mean and SD across runs (SD 0 for single runs)."""
    cols = ["strategy", "runs"]
    for m in TABLE3_METRICS:
        cols += [f"{m}_mean", f"{m}_sd"]
    rows = []
    for name, res in results.items():
        row = [name, len(res.runs)]
        for m in TABLE3_METRICS:
            row += [res.mean(m), res.sd(m)]
        rows.append(row)
    return _write_csv(path, seed, config, cols, rows)


def write_wealth(path, res, seed, config) -> Path:
    """First run's path with its arms and regimes, plus the MC mean and band."""
    W = res.wealth_runs
    mean = W.mean(axis=0)
    lo, hi = np.quantile(W, [0.025, 0.975], axis=0)
    rows = []
    for i, (d, w, arm, reg) in enumerate(res.curve.rows()):
        rows.append((d.isoformat(), w, arm, reg, mean[i], lo[i], hi[i]))
    return _write_csv(path, seed, config, ["date", "wealth", "arm", "regime", "mean", "lo", "hi"], rows)


def write_hmm(path, model: HmmModel, rmap: RegimeMap | None, seed, config) -> Path:
    return write_json(path, model_to_dict(model, rmap), seed, config)


def write_regime_probabilities(path, dates, probs, labels, rmap: RegimeMap | None, seed, config) -> Path:
    S = probs.shape[1]
    names = [rmap.label(s).value if rmap is not None else f"state{s}" for s in range(S)]
    cols = ["date", *[f"p_{n.lower()}" for n in names], "regime"]
    rows = [(d.isoformat(), *p, lab) for d, p, lab in zip(dates, probs, labels)]
    return _write_csv(path, seed, config, cols, rows)
