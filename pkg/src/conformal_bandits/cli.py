"""Command-line entry point.

Subcommands:

``simulate``  Monte-Carlo run of a scenario's policy grid; writes the
              summary JSON, coverage/width table, curve files and a manifest.
``backtest``  Portfolio backtest on a price CSV (the bundled fixture by
              default); writes the metrics table, wealth curves and the HMM.
``fit-hmm``   Fit the regime model to a return series and write the model
              plus filtered state probabilities.
``export``    Re-emit tables and curves from a summary JSON or trace file.

Errors in inputs exit with status 2 and a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import export
from ._version import __version__
from .errors import ConformalBanditsError
from .fixture import FIXTURE_PATH
from .harness import Feedback, run_monte_carlo, summarise
from .hmm import em_fit, filter_path, label_states
from .policies import EpsilonSchedule, PolicyKind, PolicySpec
from .portfolio import BacktestConfig, backtest, default_policy_grid, load_prices, log_returns, prepare_backtest
from .scenarios import builtin_scenarios, load_scenario, parse_policy_name

__all__ = ["main", "build_parser"]

_UCB_KINDS = (PolicyKind.UCB1, PolicyKind.MV_UCB1, PolicyKind.REGIME_MV_UCB1)
_MV_KINDS = (PolicyKind.MV_UCB1, PolicyKind.REGIME_MV_UCB1)


def slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Policy overrides
# ---------------------------------------------------------------------------


def _explicit_epsilon(args) -> EpsilonSchedule | None:
    if args.epsilon is not None and args.gamma is not None:
        raise ConformalBanditsError("give at most one of --epsilon (constant) and --gamma (decay)")
    if args.gamma is not None:
        return EpsilonSchedule.decay(args.gamma)
    if args.epsilon is not None:
        return EpsilonSchedule.constant(args.epsilon) if args.epsilon > 0 else EpsilonSchedule.none()
    return None


def _override(spec: PolicySpec, args, feedback: Feedback) -> PolicySpec:
    kw = {}
    k = spec.kind
    if args.beta is not None and k in _UCB_KINDS:
        kw["beta"] = args.beta
    if args.rho is not None and k in _MV_KINDS:
        kw["rho"] = args.rho
    if args.lam is not None and k is PolicyKind.CP_BANDIT:
        kw["lam"] = args.lam
    if k.is_conformal:
        eps = _explicit_epsilon(args)
        if eps is not None:
            kw["epsilon"] = eps
        elif feedback is Feedback.FULL:
            # full feedback needs no forced exploration
            kw["epsilon"] = EpsilonSchedule.none()
    return replace(spec, **kw)


def _cli_policies(names, base: tuple[PolicySpec, ...]) -> list[PolicySpec]:
    """Specs for ``--policy`` names, inheriting hyperparameters from the
    scenario's first policy of the same kind when there is one."""
    out = []
    for name in names:
        kind, lam = parse_policy_name(name)
        spec = next((p for p in base if p.kind is kind), None) or PolicySpec(kind)
        if lam is not None:
            spec = replace(spec, lam=lam)
        out.append(spec)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.M is not None:
        changes["replicates"] = args.M
    if args.T is not None:
        changes["horizon"] = args.T
    if args.feedback is not None:
        changes["feedback"] = Feedback.parse(args.feedback)
    cp_kw = {}
    if args.alpha is not None:
        cp_kw["alpha"] = args.alpha
    if args.ridge is not None:
        cp_kw["ridge"] = args.ridge
    if args.aci_step is not None:
        cp_kw["aci_step"] = args.aci_step
    if cp_kw:
        changes["cp"] = replace(sc.cp, **cp_kw)
    sc = sc.with_overrides(**changes)
    if sc.replicates < 1 or sc.horizon < 2:
        raise ConformalBanditsError("--M must be >= 1 and --T >= 2")

    specs = _cli_policies(args.policy, sc.policies) if args.policy else list(sc.policies)
    specs = [_override(p, args, sc.feedback) for p in specs]
    labels = _unique([p.describe() for p in specs])
    sc = sc.with_overrides(policies=tuple(specs), labels=tuple(labels))
    config = sc.resolved()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": "simulate", "scenario": str(args.scenario), "out": str(out), "resolved": config}
    export.write_json(out / "manifest.json", manifest, sc.seed, config)

    summaries, traces = [], {}
    for label, spec in zip(labels, specs):
        t0 = time.perf_counter()
        res = run_monte_carlo(
            sc.model, spec, sc.horizon, sc.replicates, sc.seed, sc.feedback, sc.cp, keep_traces=args.traces
        )
        summary, trs = res if args.traces else (res, None)
        summary.policy = label
        summaries.append(summary)
        if trs is not None:
            traces[label] = trs
        export.write_curves(out, summary, slug(label), sc.seed, config)
        _log(
            args,
            f"{label:<24} regret@T {summary.regret_mean[-1]:.4f}  "
            f"arm1 coverage {100 * summary.coverage_mean[0]:.2f}%  width {summary.width_mean[0]:.3f}  "
            f"({time.perf_counter() - t0:.1f}s)",
        )
    export.write_summaries(out / "summary.json", summaries, sc.seed, config)
    export.write_table1(out / "table1.csv", summaries, sc.seed, config)
    if traces:
        export.write_traces(out / "traces.jsonl", traces, sc.seed, config, means=sc.model.means)
    _log(args, f"wrote results to {out}")
    return 0


def _unique(labels):
    seen, out = {}, []
    for lab in labels:
        n = seen.get(lab, 0)
        seen[lab] = n + 1
        out.append(lab if n == 0 else f"{lab} #{n + 1}")
    return out


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


def _backtest_config(args) -> BacktestConfig:
    kw = {}
    for flag, field_ in (
        ("runs", "runs"),
        ("hmm_burn_in", "hmm_burn_in"),
        ("mv_window", "mv_window"),
        ("ridge", "ridge"),
        ("alpha", "alpha"),
        ("beta", "beta"),
        ("rho", "rho"),
        ("lam", "lam"),
        ("gamma", "gamma"),
        ("aci_step", "aci_step"),
    ):
        v = getattr(args, flag)
        if v is not None:
            kw[field_] = v
    if args.epsilon is not None:
        if args.gamma is not None:
            raise ConformalBanditsError("give at most one of --epsilon (constant) and --gamma (decay)")
        kw["epsilon"] = args.epsilon
    return BacktestConfig(**kw)


def cmd_backtest(args) -> int:
    cfg = _backtest_config(args)
    feedback = Feedback.parse(args.feedback or "partial")
    if feedback is Feedback.FULL and (args.epsilon is not None or args.gamma is not None):
        # explicit exploration is kept even with full feedback
        cfg = replace(cfg, explore_full=True)
    seed = 0 if args.seed is None else args.seed
    data_path = Path(args.data) if args.data else FIXTURE_PATH
    prices = load_prices(data_path)
    policies = args.policy or default_policy_grid()
    config = {
        "command": "backtest",
        "data": data_path.name if not args.data else str(args.data),
        "benchmark": args.benchmark,
        "feedback": feedback.value,
        "policies": list(policies),
        **{k: v for k, v in cfg.__dict__.items()},
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export.write_json(out / "manifest.json", {"command": "backtest", "out": str(out), "resolved": config}, seed, config)

    data = prepare_backtest(prices, cfg, args.benchmark)
    results, _ = backtest(prices, policies, cfg, feedback, seed, args.benchmark, data=data)
    export.write_backtest_metrics(out / "metrics.csv", results, seed, config)
    for name, res in results.items():
        export.write_wealth(out / f"wealth_{slug(name)}.csv", res, seed, config)
    export.write_hmm(out / "hmm.json", data.hmm, data.regime_map, seed, config)
    if not args.quiet:
        print(f"{'strategy':<24}{'runs':>6}{'total return':>20}{'sharpe':>16}{'max drawdown':>18}{'calmar':>16}")
        for name, res in results.items():
            cells = "".join(
                f"{res.mean(m):>10.4f} ({res.sd(m):.3f})".rjust(w)
                for m, w in (("total_return", 20), ("sharpe", 16), ("max_drawdown", 18), ("calmar", 16))
            )
            print(f"{name:<24}{len(res.runs):>6}{cells}")
    _log(args, f"wrote results to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit-hmm
# ---------------------------------------------------------------------------


def cmd_fit_hmm(args) -> int:
    seed = 0 if args.seed is None else args.seed
    data_path = Path(args.data) if args.data else FIXTURE_PATH
    prices = load_prices(data_path)
    rets = log_returns(prices)
    if args.column:
        if args.column not in rets.tickers:
            raise ConformalBanditsError(f"column {args.column!r} not in {', '.join(rets.tickers)}")
        x = rets.returns[:, rets.tickers.index(args.column)]
    else:
        x = rets.returns.mean(axis=1)
    model = em_fit(
        x,
        n_states=args.states,
        restarts=args.restarts,
        rng=np.random.default_rng(seed),
    )
    rmap = label_states(model) if args.states == 3 else None
    probs = filter_path(model, x)
    if rmap is not None:
        labels = [rmap.label(int(s)).value for s in probs.argmax(axis=1)]
    else:
        labels = [f"state{int(s)}" for s in probs.argmax(axis=1)]
    config = {
        "command": "fit-hmm",
        "data": data_path.name if not args.data else str(args.data),
        "column": args.column,
        "states": args.states,
        "restarts": args.restarts,
    }
    out = Path(args.out)
    export.write_hmm(out / "hmm.json", model, rmap, seed, config)
    export.write_regime_probabilities(out / "regimes.csv", rets.dates, probs, labels, rmap, seed, config)
    if not args.quiet:
        for s in range(model.n_states):
            name = rmap.label(s).value if rmap else f"state{s}"
            print(f"{name:<8} mean {model.means[s]: .6f}  sd {np.sqrt(model.variances[s]):.6f}  stay {model.transition[s, s]:.3f}")
    _log(args, f"wrote results to {out}")
    return 0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def cmd_export(args) -> int:
    src = Path(args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if src.suffix == ".jsonl":
        groups, meta = export.read_traces(src)
        means = meta.get("means") or None
        if means is None:
            raise ConformalBanditsError(f"{src}: trace file lacks arm means; cannot compute regret")
        summaries = [summarise(trs, policy, means) for policy, trs in groups.items()]
        config = {"source": src.name, "means": means}
    else:
        config, summaries = export.read_summaries(src)
    seed = config.get("seed", "") if isinstance(config, dict) else ""
    for s in summaries:
        export.write_curves(out, s, slug(s.policy), seed, config)
    export.write_table1(out / "table1.csv", summaries, seed, config)
    if src.suffix == ".jsonl":
        export.write_summaries(out / "summary.json", summaries, seed, config)
    _log(args, f"wrote {len(summaries)} policies to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _shared(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--feedback", choices=["partial", "full"], help="reward feedback mode")
    p.add_argument("--policy", action="append", help="policy to run (repeatable); replaces the default grid")
    p.add_argument("--alpha", type=float, help="target miscoverage of the conformal intervals")
    p.add_argument("--beta", type=float, help="UCB exploration constant")
    p.add_argument("--rho", type=float, help="mean-variance risk weight of MV-UCB1")
    p.add_argument("--lambda", dest="lam", type=float, help="downside weight of CP-Bandit")
    p.add_argument("--epsilon", type=float, help="constant exploration probability for conformal policies")
    p.add_argument("--gamma", type=float, help="decaying exploration exponent for conformal policies")
    p.add_argument("--aci-step", type=float, help="adaptive conformal step size")
    p.add_argument("--ridge", type=float, help="ridge term (MV covariance in backtests, quantile fit in simulations)")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conformal-bandits", description="Conformal prediction bandits.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte-Carlo simulation of a scenario")
    s.add_argument(
        "--scenario",
        required=True,
        help=f"scenario file or built-in name ({', '.join(builtin_scenarios())})",
    )
    s.add_argument("--M", type=int, help="number of replicates")
    s.add_argument("--T", type=int, help="horizon")
    s.add_argument("--traces", action="store_true", help="also write every replicate's trace (large)")
    _shared(s)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("backtest", help="portfolio backtest on daily prices")
    b.add_argument("--data", help="price CSV (date column plus one column per ticker); default: bundled fixture")
    b.add_argument("--runs", type=int, help="replays of randomised policies (default 1000)")
    b.add_argument("--hmm-burn-in", type=int, help="days used to fit the regime model before the first decision")
    b.add_argument("--mv-window", type=int, help="trailing window for the mean-variance arm")
    b.add_argument("--benchmark", help="price column used for regime detection (excluded from the assets)")
    _shared(b)
    b.set_defaults(func=cmd_backtest)

    h = sub.add_parser("fit-hmm", help="fit the Gaussian HMM regime model")
    h.add_argument("--data", help="price CSV; default: bundled fixture")
    h.add_argument("--out", required=True, help="output directory")
    h.add_argument("--column", help="ticker whose returns are modelled; default: equal-weight average")
    h.add_argument("--states", type=int, default=3, help="number of hidden states")
    h.add_argument("--restarts", type=int, default=0, help="extra random restarts of EM")
    h.add_argument("--seed", type=int, help="seed for random restarts")
    h.add_argument("-q", "--quiet", action="store_true")
    h.set_defaults(func=cmd_fit_hmm)

    e = sub.add_parser("export", help="rebuild tables and curves from saved results")
    e.add_argument("source", help="summary.json or traces.jsonl")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("-q", "--quiet", action="store_true")
    e.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConformalBanditsError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
