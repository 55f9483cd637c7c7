"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Monte-Carlo criteria use M = 200 replicates at T = 2000 with the bundled
scenario files; runs are cached per module so the suite finishes in a few
minutes on one core.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from conformal_bandits.conformal import ArmState, predict_interval, split_conformal_interval
from conformal_bandits.fixture import FIXTURE_PATH
from conformal_bandits.harness import Feedback, run_monte_carlo
from conformal_bandits.hmm import HmmModel, em_fit, filter_path, log_likelihood
from conformal_bandits.policies import EpsilonSchedule, arm_probabilities, epsilon_at, randomise
from conformal_bandits.portfolio import BacktestConfig, backtest, load_prices, mv_weights, prepare_backtest
from conformal_bandits.scenarios import load_scenario

M = 200
T = 2000

_cache: dict = {}


def mc(scenario: str, label: str):
    """Cached M = 200 run of one labelled policy from a built-in scenario."""
    key = (scenario, label)
    if key not in _cache:
        sc = load_scenario(scenario)
        spec = dict(zip(sc.labels, sc.policies))[label]
        _cache[key] = run_monte_carlo(sc.model, spec, T, M, sc.seed, sc.feedback, sc.cp)
    return _cache[key]


CP_BANDITS = ("cp_bandit_0", "cp_bandit_05", "cp_bandit_07", "cp_bandit_1")
CP_ALL = CP_BANDITS + ("cp_esi",)


# -- 1 -----------------------------------------------------------------------------------


def _coverage(alpha, seed, reps=5000):
    g = np.random.default_rng(seed)
    draws = {
        "gaussian": lambda n: g.normal(size=n),
        "student_t3": lambda n: g.standard_t(3, n),
        "skewed": lambda n: g.exponential(size=n) - 1.0,
    }
    cover = {}
    for name, draw in draws.items():
        cqr = split = split_x = 0
        for i in range(reps):
            n = 12 + i % 40
            y = draw(n + 1)
            s = ArmState(0, alpha=alpha)
            for v in y[:n]:
                s.add(v)
            cqr += y[n] in predict_interval(s, alpha=alpha)
            split += y[n] in split_conformal_interval(y[: n // 2], y[n // 2 : n], alpha)
            x = g.normal(size=n + 1)
            yx = 0.5 * x + y
            split_x += yx[n] in split_conformal_interval(
                yx[: n // 2], yx[n // 2 : n], alpha, x[: n // 2], x[n // 2 : n], x[n : n + 1]
            )
        cover[name] = (cqr / reps, split / reps, split_x / reps)
    return cover


def test_criterion_1_conformal_validity(report):
    ok, parts = True, []
    for alpha in (0.1, 0.2):
        cover = _coverage(alpha, 1000 + int(alpha * 100))
        worst = min(min(v) for v in cover.values())
        ok &= worst >= 1 - alpha - 0.01
        parts.append(f"alpha={alpha}: min {worst:.4f} >= {1 - alpha - 0.01:.2f}")
        parts += [f"  {k} cqr {a:.4f} split {b:.4f} split+x {c:.4f}" for k, (a, b, c) in cover.items()]
    report(1, ok, "; ".join(p.strip() for p in parts))
    assert ok


# -- 2 -----------------------------------------------------------------------------------


def test_criterion_2_small_gap_gaussian_table(report):
    cp = mc("small_gap_gaussian", "cp_bandit_0")
    ucb = mc("small_gap_gaussian", "ucb1")
    c_cp, w_cp = 100 * cp.coverage_mean[0], cp.width_mean[0]
    c_u, w_u = 100 * ucb.coverage_mean[0], ucb.width_mean[0]
    checks = [
        abs(c_cp - 80.06) <= 1.0,
        abs(w_cp - 0.26) <= 0.03,
        abs(c_u - 84.01) <= 2.0,
        abs(w_u - 0.34) <= 0.02,
    ]
    ok = all(checks)
    report(
        2,
        ok,
        f"CP-Bandit(0) cov {c_cp:.2f} (80.06+-1) width {w_cp:.3f} (0.26+-0.03); "
        f"UCB1 cov {c_u:.2f} (84.01+-2) width {w_u:.3f} (0.34+-0.02)",
    )
    assert ok


# -- 3 -----------------------------------------------------------------------------------


def test_criterion_3_student_t_undercoverage(report):
    ucb = 100 * mc("small_gap_student_t", "ucb1").coverage_mean[0]
    cps = {lab: 100 * mc("small_gap_student_t", lab).coverage_mean[0] for lab in CP_BANDITS}
    ok = ucb < 78 and min(cps.values()) >= 79
    report(3, ok, f"UCB1 {ucb:.2f} < 78; CP-Bandit " + ", ".join(f"{k} {v:.2f}" for k, v in cps.items()) + " >= 79")
    assert ok


# -- 4 -----------------------------------------------------------------------------------


def test_criterion_4_big_gap_failure_mode(report):
    ucb = mc("big_gap_student_t", "ucb1")
    cps = {lab: mc("big_gap_student_t", lab) for lab in CP_ALL}
    c_u = 100 * ucb.coverage_mean[0]
    c_cp = {k: 100 * v.coverage_mean[0] for k, v in cps.items()}
    r_u = ucb.regret_mean[-1]
    r_cp = {k: v.regret_mean[-1] for k, v in cps.items()}
    ok = c_u < 15 and min(c_cp.values()) >= 79 and all(r_u < r for r in r_cp.values())
    report(
        4,
        ok,
        f"UCB1 cov {c_u:.2f} < 15, regret {r_u:.4f}; CP cov min {min(c_cp.values()):.2f} >= 79; "
        f"CP regret min {min(r_cp.values()):.4f} > UCB1",
    )
    assert ok


# -- 5 -----------------------------------------------------------------------------------


def test_criterion_5_small_gap_regret_ordering(report):
    lines, ok = [], True
    for fam in ("gaussian", "student_t", "skew_t"):
        sc = f"small_gap_{fam}"
        ucb = mc(sc, "ucb1")
        for lab in ("cp_bandit_05", "cp_esi"):
            s = mc(sc, lab)
            mean_ok = s.regret_mean[-1] < ucb.regret_mean[-1]
            band_ok = s.regret_hi[-1] < ucb.regret_lo[-1]
            ok &= mean_ok and band_ok
            lines.append(
                f"{fam}/{lab} {s.regret_mean[-1]:.4f} [{s.regret_lo[-1]:.4f},{s.regret_hi[-1]:.4f}] vs UCB1 "
                f"{ucb.regret_mean[-1]:.4f} [{ucb.regret_lo[-1]:.4f},{ucb.regret_hi[-1]:.4f}]"
                f"{'' if mean_ok and band_ok else ' <- violated'}"
            )
    report(5, ok, "; ".join(lines))
    assert ok


# -- 6 -----------------------------------------------------------------------------------


def test_criterion_6_randomisation_law(report):
    g = np.random.default_rng(6)
    draws = 100_000
    worst = 0.0
    for K, eps, det in ((3, 0.1, 0), (3, 0.3, 2), (5, 0.05, 1), (2, 0.5, 1)):
        counts = np.bincount([randomise(det, eps, K, g).chosen_arm for _ in range(draws)], minlength=K)
        worst = max(worst, np.abs(counts / draws - arm_probabilities(det, eps, K)).max())
    freq_ok = worst <= 0.01
    table = [(1, 3, 0.1), (2, 3, 0.1), (100, 3, 0.1), (2000, 3, 0.5), (7, 5, 1.0), (10, 2, 0.25)]
    exact = all(epsilon_at(t, K, EpsilonSchedule.decay(gm)) == t ** (-gm) / (K - 1) for t, K, gm in table)
    # hand-computed values
    known = epsilon_at(16, 3, EpsilonSchedule.decay(0.5)) == 0.125 and epsilon_at(1, 4, EpsilonSchedule.decay(0.1)) == 1 / 3
    ok = freq_ok and exact and known
    report(6, ok, f"max |freq - law| {worst:.4f} <= 0.01 over 1e5 draws; epsilon table exact: {exact and known}")
    assert ok


# -- 7 -----------------------------------------------------------------------------------


def _enumerate(model, x):
    S = model.n_states
    dens = stats.norm.pdf(np.asarray(x)[:, None], model.means, np.sqrt(model.variances))
    out, total = [], 0.0
    for t in range(1, len(x) + 1):
        joint = np.zeros(S)
        for path in itertools.product(range(S), repeat=t):
            p = model.initial[path[0]] * dens[0, path[0]]
            for i in range(1, t):
                p *= model.transition[path[i - 1], path[i]] * dens[i, path[i]]
            joint[path[-1]] += p
        out.append(joint / joint.sum())
        total = joint.sum()
    return np.array(out), math.log(total)


def _three_state(n, seed):
    g = np.random.default_rng(seed)
    A = np.array([[0.95, 0.03, 0.02], [0.04, 0.92, 0.04], [0.02, 0.03, 0.95]])
    z = np.empty(n, dtype=int)
    z[0] = g.integers(3)
    for t in range(1, n):
        z[t] = g.choice(3, p=A[z[t - 1]])
    return np.array([-2.0, 0.0, 2.0])[z] + 0.3 * g.standard_normal(n), z


def test_criterion_7_hmm_oracles(report):
    g = np.random.default_rng(7)
    filt_err = ll_err = 0.0
    for _ in range(20):
        m = HmmModel(
            g.dirichlet(np.ones(2)),
            g.dirichlet(np.ones(2), size=2),
            g.normal(size=2),
            g.uniform(0.2, 2.0, 2),
        )
        x = g.normal(scale=1.5, size=3)
        f, ll = _enumerate(m, x)
        filt_err = max(filt_err, np.abs(filter_path(m, x) - f).max())
        ll_err = max(ll_err, abs(log_likelihood(m, x) - ll))
    enum_ok = filt_err <= 1e-10 and ll_err <= 1e-10

    worst_drop = 0.0
    for i in range(100):
        S = 2 + i % 3
        x = g.standard_t(4, int(g.integers(10 * S, 300))) * g.uniform(0.01, 2.0)
        path = np.asarray(em_fit(x, S, init="random", rng=g, max_iter=50).loglik_path)
        worst_drop = max(worst_drop, -np.diff(path).min() / max(1.0, abs(path[-1])))
    mono_ok = worst_drop <= 1e-9

    x, z = _three_state(5000, 77)
    state = filter_path(em_fit(x, 3), x).argmax(axis=1)
    acc = max(np.mean(np.asarray(p)[state] == z) for p in itertools.permutations(range(3)))
    ok = enum_ok and mono_ok and acc >= 0.9
    report(
        7,
        ok,
        f"filter err {filt_err:.1e}, loglik err {ll_err:.1e} (<=1e-10); "
        f"EM worst relative drop {worst_drop:.1e} on 100 fits; recovery {acc:.4f} >= 0.90",
    )
    assert ok


# -- 8 -----------------------------------------------------------------------------------


def test_criterion_8_mv_closed_form(report):
    g = np.random.default_rng(8)
    worst = math.inf
    for n in (2, 3, 4):
        for _ in range(5):
            A = g.normal(size=(n + 2, n))
            C = A.T @ A / (n + 2) + 0.05 * np.eye(n)
            mu = g.normal(scale=0.5, size=n)
            w = mv_weights(C, mu)
            d = g.normal(scale=2.0, size=(10_000, n))
            d -= d.mean(axis=1, keepdims=True)
            cand = w + d
            vals = np.einsum("ki,ij,kj->k", cand, C, cand) - cand @ mu
            worst = min(worst, vals.min() - (w @ C @ w - mu @ w))
    ew = mv_weights(np.eye(4), np.zeros(4))
    ok = worst >= -1e-12 and np.array_equal(ew, np.full(4, 0.25))
    report(8, ok, f"min(candidate - optimum) {worst:.2e} >= 0 over 15 x 1e4 vectors; identity gives EW {ew.tolist()}")
    assert ok


# -- 9 -----------------------------------------------------------------------------------

BT_RUNS = 200
BT_SEED = 2025


@pytest.fixture(scope="module")
def portfolio():
    prices = load_prices(FIXTURE_PATH)
    cfg = BacktestConfig(runs=BT_RUNS)
    data = prepare_backtest(prices, cfg)
    names = ["CP-UCB", "Regime-Aware CP", "MV-UCB1", "Regime-Aware MV-UCB1", "Hold SA"]
    partial, _ = backtest(prices, names, cfg, Feedback.PARTIAL, BT_SEED, data=data)
    full, _ = backtest(prices, ["Regime-Aware CP"], cfg, Feedback.FULL, BT_SEED, data=data)
    return partial, full


def test_criterion_9_portfolio_ordering(portfolio, report):
    res, full = portfolio
    rcp, cp = res["Regime-Aware CP"], res["CP-UCB"]
    mv, rmv = res["MV-UCB1"], res["Regime-Aware MV-UCB1"]
    sa = res["Hold SA"].curve.wealth
    a = rcp.mean("total_return") > cp.mean("total_return")
    b = rcp.mean("max_drawdown") < cp.mean("max_drawdown")
    c = rmv.mean("calmar") > mv.mean("calmar")
    d = bool(np.all(sa == 1.0))
    e = full["Regime-Aware CP"].mean("total_return") >= rcp.mean("total_return")
    ok = a and b and c and d and e
    report(
        9,
        ok,
        f"(a) total return {rcp.mean('total_return'):.4f} > {cp.mean('total_return'):.4f}: {a}; "
        f"(b) max drawdown {rcp.mean('max_drawdown'):.4f} < {cp.mean('max_drawdown'):.4f}: {b}; "
        f"(c) calmar {rmv.mean('calmar'):.4f} > {mv.mean('calmar'):.4f}: {c}; (d) Hold SA constant: {d}; "
        f"full-info {full['Regime-Aware CP'].mean('total_return'):.4f} >= partial {rcp.mean('total_return'):.4f}: {e}",
    )
    assert ok


# -- 10 ----------------------------------------------------------------------------------


def test_criterion_10_determinism(portfolio, report):
    sc = load_scenario("small_gap_gaussian")
    spec = dict(zip(sc.labels, sc.policies))["cp_bandit_0"]
    again = run_monte_carlo(sc.model, spec, T, M, sc.seed, sc.feedback, sc.cp)
    first = mc("small_gap_gaussian", "cp_bandit_0")
    sim_same = all(
        np.array_equal(getattr(first, k), getattr(again, k))
        for k, v in first.__dict__.items()
        if isinstance(v, np.ndarray)
    )
    x, _ = _three_state(2000, 10)
    fit_same = em_fit(x, 3, restarts=2, rng=np.random.default_rng(1)).loglik_path == em_fit(
        x, 3, restarts=2, rng=np.random.default_rng(1)
    ).loglik_path
    prices = load_prices(FIXTURE_PATH)
    cfg = BacktestConfig(runs=BT_RUNS)
    rerun, _ = backtest(prices, ["Regime-Aware CP"], cfg, Feedback.PARTIAL, BT_SEED)
    bt_same = np.array_equal(rerun["Regime-Aware CP"].wealth_runs, portfolio[0]["Regime-Aware CP"].wealth_runs)
    other = run_monte_carlo(sc.model, spec, 50, 5, sc.seed + 1, sc.feedback, sc.cp)
    base = run_monte_carlo(sc.model, spec, 50, 5, sc.seed, sc.feedback, sc.cp)
    seed_matters = not np.array_equal(other.regret_mean, base.regret_mean)
    ok = sim_same and fit_same and bt_same and seed_matters
    report(
        10,
        ok,
        f"simulation rerun identical: {sim_same}; EM rerun identical: {fit_same}; "
        f"backtest rerun identical: {bt_same}; different seed differs: {seed_matters}",
    )
    assert ok
