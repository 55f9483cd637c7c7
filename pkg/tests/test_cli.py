import csv
import subprocess
import sys

import pytest

from conformal_bandits import export
from conformal_bandits.cli import main

SIM = ["simulate", "--scenario", "big_gap_gaussian", "--M", "3", "--T", "30", "-q"]


def rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# conformal-bandits 0.1.0 | seed=")
    return list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main([*SIM, "--out", str(out), "--traces"]) == 0
    return out


def test_simulate_writes_everything(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    for f in ("manifest.json", "summary.json", "table1.csv", "traces.jsonl", "regret_ucb1.csv", "cum_regret_cp_esi.csv", "best_arm_cp_bandit_lambda_0_5.csv"):
        assert f in names
    table = rows(sim_dir / "table1.csv")
    assert [r["policy"] for r in table][:6] == [
        "UCB1",
        "CP-Bandit(lambda=0)",
        "CP-Bandit(lambda=0.5)",
        "CP-Bandit(lambda=0.7)",
        "CP-Bandit(lambda=1)",
        "CP-ESI",
    ]
    manifest = export.read_json(sim_dir / "manifest.json")
    assert manifest["resolved"]["replicates"] == 3 and manifest["resolved"]["horizon"] == 30


def test_simulate_is_deterministic(sim_dir, tmp_path):
    assert main([*SIM, "--out", str(tmp_path), "--traces"]) == 0
    for p in sim_dir.iterdir():
        if p.name != "manifest.json":
            assert p.read_bytes() == (tmp_path / p.name).read_bytes(), p.name
    a = export.read_json(sim_dir / "manifest.json")
    b = export.read_json(tmp_path / "manifest.json")
    a.pop("out"), b.pop("out")
    assert a == b


def test_seed_changes_results(sim_dir, tmp_path):
    assert main([*SIM, "--out", str(tmp_path), "--seed", "99"]) == 0
    assert (tmp_path / "regret_ucb1.csv").read_bytes() != (sim_dir / "regret_ucb1.csv").read_bytes()


def test_policy_selection_and_overrides(tmp_path):
    argv = [*SIM, "--out", str(tmp_path), "--policy", "cp_bandit:0.3", "--policy", "ucb1", "--beta", "4"]
    assert main(argv) == 0
    resolved = export.read_json(tmp_path / "manifest.json")["resolved"]
    pols = resolved["policies"]
    assert [p["label"] for p in pols] == ["CP-Bandit(lambda=0.3)", "UCB1"]
    assert pols[0]["epsilon"]["mode"] == "decay"  # inherited from the scenario
    assert pols[1]["beta"] == 4  # beta only reaches the UCB family
    assert pols[0]["beta"] == 2.0


def test_full_feedback_turns_off_exploration(tmp_path):
    assert main([*SIM, "--out", str(tmp_path), "--feedback", "full", "--policy", "cp_esi"]) == 0
    pol = export.read_json(tmp_path / "manifest.json")["resolved"]["policies"][0]
    assert pol["epsilon"]["mode"] == "none"


def test_export_from_summary_and_traces(sim_dir, tmp_path):
    assert main(["export", str(sim_dir / "summary.json"), "--out", str(tmp_path / "s"), "-q"]) == 0
    assert (tmp_path / "s" / "table1.csv").read_bytes() == (sim_dir / "table1.csv").read_bytes()
    assert main(["export", str(sim_dir / "traces.jsonl"), "--out", str(tmp_path / "t"), "-q"]) == 0
    a, b = rows(tmp_path / "t" / "table1.csv"), rows(sim_dir / "table1.csv")
    for ra, rb in zip(a, b):
        for k in ra:
            if k not in ("metric", "policy"):
                assert float(ra[k]) == pytest.approx(float(rb[k]), abs=1e-6)


@pytest.mark.parametrize(
    "argv, match",
    [
        (["simulate", "--scenario", "nope", "--out", "{out}"], "unknown scenario"),
        (["simulate", "--scenario", "big_gap_gaussian", "--policy", "thompson", "--out", "{out}"], "thompson"),
        (["simulate", "--scenario", "big_gap_gaussian", "--M", "0", "--out", "{out}"], "--M"),
        (["simulate", "--scenario", "big_gap_gaussian", "--epsilon", "0.1", "--gamma", "0.1", "--out", "{out}"], "at most one"),
        (["backtest", "--data", "{out}/missing.csv", "--out", "{out}"], "not found"),
        (["fit-hmm", "--column", "SPY", "--out", "{out}"], "SPY"),
        (["export", "{out}/none.json", "--out", "{out}"], "not found"),
    ],
)
def test_errors_exit_2(tmp_path, capsys, argv, match):
    argv = [a.replace("{out}", str(tmp_path)) for a in argv]
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert f"{argv[0]}: error:" in err and match in err


def test_argparse_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def bt_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bt")
    assert main(["backtest", "--runs", "2", "--seed", "4", "--out", str(out), "-q"]) == 0
    return out


def test_backtest_outputs(bt_dir):
    metrics = rows(bt_dir / "metrics.csv")
    assert [r["strategy"] for r in metrics] == [
        "CP-UCB",
        "Regime-Aware CP",
        "UCB1",
        "MV-UCB1",
        "Regime-Aware MV-UCB1",
        "Hold MV",
        "Hold EW",
    ]
    runs = {r["strategy"]: int(r["runs"]) for r in metrics}
    assert runs["CP-UCB"] == 2 and runs["UCB1"] == 1 and runs["Hold EW"] == 1
    wealth = rows(bt_dir / "wealth_regime_aware_cp.csv")
    assert float(wealth[0]["wealth"]) == 1.0 and wealth[1]["regime"] in ("bull", "neutral", "bear")
    hmm = export.read_json(bt_dir / "hmm.json")
    assert len(hmm["means"]) == 3


def test_backtest_burn_in_override(tmp_path):
    assert main(["backtest", "--runs", "1", "--hmm-burn-in", "250", "--policy", "Hold EW", "--out", str(tmp_path), "-q"]) == 0
    manifest = export.read_json(tmp_path / "manifest.json")
    assert manifest["resolved"]["hmm_burn_in"] == 250
    # a shorter burn-in starts trading earlier
    assert len(rows(tmp_path / "wealth_hold_ew.csv")) > 1500


def test_backtest_prints_table(tmp_path, capsys):
    assert main(["backtest", "--runs", "1", "--policy", "Hold EW", "--policy", "UCB1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "total return" in out and "Hold EW" in out and "UCB1" in out


def test_fit_hmm(tmp_path, capsys):
    assert main(["fit-hmm", "--out", str(tmp_path)]) == 0
    assert {"bull", "neutral", "bear"} <= set(capsys.readouterr().out.split())
    regimes = rows(tmp_path / "regimes.csv")
    assert set(regimes[0]) == {"date", "p_bull", "p_neutral", "p_bear", "regime"}
    assert abs(sum(float(regimes[5][k]) for k in ("p_bull", "p_neutral", "p_bear")) - 1) < 1e-9


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "conformal_bandits.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
