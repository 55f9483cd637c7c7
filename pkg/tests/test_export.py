import csv
import hashlib
import json
import math

import numpy as np
import pytest

from conformal_bandits import export
from conformal_bandits._version import __version__
from conformal_bandits.environments import RewardModel
from conformal_bandits.errors import ConfigurationError
from conformal_bandits.harness import run_monte_carlo, summarise
from conformal_bandits.hmm import HmmModel, RegimeMap, model_from_dict
from conformal_bandits.policies import EpsilonSchedule, PolicyKind, PolicySpec

MODEL = RewardModel("gaussian", [0.5, 0.0, 0.0], 1.0)
CONFIG = {"scenario": "t", "alpha": 0.2}


@pytest.fixture(scope="module")
def mc():
    spec = PolicySpec(PolicyKind.CP_BANDIT, lam=0.5, epsilon=EpsilonSchedule.decay(0.1))
    summary, traces = run_monte_carlo(MODEL, spec, 40, 5, seed=3, keep_traces=True)
    summary.policy = "CP-Bandit(lambda=0.5)"
    return summary, traces


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# conformal-bandits")
    return list(csv.DictReader(lines[1:]))


def test_header_and_hash():
    canon = json.dumps(CONFIG, sort_keys=True, separators=(",", ":"))
    h = hashlib.sha256(canon.encode()).hexdigest()
    assert export.config_hash(CONFIG) == h
    assert export.header_line(7, CONFIG) == f"# conformal-bandits {__version__} | seed=7 | config=sha256:{h}"
    # key order does not matter
    assert export.config_hash({"alpha": 0.2, "scenario": "t"}) == h


def test_json_round_trip_with_non_finite(tmp_path):
    obj = {"a": [1.0, math.inf], "b": math.nan, "c": np.arange(3)}
    p = export.write_json(tmp_path / "x.json", obj, 1, CONFIG)
    assert p.read_text().startswith("# conformal-bandits")
    assert export.read_json(p) == {"a": [1.0, "inf"], "b": "nan", "c": [0, 1, 2]}


def test_read_json_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        export.read_json(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{oops")
    with pytest.raises(ConfigurationError, match="not a JSON"):
        export.read_json(tmp_path / "bad.json")
    (tmp_path / "other.json").write_text("{}")
    with pytest.raises(ConfigurationError, match="summaries"):
        export.read_summaries(tmp_path / "other.json")


def test_summary_round_trip(tmp_path, mc):
    summary, _ = mc
    p = export.write_summaries(tmp_path / "s.json", [summary], 3, CONFIG)
    config, back = export.read_summaries(p)
    assert config == CONFIG
    assert back[0].policy == summary.policy
    for k, v in summary.__dict__.items():
        if isinstance(v, np.ndarray):
            np.testing.assert_array_equal(getattr(back[0], k), v)


def test_table1_layout(tmp_path, mc):
    summary, _ = mc
    rows = read_csv(export.write_table1(tmp_path / "t.csv", [summary], 3, CONFIG))
    assert [r["metric"] for r in rows] == ["coverage", "width"]
    assert float(rows[0]["arm1_mean"]) == pytest.approx(100 * summary.coverage_mean[0], abs=1e-6)
    assert float(rows[1]["arm3_sd"]) == pytest.approx(summary.width_sd[2], abs=1e-6)


def test_curves(tmp_path, mc):
    summary, _ = mc
    paths = export.write_curves(tmp_path, summary, "cp", 3, CONFIG)
    assert sorted(p.name for p in paths) == ["best_arm_cp.csv", "cum_regret_cp.csv", "regret_cp.csv"]
    rows = read_csv(tmp_path / "regret_cp.csv")
    assert len(rows) == 40 and rows[0]["t"] == "1"
    assert float(rows[-1]["mean"]) == summary.regret_mean[-1]


def test_trace_round_trip_rebuilds_summary(tmp_path, mc):
    summary, traces = mc
    p = export.write_traces(tmp_path / "tr.jsonl", {summary.policy: traces}, 3, CONFIG, means=MODEL.means)
    groups, meta = export.read_traces(p)
    assert meta["means"] == list(MODEL.means)
    rebuilt = summarise(groups[summary.policy], summary.policy, meta["means"])
    for k in ("regret_mean", "cum_regret_hi", "best_arm_mean", "coverage_mean", "width_sd", "final_regret"):
        np.testing.assert_allclose(getattr(rebuilt, k), getattr(summary, k), rtol=1e-12)


def test_read_traces_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        export.read_traces(tmp_path / "none.jsonl")
    (tmp_path / "e.jsonl").write_text("# header\n")
    with pytest.raises(ConfigurationError, match="no trace records"):
        export.read_traces(tmp_path / "e.jsonl")
    (tmp_path / "b.jsonl").write_text('# header\n{"t": 1}\n')
    with pytest.raises(ConfigurationError, match=":2: bad trace record"):
        export.read_traces(tmp_path / "b.jsonl")


def test_reruns_are_byte_identical(tmp_path, mc):
    summary, _ = mc
    a = export.write_table1(tmp_path / "a.csv", [summary], 3, CONFIG).read_bytes()
    b = export.write_table1(tmp_path / "b.csv", [summary], 3, CONFIG).read_bytes()
    assert a == b


def test_hmm_file_round_trip(tmp_path):
    m = HmmModel(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), np.array([0.1, 0.0, -0.2]), np.array([1.0, 2.0, 3.0]))
    rm = RegimeMap.identity()
    p = export.write_hmm(tmp_path / "h.json", m, rm, 0, CONFIG)
    back, rm2 = model_from_dict(export.read_json(p))
    np.testing.assert_array_equal(back.means, m.means)
    assert rm2 == rm
