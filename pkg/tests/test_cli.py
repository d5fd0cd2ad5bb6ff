import json
from datetime import datetime, timedelta, timezone

import pytest
import yaml

from careflow.cli import main

UTC = timezone.utc


def run_cli(*argv) -> int:
    return main(list(argv))


def csv_from_codes(specs, cc_letter="C", or_letter="I"):
    """Expand code strings into a minimal event-log CSV (one case each)."""
    letter_dept = {"A": "AD", "F": "IC#1", "I": "OR", "C": "CC", "E": "CD#1", "D": "CD#2", "N": "OD"}
    lines = ["case_id,timestamp,department,event_kind,attrs"]
    for case_id, codes, start in specs:
        t = start
        dept = ""
        for pos, ch in enumerate(codes):
            dept = letter_dept[ch]
            ts = t.strftime("%Y-%m-%dT%H:%M:%SZ")
            lines.append(f"{case_id},{ts},{dept},{'entrance' if pos == 0 else 'transfer'},")
            if ch == cc_letter:
                lines.append(f"{case_id},{ts},{dept},surgery_cc,duration_min%3D40.0".replace("%3D", "="))
            elif ch == or_letter:
                lines.append(f"{case_id},{ts},{dept},surgery_pci,duration_min=40.0")
            t += timedelta(hours=6)
        ts = t.strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"{case_id},{ts},{dept},discharge,")
    return "\n".join(lines) + "\n"


@pytest.fixture
def small_config(tmp_path):
    cfg = {
        "synth": {"n_cases": 120, "seed": 77, "daily_mean": 6.0, "daily_sd": 3.0,
                  "noise": {"p_insert": 0.02, "p_delete": 0.02, "p_swap": 0.02}},
        "cluster": {"krange": [2, 5], "min_cluster_size": 3},
        "scenario": {
            "horizon_days": 3,
            "replications": 2,
            "n_angiography": [1, 2],
            "background_scale": [0.5, 1.0],
            "base_seed": 5,
        },
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_config_dump_defaults_is_valid_yaml(capsys):
    assert run_cli("config", "--dump-defaults") == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert data["schema_version"] == 1
    assert data["scenario"]["n_angiography"] == [2, 3, 4, 5]
    assert data["scenario"]["background_scale"] == [0.5, 1.0, 1.5, 2.0]


def test_bad_schema_version_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 99\n")
    assert run_cli("--config", str(bad), "config") == 2


def test_synth_deterministic_files(tmp_path, small_config):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("--config", str(small_config), "--out", str(out1), "synth") == 0
    assert run_cli("--config", str(small_config), "--out", str(out2), "synth") == 0
    assert (out1 / "events.csv").read_bytes() == (out2 / "events.csv").read_bytes()
    assert (out1 / "ground_truth.json").read_bytes() == (out2 / "ground_truth.json").read_bytes()
    truth = json.loads((out1 / "ground_truth.json").read_text())
    assert len(truth) == 120


def test_mine_alignment_example_with_template_override(tmp_path):
    start = datetime(2014, 1, 1, 8, tzinfo=UTC)
    specs = []
    for i, codes in enumerate(["AFIFDE"] * 6 + ["AFINFE"] * 6 + ["AFIFD"] * 6 + ["AFE"] * 10):
        specs.append((f"c{i:03d}", codes, start + timedelta(days=i)))
    log = tmp_path / "events.csv"
    log.write_text(csv_from_codes(specs))

    cfg = {
        "cluster": {"krange": [2, 2]},
        "templates": {1: "AEFNINFEDE"},
    }
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "mine"
    assert run_cli("--config", str(cfg_path), "--out", str(out), "mine", "--log", str(log)) == 0

    model = json.loads((out / "cluster_model.json").read_text())
    assert model["k"] == 2
    align_rows = (out / "alignments.csv").read_text().strip().split("\n")[1:]
    by_case = {}
    for row in align_rows:
        case_id, cl, compact = row.split(",")
        by_case[case_id] = compact
    assert by_case["c000"] == "A0F2I4F6D8E9"   # AFIFDE
    assert by_case["c006"] == "A0F2I4N5F6E7"   # AFINFE
    assert by_case["c012"] == "A0F2I4F6D8"     # AFIFD
    assert (out / "tree.json").exists()
    assert (out / "tree.dot").exists()
    assert (out / "graphs" / "cp_1.dot").exists()
    assert (out / "clean_report.json").exists()
    assert (out / "sequences.csv").exists()


def test_mine_empty_log_exits_2(tmp_path):
    log = tmp_path / "empty.csv"
    log.write_text("case_id,timestamp,department,event_kind,attrs\n")
    assert run_cli("--out", str(tmp_path / "o"), "mine", "--log", str(log)) == 2


def test_missing_input_exits_2(tmp_path):
    assert run_cli("--out", str(tmp_path), "mine", "--log", str(tmp_path / "nope.csv")) == 2
    assert run_cli("--out", str(tmp_path), "report", "--eval", str(tmp_path / "missing.json")) == 2


def full_pipeline(tmp_path, small_config, jobs="1"):
    data = tmp_path / "data"
    mine = tmp_path / "mine"
    fit = tmp_path / "fit"
    sim = tmp_path / "sim"
    base = tmp_path / "base"
    ev = tmp_path / "eval"
    c = str(small_config)
    assert run_cli("--config", c, "--out", str(data), "synth") == 0
    log = str(data / "events.csv")
    assert run_cli("--config", c, "--out", str(mine), "mine", "--log", log) == 0
    assert run_cli("--config", c, "--out", str(fit), "fit", "--log", log, "--model", str(mine)) == 0
    assert run_cli("--config", c, "--out", str(sim), "--jobs", jobs, "simulate", "--model", str(fit)) == 0
    assert run_cli("--config", c, "--out", str(base), "simulate", "--model", str(fit), "--baseline") == 0
    assert run_cli(
        "--config", c, "--out", str(ev), "evaluate",
        "--observed", log, "--results", str(sim), "--baseline-results", str(base),
        "--model", str(mine), "--top", "2",
    ) == 0
    return data, mine, fit, sim, base, ev


def test_full_pipeline_round(tmp_path, small_config):
    data, mine, fit, sim, base, ev = full_pipeline(tmp_path, small_config)
    cells = sorted(p.name for p in sim.iterdir())
    assert cells == ["s1_x0.5", "s1_x1.0", "s2_x0.5", "s2_x1.0"]
    summaries = json.loads((sim / "s1_x1.0" / "summary.json").read_text())
    assert len(summaries) == 2
    for s in summaries:
        assert s["generated"] == s["completed"]
    report = json.loads((ev / "eval_report.json").read_text())
    assert 0 <= report["ks_class_aware"] <= 1
    assert report["coverage"] is not None
    assert (ev / "qq.csv").exists() and (ev / "queue_summary.csv").exists()
    out_report = tmp_path / "rep"
    assert run_cli("--out", str(out_report), "report", "--eval", str(ev)) == 0
    text = (out_report / "report.md").read_text()
    assert "KS" in text or "reduction" in text


def test_simulate_rerun_and_parallel_byte_identical(tmp_path, small_config):
    data = tmp_path / "data"
    mine = tmp_path / "mine"
    fit = tmp_path / "fit"
    c = str(small_config)
    assert run_cli("--config", c, "--out", str(data), "synth") == 0
    log = str(data / "events.csv")
    assert run_cli("--config", c, "--out", str(mine), "mine", "--log", log) == 0
    assert run_cli("--config", c, "--out", str(fit), "fit", "--log", log, "--model", str(mine)) == 0
    s1, s2, s3 = tmp_path / "s1", tmp_path / "s2", tmp_path / "s3"
    assert run_cli("--config", c, "--out", str(s1), "simulate", "--model", str(fit)) == 0
    assert run_cli("--config", c, "--out", str(s2), "simulate", "--model", str(fit)) == 0
    assert run_cli("--config", c, "--out", str(s3), "--jobs", "2", "simulate", "--model", str(fit)) == 0
    for cell in ("s1_x0.5", "s1_x1.0", "s2_x0.5", "s2_x1.0"):
        ref = (s1 / cell / "patients.jsonl").read_bytes()
        assert (s2 / cell / "patients.jsonl").read_bytes() == ref
        assert (s3 / cell / "patients.jsonl").read_bytes() == ref


def test_evaluate_self_comparison_zero_reduction(tmp_path, small_config):
    data = tmp_path / "data"
    mine = tmp_path / "mine"
    fit = tmp_path / "fit"
    sim = tmp_path / "sim"
    c = str(small_config)
    run_cli("--config", c, "--out", str(data), "synth")
    log = str(data / "events.csv")
    run_cli("--config", c, "--out", str(mine), "mine", "--log", log)
    run_cli("--config", c, "--out", str(fit), "fit", "--log", log, "--model", str(mine))
    run_cli("--config", c, "--out", str(sim), "simulate", "--model", str(fit))
    ev = tmp_path / "ev"
    assert run_cli(
        "--config", c, "--out", str(ev), "evaluate",
        "--observed", log, "--results", str(sim), "--baseline-results", str(sim),
    ) == 0
    report = json.loads((ev / "eval_report.json").read_text())
    assert report["ks_reduction"] == 0.0


def test_synth_n_flag_overrides_config(tmp_path, small_config):
    out = tmp_path / "n"
    assert run_cli("--config", str(small_config), "--out", str(out), "synth", "--n", "17") == 0
    truth = json.loads((out / "ground_truth.json").read_text())
    assert len(truth) == 17


def test_traces_written_on_request(tmp_path, small_config):
    data, mine, fit = tmp_path / "d", tmp_path / "m", tmp_path / "f"
    c = str(small_config)
    run_cli("--config", c, "--out", str(data), "synth")
    log = str(data / "events.csv")
    run_cli("--config", c, "--out", str(mine), "mine", "--log", log)
    run_cli("--config", c, "--out", str(fit), "fit", "--log", log, "--model", str(mine))
    sim = tmp_path / "tr"
    assert run_cli("--config", c, "--out", str(sim), "simulate", "--model", str(fit), "--traces") == 0
    trace = sim / "s1_x0.5" / "trace_r000.csv"
    assert trace.exists()
    assert trace.read_text().splitlines()[0] == "time,holders,queue_len"
