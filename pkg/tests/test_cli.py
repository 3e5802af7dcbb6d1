import json
import math
import shutil
from pathlib import Path

import pytest

from cli_flow import cli, run_flow

GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    return run_flow(tmp_path_factory.mktemp("flow"))


def _close(a, b, path="report"):
    if isinstance(a, dict):
        assert set(a) == set(b), path
        for k in a:
            _close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, float) or isinstance(b, float):
        assert a == pytest.approx(b, abs=1e-9), path
    else:
        assert a == b, path


def test_end_to_end_report_matches_golden(flow):
    got = json.loads(flow["report"].read_text())
    _close(got, json.loads((GOLDEN / "end2end_report.json").read_text()))


def test_predictions_match_frozen_run(flow):
    assert flow["predictions"].read_bytes() == (GOLDEN / "predictions.json").read_bytes()


def test_run_report_has_no_timing_by_default(flow):
    report = json.loads(flow["run"].read_text())
    assert "timing_seconds" not in report and report["errors"] == []


def test_rerun_is_byte_identical(flow, tmp_path):
    again = run_flow(tmp_path)
    for name in ("detector.bin", "domain.bin", "ranker.bin"):
        assert (again["models"] / name).read_bytes() == (flow["models"] / name).read_bytes()
    assert again["predictions"].read_bytes() == flow["predictions"].read_bytes()


def test_parallel_run_matches_sequential(flow, tmp_path):
    out = tmp_path / "p.json"
    code, _, err = cli("run", "--kb", flow["data"] / "knowledge.json", "--logs", flow["data"] / "test_logs.json",
                       "--models", flow["models"], "--out", out, "--workers", 4)
    assert code == 0, err
    assert out.read_bytes() == flow["predictions"].read_bytes()


def test_kb_stats_and_validate(flow, tmp_path):
    code, out, _ = cli("kb", "stats", "--kb", flow["data"] / "knowledge.json", "--json", tmp_path / "s.json")
    assert code == 0 and "total" in out.lower()
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["total"]["snippets"] > 0
    code, out, _ = cli("kb", "validate", "--kb", flow["data"] / "knowledge.json")
    assert code == 0 and out.startswith("ok:")


def test_empty_kb_stats_are_zero(tmp_path):
    kb = tmp_path / "kb.json"
    kb.write_text("{}")
    code, _, _ = cli("kb", "stats", "--kb", kb, "--json", tmp_path / "s.json")
    assert code == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["total"] == {"entities": 0, "snippets": 0} and stats["domains"] == {}


def test_user_errors_exit_2(flow, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"hotel": {"1": {"name": "X", "docs": {"0": {"title": 5}}}}}')
    assert cli("kb", "validate", "--kb", bad)[0] == 2
    bad.write_text("{not json")
    assert cli("kb", "validate", "--kb", bad)[0] == 2
    assert cli("kb", "validate", "--kb", tmp_path / "missing.json")[0] == 2
    assert cli("kb", "stats")[0] == 2  # missing --kb
    assert cli("run", "--kb", flow["data"] / "knowledge.json", "--models", flow["models"])[0] == 2
    short = tmp_path / "short.json"
    short.write_text(json.dumps(json.loads(flow["predictions"].read_text())[:-1]))
    code, _, err = cli("evaluate", "end2end", "--predictions", short, "--labels", flow["labels"])
    assert code == 2 and "error" in err
    assert cli("--set", "nope=1", "config")[0] == 2
    assert cli("--set", "margin=-1", "config")[0] == 2
    with pytest.raises(SystemExit) as info:
        cli("evaluate", "nonsense-mode")
    assert info.value.code == 2


def test_unreachable_gateway_exits_1(flow, tmp_path):
    code, _, err = cli("run", "--kb", flow["data"] / "knowledge.json", "--logs", flow["data"] / "test_logs.json",
                       "--models", flow["models"], "--out", tmp_path / "p.json", "--gateway", "tcp://127.0.0.1:1")
    assert code == 1 and "samples failed" in err and "detection" in err
    assert (tmp_path / "p.json").exists()


def test_missing_models_exit_2(flow, tmp_path):
    code, _, _ = cli("run", "--kb", flow["data"] / "knowledge.json", "--logs", flow["data"] / "test_logs.json",
                     "--models", tmp_path, "--out", tmp_path / "p.json")
    assert code == 2


def test_config_overrides():
    code, out, _ = cli("--set", "margin=0.5", "--set", "fallback=all", "config")
    assert code == 0
    cfg = json.loads(out)
    assert cfg["margin"] == 0.5 and cfg["fallback"] == "all"


def test_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 7}))
    code, out, _ = cli("--config", path, "config")
    assert code == 0 and json.loads(out)["seed"] == 7
    path.write_text("[1, 2]")
    assert cli("--config", path, "config")[0] == 2


def test_ttest_identical_and_shifted(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.txt"
    a.write_text(json.dumps([1, 5, 9, 3]))
    b.write_text("1\n5\n9\n3\n")
    code, out, _ = cli("ttest", a, b)
    rep = json.loads(out)
    assert code == 0 and rep["t"] == 0 and rep["p"] == 1.0 and not rep["significant_at_0.05"]
    b.write_text("2\n6\n10\n4\n")  # constant difference
    code, out, _ = cli("ttest", b, a, "--out", tmp_path / "r.json")
    rep = json.loads(out)
    assert rep["t"] == "inf" and rep["p"] == 0.0
    b.write_text("2\n6\n10\n")
    assert cli("ttest", a, b)[0] == 2
    b.write_text('{"x": 1}')
    assert cli("ttest", a, b)[0] == 2


def test_separable_toy_detector(tmp_path):
    samples = [{"utterance": f"does it have {w}?", "label": True} for w in ("wifi", "parking", "a gym", "pets")]
    samples += [{"utterance": f"book a {w} for me", "label": False} for w in ("taxi", "table", "room", "train")]
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(samples))
    code, out, err = cli("train", "detector", "--samples", path, "--out", tmp_path / "d.bin")
    assert code == 0, err
    rep = json.loads(out)
    assert rep["train_accuracy"] == 1.0 and rep["samples"] == 8
    assert math.isfinite(rep["final_loss"])


def test_tune_threshold_command(flow, tmp_path):
    model = tmp_path / "det.bin"
    shutil.copy(flow["models"] / "detector.bin", model)
    code, out, _ = cli("tune-threshold", "--model", model, "--logs", flow["data"] / "val_logs.json",
                       "--labels", flow["data"] / "val_labels.json")
    rep = json.loads(out)
    assert code == 0 and 0.0 <= rep["threshold"] <= 1.0 and rep["validation_f1"] == 1.0


@pytest.mark.parametrize("mode", ["detection", "selection", "generation", "end2end"])
def test_evaluate_modes(flow, mode, tmp_path):
    code, out, err = cli("evaluate", mode, "--predictions", flow["predictions"], "--labels", flow["labels"],
                         "--out", tmp_path / "r.json")
    assert code == 0, err
    assert json.loads((tmp_path / "r.json").read_text())["mode"] == mode
