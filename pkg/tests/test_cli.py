import csv
import json
from pathlib import Path

import pytest

from qcurrents import cli

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"


def flat_cfg(**over):
    cfg = json.loads((CONFIGS / "flat_mass.json").read_text())
    cfg.update(over)
    return cfg


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_expand_writes_json_and_csv(tmp_path):
    out = tmp_path / "r" / "flat.json"
    assert cli.main(["expand", "--config", str(CONFIGS / "flat_mass.json"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert all(rep["checks"].values())
    assert rep["sweep"]["slope"]["slope"] >= 3.8
    rows = list(csv.reader(out.with_suffix(".csv").open()))
    assert rows[0][:2] == ["eps", "oracle"] and rows[0][-1] == "closed_form_residual"
    assert len(rows) == 1 + len(rep["sweep"]["reports"])


def test_experiment_alias_and_stdout(capsys):
    assert cli.main(["expand", "--experiment", str(CONFIGS / "flat_mass.json")]) == 0
    assert json.loads(capsys.readouterr().out)["functional"] == "mass"


def test_failed_check_exits_one(tmp_path):
    cfg = flat_cfg(checks={"min_slope": 5.0})
    assert cli.main(["expand", "--config", write(tmp_path, "c.json", cfg)]) == 1


@pytest.mark.parametrize("bad,match", [
    ({"eps": [0.1, 0.2]}, "strictly decreasing"),
    ({"functional": "graph_variation"}, "does not belong"),
    ({"quad_order": "many"}, "schema violation"),
    ({"experiment": "nonsense"}, "schema violation"),
])
def test_schema_violations_exit_two(tmp_path, capsys, bad, match):
    assert cli.main(["expand", "--config", write(tmp_path, "c.json", flat_cfg(**bad))]) == 2
    assert match in capsys.readouterr().err


def test_wrong_subcommand_missing_file_and_bad_json(tmp_path, capsys):
    assert cli.main(["vary", "--config", str(CONFIGS / "flat_mass.json")]) == 2
    assert cli.main(["expand", "--config", str(tmp_path / "none.json")]) == 2
    assert cli.main(["expand", "--config", write(tmp_path, "b.json", "{")]) == 2
    err = capsys.readouterr().err
    assert "expects experiment" in err and "missing file" in err and "invalid JSON" in err


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("QCURRENTS_THREADS", raising=False)
    assert cli.thread_cap(None) == 1
    assert cli.thread_cap(6) == 6
    monkeypatch.setenv("QCURRENTS_THREADS", "4")
    assert cli.thread_cap(None) == 4
    assert cli.thread_cap(8) == 4
    assert cli.thread_cap(2) == 2
    monkeypatch.setenv("QCURRENTS_THREADS", "lots")
    with pytest.raises(cli.ConfigError):
        cli.thread_cap(None)
    assert cli.main(["push-forward", "--map", "sample"]) == 2


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["expand", "--config", str(CONFIGS / "flat_mass.json"), "--out", str(a), "--threads", "1"]) == 0
    monkeypatch.setenv("QCURRENTS_THREADS", "3")
    assert cli.main(["expand", "--config", str(CONFIGS / "flat_mass.json"), "--out", str(b), "--threads", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_push_forward_then_boundary(tmp_path):
    T = tmp_path / "t.json"
    assert cli.main(["push-forward", "--map", "sample", "--graph", "--out", str(T)]) == 0
    rep = json.loads(T.read_text())
    assert rep["mass"] > 1
    B, BB = tmp_path / "b.json", tmp_path / "bb.json"
    assert cli.main(["boundary", "--current", str(T), "--out", str(B)]) == 0
    assert cli.main(["boundary", "--current", str(B), "--out", str(BB)]) == 0
    assert json.loads(B.read_text())["cells"] > 0
    assert json.loads(BB.read_text())["cells"] == 0


def test_verify_commutation_on_the_sample_map(tmp_path):
    out = tmp_path / "c.json"
    assert cli.main(["verify-commutation", "--map", "sample", "--out", str(out)]) == 0


def test_reparam_rejects_missing_inputs(capsys):
    assert cli.main(["reparam", "--map", "sample"]) == 2
    assert "--phi" in capsys.readouterr().err


def test_baseline_detects_drift(tmp_path):
    report = {"a": 1.0, "fitted_C": 3.0, "ok": True, "v": [1, 2]}
    same = write(tmp_path, "r.json", report)
    assert cli.main(["baseline", "--report", same, "--baseline", same]) == 0
    # fitted constants may move within a factor of two
    moved = write(tmp_path, "m.json", dict(report, fitted_C=5.0))
    assert cli.main(["baseline", "--report", moved, "--baseline", same]) == 0
    drift = write(tmp_path, "d.json", dict(report, a=1.0 + 1e-6, ok=False, v=[1], extra=0))
    out = tmp_path / "diff.json"
    assert cli.main(["baseline", "--report", drift, "--baseline", same, "--out", str(out)]) == 1
    issues = {d["field"]: d["issue"] for d in json.loads(out.read_text())["diff"]}
    assert issues == {"/a": "drift", "/ok": "changed", "/v": "length", "/extra": "unexpected"}


def test_baseline_tolerance_file(tmp_path):
    base = write(tmp_path, "b.json", {"a": 1.0})
    rep = write(tmp_path, "r.json", {"a": 1.001})
    tol = write(tmp_path, "t.json", {"a": {"rel": 0.01}})
    assert cli.main(["baseline", "--report", rep, "--baseline", base]) == 1
    assert cli.main(["baseline", "--report", rep, "--baseline", base, "--tolerances", tol]) == 0


def test_dumps_is_canonical():
    assert cli.dumps({"b": 1, "a": [0.5]}) == cli.dumps({"a": [0.5], "b": 1})
