from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import pytest
import yaml

from quasiattr.cli import (EXIT_OK, EXIT_STAGE, EXIT_VALIDATION, Scenario, ScenarioError, load_scenario, main,
                           render_data, validate, verify_manifest)

ROOT = Path(__file__).resolve().parents[1]
SMALL = {
    "name": "small_solenoid",
    "model": {"name": "canonical_solenoid"},
    "pipeline": ["graph", "morse", "evidence", "refine", "cones", "domination", "periodic"],
    "depths": [3, 4],
    "seed": 7,
    "stages": {"graph": {"depth": 4}, "cones": {"samples": 200}, "domination": {"N": 4, "samples": 200},
               "periodic": {"seeds": [[0.0, 0.5, 0.0]]}},
}


def write(tmp_path, data, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.fixture()
def cache(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv("QUASIATTR_CACHE", str(d))
    return d


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    sc = write(base, SMALL)
    cache = base / "cache"
    code = main(["run", "--scenario", sc, "--output", str(base / "out"), "--cache-dir", str(cache)])
    return code, base / "out", sc, cache


def test_shipped_scenarios_validate():
    for name in ("solenoid_uniqueness", "plykin_tangency", "da_sink"):
        validate(load_scenario(ROOT / "scenarios" / f"{name}.yaml"))


def test_bad_separation_exit_code(capsys):
    assert main(["validate", "--scenario", str(ROOT / "scenarios" / "bad_separation.yaml")]) == EXIT_VALIDATION
    assert "2*delta < r_min_boundary" in capsys.readouterr().err


@pytest.mark.parametrize("patch,msg", [
    ({"pipeline": ["morse"]}, "requires graph"),
    ({"pipeline": ["graph", "warp"]}, "unknown stage"),
    ({"model": {"name": "klein_bottle"}}, "unknown model"),
    ({"seed": -1}, "seed"),
    ({"stages": {"graph": {"depth": 3, "colour": 1}}}, "unknown options"),
    ({"enclosure": {"padding_scale": 0.5}}, "enclosure"),
    ({"pipeline": ["tangency"]}, "realized"),
    ({"depths": [5, 4]}, "non-decreasing"),
])
def test_validation_errors(tmp_path, capsys, patch, msg):
    data = {**SMALL, **patch}
    assert main(["validate", "--scenario", write(tmp_path, data)]) == EXIT_VALIDATION
    assert msg in capsys.readouterr().err


def test_scenario_structure_errors(tmp_path):
    with pytest.raises(ScenarioError, match="unknown scenario keys"):
        Scenario.from_dict({**SMALL, "colour": "red"})
    with pytest.raises(ScenarioError, match="needs 'pipeline'"):
        Scenario.from_dict({"model": SMALL["model"]})
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ScenarioError, match="YAML"):
        load_scenario(bad)


def test_run_artifacts(small_run):
    code, out, _, _ = small_run
    assert code == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and [s["status"] for s in man["stages"]] == ["ok"] * len(SMALL["pipeline"])
    assert man["scenario"]["seed"] == 7 and man["engine"]["name"] == "quasiattr"
    assert verify_manifest(out) == []
    rows = list(csv.DictReader(io.StringIO((out / "refine.csv").read_text())))
    assert [r["n_attracting"] for r in rows] == ["1", "1"]
    assert "seconds" not in rows[0]
    ev = json.loads((out / "evidence.json").read_text())
    assert len(ev["attracting"]) == 1 and ev["attracting"][0]["isolated"]
    per = json.loads((out / "periodic.json").read_text())
    assert per["orbits"][0]["kind"] == "saddle"


def test_manifest_detects_tampering(small_run, tmp_path):
    _, out, _, _ = small_run
    copy = tmp_path / "copy"
    copy.mkdir()
    for p in out.iterdir():
        (copy / p.name).write_bytes(p.read_bytes())
    (copy / "morse.json").write_text("{}")
    assert verify_manifest(copy) == ["morse.json"]


def test_rerun_hits_cache(small_run, tmp_path):
    _, out, sc, cache = small_run
    out2 = tmp_path / "again"
    assert main(["run", "--scenario", sc, "--output", str(out2), "--cache-dir", str(cache)]) == EXIT_OK
    m1 = json.loads((out / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m1["stages"][0]["cache"] == "miss" and m2["stages"][0]["cache"] == "hit"
    for a, b in zip(m1["stages"], m2["stages"]):
        assert a["artifacts"] == b["artifacts"]


def test_worker_count_does_not_change_outputs(tmp_path, cache):
    sc = write(tmp_path, SMALL)
    assert main(["run", "--scenario", sc, "--output", str(tmp_path / "w1"), "--workers", "1"]) == EXIT_OK
    assert main(["run", "--scenario", sc, "--output", str(tmp_path / "w4"), "--workers", "4"]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "w1").iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in (tmp_path / "w4").iterdir() if p.name != "manifest.json")
    for n in names:
        assert (tmp_path / "w1" / n).read_bytes() == (tmp_path / "w4" / n).read_bytes()


def test_seed_flag_overrides(tmp_path, cache):
    data = {**SMALL, "pipeline": ["graph", "morse"]}
    sc = write(tmp_path, data)
    assert main(["run", "--scenario", sc, "--output", str(tmp_path / "o"), "--seed", "123"]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["scenario"]["seed"] == 123


def test_stage_failure_keeps_partial_artifacts(tmp_path, cache):
    data = {**SMALL, "pipeline": ["graph", "morse", "periodic"],
            "stages": {"graph": {"depth": 3}, "periodic": {"seeds": [[0.0, 5.0, 0.0]]}}}
    out = tmp_path / "o"
    assert main(["run", "--scenario", write(tmp_path, data), "--output", str(out)]) == EXIT_STAGE
    assert (out / "periodic.FAILED").exists() and (out / "morse.json").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == EXIT_STAGE and man["stages"][-1]["status"] == "failed"


def test_render_kinds(small_run, tmp_path, capsys):
    _, out, _, _ = small_run
    text = render_data(out / "refine.json", "boxes2d_slice")
    lines = text.splitlines()
    assert lines[0] == "x0_lo,x0_hi,x1_lo,x1_hi" and len(lines) > 1
    assert render_data(out / "refine.csv", "report") == (out / "refine.csv").read_text()
    rep = list(csv.DictReader(io.StringIO(render_data(out / "refine.json", "report"))))
    assert [r["n_attracting"] for r in rep] == ["1", "1"]
    target = tmp_path / "slice.csv"
    assert main(["render", str(out / "morse.json"), "--kind", "boxes2d_slice", "--output", str(target)]) == EXIT_OK
    assert target.read_text().startswith("x0_lo")
    assert main(["render", str(tmp_path / "missing.json"), "--kind", "report"]) == EXIT_VALIDATION
    assert main(["render", str(out / "morse.json"), "--kind", "curve"]) == EXIT_VALIDATION


def test_cache_list_and_clear(small_run, tmp_path, capsys):
    _, _, sc, cache = small_run
    scratch = tmp_path / "c"
    scratch.mkdir()
    for f in cache.glob("*.qgraph"):
        (scratch / f.name).write_bytes(f.read_bytes())
    assert main(["cache", "list", "--cache-dir", str(scratch)]) == EXIT_OK
    listed = capsys.readouterr().out.strip().splitlines()
    assert len(listed) == len(list(scratch.glob("*.qgraph"))) >= 1
    assert main(["cache", "clear", "--cache-dir", str(scratch)]) == EXIT_OK
    assert not list(scratch.glob("*.qgraph"))


def test_tangency_run_and_curve_render(tmp_path, cache):
    out = tmp_path / "ply"
    sc = str(ROOT / "scenarios" / "plykin_tangency.yaml")
    assert main(["run", "--scenario", sc, "--output", str(out)]) == EXIT_OK
    tan = json.loads((out / "tangency.json").read_text())
    assert any(t["kind"] == "quadratic" for t in tan["tangencies"]["tangencies"])
    results = {d["dims"][0]: d["result"] for d in tan["domination"]}
    assert results == {1: "counterexample", 2: "certificate"}
    rows = list(csv.reader(io.StringIO(render_data(out / "tangency.json", "curve"))))
    assert rows[0][:3] == ["row", "curve", "param"]
    assert any(r[0] == "marker" for r in rows) and any(r[0] == "vertex" for r in rows)
