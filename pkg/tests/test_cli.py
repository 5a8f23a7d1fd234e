from __future__ import annotations

import json

import pytest

from arlab.cli import EXIT_CONFIG, EXIT_GENERATION, EXIT_OK, main


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _config(**kw):
    return {"schema_version": 1, "scenario": "general", "episodes": 14, "seeds": [0], **kw}


def test_run_prints_digest(tmp_path, capsys):
    cfg = _write(tmp_path, "c.json", _config())
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--episodes", "6"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["digest"]) == 64
    saved = json.loads((out / "config.json").read_text())
    assert saved["episodes"] == 6


def test_schedule_variant_override(tmp_path, capsys):
    cfg = _write(tmp_path, "c.json", _config(scenario="linear-dim", k0=2))
    assert main(["run", "--config", cfg, "--schedule-variant", "remark", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "config.json").read_text())["schedule_variant"] == "remark"


@pytest.mark.parametrize("doc", [
    {"scenario": "general", "episodes": 4},
    _config(episodes=-1),
    _config(delta=3),
    _config(unknown=1),
])
def test_config_errors_exit_2(tmp_path, capsys, doc):
    assert main(["run", "--config", _write(tmp_path, "c.json", doc)]) == EXIT_CONFIG
    assert "invalid config" in capsys.readouterr().err


def test_missing_and_malformed_files_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert main(["check", "--config", str(p)]) == EXIT_CONFIG


def test_generation_failure_exits_3(tmp_path, capsys):
    doc = _config(scenario="linear-dim", linear={"d": 2, "d_star": 3})
    assert main(["run", "--config", _write(tmp_path, "c.json", doc)]) == EXIT_GENERATION
    assert "generation failed" in capsys.readouterr().err


def test_check_general(tmp_path, capsys):
    assert main(["check", "--config", _write(tmp_path, "c.json", _config(episodes=32))]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["separation_realized"] >= rep["separation_target"]
    assert rep["martingale_violations"] == 0


def test_check_linear(tmp_path, capsys):
    doc = _config(scenario="linear-norm", episodes=4)
    assert main(["check", "--config", _write(tmp_path, "c.json", doc)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["rho_hat"] >= 0 and rep["final_lambda_min"] >= 1.0


def test_eluder_example(capsys):
    assert main(["eluder", "--example", "linear-d2"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["eluder_dimension"] == 2


def test_eluder_table(tmp_path, capsys):
    t = _write(tmp_path, "t.json", [[0.0], [0.5]])
    assert main(["eluder", "--table", t, "--epsilon", "0.5"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["eluder_dimension"] == 0
    assert main(["eluder", "--table", t, "--epsilon", "0.5", "--non-strict"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["eluder_dimension"] == 1


def test_eluder_errors(tmp_path):
    assert main(["eluder"]) == EXIT_CONFIG
    big = _write(tmp_path, "big.json", [[0.0] * 13, [1.0] * 13])
    assert main(["eluder", "--table", big]) == EXIT_CONFIG


def test_compare(tmp_path, capsys):
    a = tmp_path / "a"
    o = tmp_path / "o"
    assert main(["run", "--config", _write(tmp_path, "a.json", _config()), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", _write(tmp_path, "o.json", _config(scenario="baseline-oracle")),
                 "--out", str(o)]) == EXIT_OK
    capsys.readouterr()
    assert main(["compare", str(a / "summary.json"), str(o / "summary.json")]) == EXIT_OK
    assert "median_ratio" in json.loads(capsys.readouterr().out)
    b = tmp_path / "b"
    main(["run", "--config", _write(tmp_path, "b.json", _config(seeds=[1])), "--out", str(b)])
    assert main(["compare", str(a / "summary.json"), str(b / "summary.json")]) == EXIT_CONFIG
    assert main(["compare", str(a / "summary.json"), str(tmp_path / "missing.json")]) == EXIT_CONFIG
