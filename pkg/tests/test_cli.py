import json
import math

import pytest

from plasmacont.cli import OUT_ENV, main
from plasmacont.report import config_hash, dumps, fmt, load_state


def _csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash: ")
    body = [l for l in lines if not l.startswith("#")]
    header = body[0].split(",")
    return header, [dict(zip(header, map(float, l.split(",")))) for l in body[1:]]


def test_branch(tmp_path):
    out = tmp_path / "b"
    assert main(["branch", "--resolution", "32", "--out", str(out)]) == 0
    header, rows = _csv(out / "branch.csv")
    assert header == ["s", "lambda", "alpha", "energy", "sigma1", "mass_residual", "is_fold"]
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) >= {"lambda_one", "lambda_infinity_estimate", "endpoint_energy", "fold_count",
                            "config_hash"}
    assert summary["endpoint_energy"] == pytest.approx(3 / (16 * math.pi), rel=0.02)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["p"] == 2 and "numpy" in manifest["versions"]
    assert manifest["config_hash"] == summary["config_hash"]
    assert "plot_branch.py" in manifest["outputs"]
    compile((out / "plot_branch.py").read_text(), "plot_branch.py", "exec")
    st = load_state(out / "state_final.npz")
    assert st.alpha == pytest.approx(rows[-1]["alpha"])
    assert "wall_time" in (out / "run_log.txt").read_text()


def test_config_missing_p(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"domain": "disk", "resolution": 16}')
    assert main(["branch", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "'p'" in capsys.readouterr().err


def test_config_malformed_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"p": 2,\n "resolution": }\n')
    assert main(["mesh", "--config", str(cfg)]) == 1
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("text,field", [
    ('{"p": 0.5}', "'p'"),
    ('{"p": 2, "resolution": 3.5}', "'resolution'"),
    ('{"p": 2, "colour": 1}', "'colour'"),
    ('{"p": 2, "domain": {"kind": "torus"}}', "'domain'"),
    ('{"p": 2, "continuation": {"ds_init": 5}}', "'continuation'"),
])
def test_config_field_errors(tmp_path, capsys, text, field):
    cfg = tmp_path / "c.json"
    cfg.write_text(text)
    assert main(["mesh", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert field in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["branch", "--resolution", "x"]) == 1
    assert main([]) == 1


def test_solver_failure(tmp_path):
    out = tmp_path / "e"
    assert main(["spectrum", "--lambda", "40", "--resolution", "16", "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "DomainOfDefinitionError" and err["command"] == "spectrum"


def test_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["mesh", "--resolution", "16"]) == 0
    assert (tmp_path / "env" / "mesh.json").exists()
    # the flag wins over the environment
    assert main(["mesh", "--resolution", "16", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "mesh.json").exists()


def test_spectrum_from_state(tmp_path):
    assert main(["branch", "--resolution", "16", "--out", str(tmp_path / "b")]) == 0
    assert main(["spectrum", "--state", str(tmp_path / "b" / "state_final.npz"),
                 "--out", str(tmp_path / "s")]) == 0
    header, rows = _csv(tmp_path / "s" / "spectrum.csv")
    assert len(rows) == 4 and all(r["identity_residual"] < 1e-8 for r in rows)


@pytest.mark.parametrize("cmd,files", [
    ("variational", ["variational.csv", "variational.json"]),
    ("dual", ["dual.csv", "dual.json"]),
    ("continuum", ["continuum.csv"]),
])
def test_other_subcommands(tmp_path, cmd, files):
    out = tmp_path / cmd
    assert main([cmd, "--resolution", "16", "--out", str(out)]) == 0
    for f in files:
        assert (out / f).exists()
        if f.endswith(".csv"):
            _csv(out / f)


def test_probe_flags(tmp_path):
    out = tmp_path / "p"
    assert main(["probe", "--resolution", "16", "--seeds", "2", "--amplitude", "0.03", "--modes", "2,3",
                 "--out", str(out)]) == 0
    doc = json.loads((out / "probe.json").read_text())
    assert [r["seed"] for r in doc["reports"]] == [0, 1]
    assert doc["flagged"] == []
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["modes"] == [2, 3] and man["config"]["amplitude"] == 0.03


def test_verify_subset(tmp_path, capsys):
    assert main(["verify", "--criteria", "2,6", "--out", str(tmp_path / "v")]) == 0
    text = capsys.readouterr().out
    assert "PASS   2" in text and "PASS   6" in text


def test_deterministic(tmp_path):
    for k in range(2):
        assert main(["dual", "--resolution", "16", "--out", str(tmp_path / str(k))]) == 0
    for f in ("dual.csv", "dual.json", "manifest.json"):
        assert (tmp_path / "0" / f).read_bytes() == (tmp_path / "1" / f).read_bytes()


def test_format_helpers():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "1" and fmt(3) == "3" and fmt(float("nan")) == "nan"
    assert dumps({"b": 1, "a": [1.5, None]}) == '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n'
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert json.loads(dumps({"x": float("inf")}))["x"] == "inf"
