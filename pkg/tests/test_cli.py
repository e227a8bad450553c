import json
import math
import subprocess
import sys

import jsonschema
import pytest
import yaml

from ginchaos import cli


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


ONE = {"kind": "onepoint", "master_seed": 8675309, "ensemble": {"beta": 2, "law": "gaussian", "n": 32},
       "params": {"point": [0, 0], "gamma": 2, "samples": 200}}


def test_list_kinds(capsys):
    assert cli.main(["list-kinds"]) == 0
    kinds = capsys.readouterr().out.split()
    assert "kpoint" in kinds and "dbm-local-factor" in kinds and "gmc-sample" in kinds


def test_validate_config(tmp_path, capsys):
    good = _write(tmp_path, "good.yaml", ONE)
    assert cli.main(["validate-config", str(good)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["valid"] and len(out["config_digest"]) == 64
    bad = _write(tmp_path, "bad.yaml", {**ONE, "params": {"gamma": -1}})
    assert cli.main(["validate-config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["validate-config", str(tmp_path / "missing.yaml")]) == 2


def test_defaults_and_digest():
    cfg = cli.resolve_config({"kind": "mde-report", "ensemble": {"n": 64}})
    assert cfg["ensemble"]["law"] == "gaussian"
    a = cli.config_digest(cfg)
    assert a == cli.config_digest({**cfg, "workers": 7, "output": "/elsewhere"})
    assert a != cli.config_digest({**cfg, "master_seed": cfg["master_seed"] + 1})
    bern = cli.resolve_config({"kind": "onepoint", "ensemble": {"beta": 1, "law": "symmetric-bernoulli", "n": 8}})
    assert bern["ensemble"]["kappa4"] == -2.0


def test_zero_exponents_run(tmp_path):
    cfg = {"kind": "kpoint", "ensemble": {"n": 16},
           "params": {"points": [[0.1, 0.2], [0.4, -0.1]], "exponents": [0, 0], "samples": 10}}
    rec = cli.run(cfg, tmp_path / "out")
    assert rec["payload"]["log_mean"] == 0 and rec["payload"]["std_error"] == 0
    assert rec["payload"]["estimate"] == 1.0


def test_record_roundtrip_and_schema(tmp_path):
    out = tmp_path / "one"
    rec = cli.run(ONE, out)
    path = out / cli.RECORD_NAME
    text = path.read_text()
    jsonschema.validate(json.loads(text), cli.RECORD_SCHEMA)
    assert cli.dump_record(cli.load_record(path)) == text
    lines = [json.loads(s) for s in (out / cli.PROGRESS_NAME).read_text().splitlines()]
    assert lines[0]["event"] == "start" and lines[-1]["event"] == "done"
    assert all(l["config_digest"] == rec["config_digest"] for l in lines)


def test_workers_do_not_change_payload(tmp_path):
    a = cli.run(ONE, tmp_path / "a", workers=1)
    b = cli.run(ONE, tmp_path / "b", workers=2)
    assert a["payload"] == b["payload"] and a["config_digest"] == b["config_digest"]
    assert b["overrides"] == {"workers": 2}


def test_resume(tmp_path):
    out = tmp_path / "r"
    first = cli.run(ONE, out)
    again = cli.run(ONE, out, resume=True)
    assert again == json.loads((out / cli.RECORD_NAME).read_text())
    assert again["timestamps"] == first["timestamps"]
    with pytest.raises(cli.ResumeMismatch):
        cli.run(ONE, out, seed=1, resume=True)


def test_compare_against_exact(tmp_path):
    rec = cli.run({**ONE, "params": {**ONE["params"], "samples": 2000}}, tmp_path / "c")
    row = cli.compare(rec)[0]
    assert row["reference"] == "exact"
    n = 32
    assert row["ln_prediction"] == pytest.approx(math.log(math.factorial(n) / n**n) + n, rel=1e-12)
    assert abs(row["z"]) <= 3
    mde = cli.run({"kind": "mde-report", "ensemble": {"n": 64}, "params": {"z": [0.6, 0.0]}}, tmp_path / "m")
    with pytest.raises(cli.KindMismatch):
        cli.compare(mde)


def test_mde_report_and_plots(tmp_path):
    rec = cli.run({"kind": "mde-report", "ensemble": {"n": 64}, "params": {"z": [0.6, 0.0], "quantiles": 5}},
                  tmp_path / "m")
    assert rec["payload"]["rho0"] == pytest.approx(0.8 / math.pi, rel=1e-10)
    files = cli.plot(rec, tmp_path / "m", "svg")
    assert files and all(f.exists() and f.suffix == ".svg" for f in files)


def test_gmc_zero_gamma(tmp_path):
    rec = cli.run({"kind": "gmc-sample", "master_seed": 3, "ensemble": {"n": 64},
                   "params": {"epsilon": 0.2, "draws": 20, "gamma": 0}}, tmp_path / "g")
    area = sum(rec["payload"]["first_masses"])
    assert all(t == pytest.approx(area) for t in rec["payload"]["totals"])


def test_console_script(tmp_path):
    cfg = _write(tmp_path, "one.yaml", ONE)
    out = tmp_path / "cs"
    proc = subprocess.run([sys.executable, "-m", "ginchaos.cli", "run", "--config", str(cfg),
                           "--output", str(out), "--seed", "11"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["config_digest"] == cli.load_record(out / cli.RECORD_NAME)["config_digest"]
    assert cli.load_record(out / cli.RECORD_NAME)["overrides"] == {"seed": 11}


def test_dbm_run_with_path_dump(tmp_path):
    from ginchaos.dbm import DbmPath

    cfg = {"kind": "dbm-local-factor", "master_seed": 5, "ensemble": {"n": 32},
           "params": {"paths": 100, "steps": 20, "dump_paths": 2}}
    rec = cli.run(cfg, tmp_path / "d")
    assert rec["payload"]["ratio"] > 0
    files = sorted((tmp_path / "d" / "paths").glob("path_*.npz"))
    assert [f.name for f in files] == ["path_00000.npz", "path_00001.npz"]
    p = DbmPath.load(files[0])
    assert p.mu.shape == (21, 32) and p.noise.shape == (20, rec["payload"]["dbm"]["ell1"])


def test_kpoint_zero_record_and_rerun(tmp_path):
    cfg = {"kind": "kpoint", "master_seed": 2, "ensemble": {"n": 16},
           "params": {"points": [[0.1, 0.2], [0.4, -0.1]], "exponents": [0, 0], "samples": 10}}
    rec = cli.run(cfg, tmp_path / "a")
    assert rec["payload"]["estimate"] == 1.0 and rec["payload"]["prediction"] == 1.0
    again = cli.run(cfg, tmp_path / "b")
    assert json.dumps(again["payload"], sort_keys=True) == json.dumps(rec["payload"], sort_keys=True)
    assert not cli.compare(rec)[0]["flagged"]


def test_compare_self_consistent_record():
    rec = {"config": {"kind": "kpoint"}, "flags": {},
           "payload": {"n": 64, "points": [[0.1, 0]], "exponents": [1], "log_mean": 0.7, "std_error": 0.05,
                       "ess": 900.0, "log_prediction": 0.7}}
    assert [r["flagged"] for r in cli.compare(rec)] == [False]
    rec["payload"]["log_mean"] = 0.9
    assert cli.compare(rec)[0]["flagged"]
    assert cli.trend([rec])[0]["ln_ratio"] == pytest.approx(0.2)


def test_workers_one_four_sixteen(tmp_path):
    cfg = {"kind": "onepoint", "master_seed": 77, "ensemble": {"n": 12},
           "params": {"point": [0.2, 0.1], "gamma": 1.5, "samples": 96}}
    payloads = [json.dumps(cli.run(cfg, tmp_path / str(w), workers=w)["payload"], sort_keys=True)
                for w in (1, 4, 16)]
    assert payloads[0] == payloads[1] == payloads[2]


def test_plot_annotations(tmp_path):
    tp = cli.run({"kind": "thick-points", "master_seed": 1, "ensemble": {"n": 32},
                  "params": {"sizes": [16, 32, 64], "resolution": 16, "draws": 4, "nu": 0.2}}, tmp_path / "t")
    (svg,) = cli.plot(tp, tmp_path / "t", "svg")
    assert f"slope {tp['payload']['slope']:.3f}" in svg.read_text()
    gm = cli.run({"kind": "gmc-sample", "master_seed": 3, "ensemble": {"n": 64},
                  "params": {"epsilon": 0.2, "draws": 5}}, tmp_path / "g")
    (svg,) = cli.plot(gm, tmp_path / "g", "svg")
    assert f"total mass {gm['payload']['first_total']:.6g}" in svg.read_text()
    with pytest.raises(cli.UnsupportedKind):
        cli.plot({"config": {"kind": "clt"}, "payload": {}}, tmp_path, "png")
