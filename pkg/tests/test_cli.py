import json
import math
import subprocess
import sys

import pytest

from quadgrav import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def checks(text):
    return {c["name"]: c for c in json.loads(text)["checks"]}


def test_check_flat_examples(capsys):
    code, out, _ = run(capsys, "check-flat", "--metric", "sds", "--params", "m=1,lambda=0.1", "--alpha", "1", "--beta", "1")
    assert code == 0
    code, out, _ = run(capsys, "check-flat", "--metric", "minkowski", "--alpha", "1", "--beta", "1")
    assert code == 0 and checks(out)["max|A|/scale"]["value"] == 0.0
    code, out, _ = run(capsys, "check-flat", "--metric", "reissner_nordstrom", "--alpha", "1", "--beta", "1")
    assert code == 1 and checks(out)["max|A|/scale"]["pass"] is False


def test_energy_examples(capsys):
    code, out, _ = run(capsys, "energy", "--mode", "static", "--metric", "fsmk", "--params", "m=1,c1=1,c2=0.5",
                       "--alpha", "-1", "--beta", "3")
    e = checks(out)["energy"]
    assert code == 0 and e["target"] == pytest.approx(-4 * math.pi)
    assert abs(e["value"] - e["target"]) < 0.01 * abs(e["target"])
    code, out, _ = run(capsys, "energy", "--mode", "lambda-ae", "--slice", "schwarzschild", "--params", "m=1,lambda=0.3",
                       "--alpha", "-1", "--beta", "2")
    e = checks(out)["energy"]
    assert code == 0 and e["value"] == pytest.approx(16 * math.pi, rel=0.01)
    code, out, _ = run(capsys, "energy", "--mode", "lambda-ae", "--slice", "flat", "--params", "lambda=0.3",
                       "--alpha", "-1", "--beta", "2")
    assert code == 0 and checks(out)["energy"]["value"] == 0.0


def test_energy_csv(capsys):
    code, out, _ = run(capsys, "energy", "--mode", "static", "--metric", "fsmk", "--alpha", "-1", "--beta", "3",
                       "--format", "csv")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "radius,value" and len(lines) == 5
    assert float(lines[1].split(",")[1]) == pytest.approx(-15.072702009403013, rel=1e-12)


def test_classify_examples(capsys):
    code, out, _ = run(capsys, "classify", "--alpha", "1", "--beta", "0", "--scan-ratios")
    assert code == 0
    ratios = checks(out)["special ratios"]["value"]
    assert ratios == ["0", "2", "21/8", "3", "28/9", "25/8"]
    code, out, _ = run(capsys, "classify", "--fsmk-domain", "m=1,lambda=0,mu=0")
    assert code == 0 and "inf" in out
    code, out, _ = run(capsys, "classify", "--conformal-map", "m=1,lambda=0,mu=0.2")
    assert code == 0 and checks(out)["lambda tilde"]["value"] == pytest.approx(0.096, abs=1e-12)


def test_conserve_examples(capsys):
    for argv in (("--check", "div-a", "--metric", "custom:polywave"),
                 ("--check", "p-eq-dq", "--background", "sds", "--h", "family-tangent"),
                 ("--check", "div-p", "--background", "minkowski", "--h", "catalog:bump1")):
        code, out, _ = run(capsys, "conserve", *argv)
        assert code == 0, argv


def test_gauge_command(capsys):
    code, out, _ = run(capsys, "gauge", "--points", "5")
    assert code == 0 and all(c["pass"] for c in checks(out).values())


def test_exit_codes_for_bad_input(capsys):
    assert run(capsys, "check-flat", "--metric", "nope")[0] == 2
    assert run(capsys, "energy", "--radii", "1,2")[0] == 2
    assert run(capsys, "energy", "--radii", "100,50,200")[0] == 2
    assert run(capsys, "energy", "--quad", "8by16")[0] == 2
    assert run(capsys, "check-flat", "--metric", "sds", "--params", "m=1,lambda=oops")[0] == 2
    with pytest.raises(SystemExit):
        cli.main(["no-such-command"])


def test_exit_code_for_nonconvergence(capsys):
    code, _, err = run(capsys, "energy", "--mode", "lambda-ae", "--conformal", "0.3,0.2", "--alpha", "-1", "--beta", "2",
                       "--quad", "4x8")
    assert code == 3 and "geometric" in err


def test_report_round_trip_and_determinism(capsys):
    argv = ("check-flat", "--metric", "sds", "--alpha", "1", "--beta", "1", "--seed", "4")
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv)[1]
    assert a == b
    rep = cli.RunReport.from_json(a)
    assert rep.to_json() + "\n" == a
    d = json.loads(a)
    assert set(d) >= {"command", "config", "checks", "timing_ms"} and d["timing_ms"] is None
    assert set(d["checks"][0]) == {"name", "value", "target", "tol", "pass"}
    c = run(capsys, *argv[:-1], "5")[1]
    assert c != a


def test_timing_flag(capsys):
    out = run(capsys, "classify", "--alpha", "1", "--beta", "0", "--timing")[1]
    assert json.loads(out)["timing_ms"] >= 0


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nalpha = -1\nbeta = 3\n\n[check-flat]\nmetric = fsmk\npoints = 7\n")
    out = run(capsys, "check-flat", "--config", str(cfg))[1]
    conf = json.loads(out)["config"]
    assert (conf["alpha"], conf["beta"], conf["metric"], conf["points"]) == (-1.0, 3.0, "fsmk", 7)
    out = run(capsys, "check-flat", "--config", str(cfg), "--points", "3")[1]
    assert json.loads(out)["config"]["points"] == 3
    cfg.write_text("[run]\nbogus = 1\n")
    assert run(capsys, "check-flat", "--config", str(cfg))[0] == 2


def test_report_command_is_thread_invariant(monkeypatch, capsys):
    monkeypatch.setenv("QUADGRAV_THREADS", "1")
    a = run(capsys, "report")
    monkeypatch.setenv("QUADGRAV_THREADS", "4")
    b = run(capsys, "report")
    assert a[0] == 0 and a[1] == b[1]


def test_text_format(capsys):
    out = run(capsys, "classify", "--conformal-map", "m=1,lambda=0,mu=0.2", "--format", "text")[1]
    assert out.startswith("classify") and "PASS lambda tilde" in out


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "quadgrav", "classify", "--alpha", "-1", "--beta", "3"],
                       capture_output=True, text=True, timeout=120)
    assert p.returncode == 0 and json.loads(p.stdout)["command"] == "classify"
