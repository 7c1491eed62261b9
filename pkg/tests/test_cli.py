import json

import pytest

from twoscale.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_simulate_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        code, _ = run(capsys, "simulate", "--n", 1000, "--T", 10, "--seed", 7, "--out", tmp_path / name)
        assert code == EXIT_OK
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["seed"] == 7 and summary["command"] == "simulate"


@pytest.mark.parametrize("method", ["ssa", "langevin", "langevin-naive"])
def test_ensembles_identical_across_threads(tmp_path, capsys, method):
    outs = []
    for th in (1, 8):
        d = tmp_path / f"t{th}"
        code, _ = run(capsys, "simulate", "--n", 200, "--T", 1, "--seed", 3, "--reps", 40,
                      "--threads", th, "--method", method, "--dt", 0.01, "--out", d)
        assert code == EXIT_OK
        outs.append(sorted((p.name, p.read_bytes()) for p in d.glob("*.csv")))
    assert outs[0] == outs[1] and outs[0]


@pytest.mark.parametrize("argv, message", [
    (["simulate", "--n", "0", "--T", "1"], "--n must be a positive integer"),
    (["simulate", "--n", "10", "--T", "-1"], "--T"),
    (["simulate", "--n", "10", "--T", "1", "--params", "{bad"], "JSON"),
    (["eval", "--what", "H", "--z", "1", "--p", "0,0"], "--z"),
    (["simulate", "--n", "10", "--T", "1", "--model", "/no/such/file.json"], "no preset or file"),
    (["verify", "--suite", "nonsense"], "unknown suite"),
])
def test_config_errors_exit_2(capsys, argv, message):
    code, out = run(capsys, *argv)
    assert code == EXIT_CONFIG
    assert message in out.err


def test_argparse_errors_exit_2(capsys):
    code, _ = run(capsys, "eval", "--what", "nonsense", "--z", "1,1")
    assert code == EXIT_CONFIG


def test_eval_hamiltonians(capsys):
    code, out = run(capsys, "eval", "--what", "H", "--z", "1,1", "--p", "0,0")
    assert code == EXIT_OK
    res = json.loads(out.out)["result"]
    assert abs(res["value"]) < 1e-12 and res["converged"]
    _, out = run(capsys, "eval", "--what", "closed", "--z", "1,1", "--p", "0.3,-0.2")
    closed = json.loads(out.out)["result"]["value"]
    _, out = run(capsys, "eval", "--what", "H", "--z", "1,1", "--p", "0.3,-0.2")
    assert json.loads(out.out)["result"]["value"] == pytest.approx(closed, abs=1e-9)
    _, out = run(capsys, "eval", "--what", "L", "--z", "stable1", "--beta", "drift")
    assert abs(json.loads(out.out)["result"]["value"]) < 1e-10


def test_fixed_points_command(tmp_path, capsys):
    code, _ = run(capsys, "fixed-points", "--out", tmp_path)
    assert code == EXIT_OK
    pts = json.loads((tmp_path / "fixed_points.json").read_text())["result"]["points"]
    assert [p["name"] for p in pts] == ["stable1", "saddle1", "stable2"]


def test_gmam_command(tmp_path, capsys):
    code, _ = run(capsys, "gmam", "--from", "stable1", "--to", "saddle", "--nodes", 40, "--out", tmp_path)
    assert code == EXIT_OK
    action = json.loads((tmp_path / "action.json").read_text())["result"]
    assert action["total"] > 0 and action["converged"]
    header = (tmp_path / "path.csv").read_text().splitlines()[0]
    assert header == "t,z1,z2,p1,p2,density"


def test_verify_exit_codes(tmp_path, capsys):
    code, _ = run(capsys, "verify", "--suite", "duality,zero", "--probes", 5, "--out", tmp_path / "ok")
    assert code == EXIT_OK
    verdict = json.loads((tmp_path / "ok" / "verdict.json").read_text())
    assert verdict["result"]["passed"]
    # a tiny ladder cannot observe the rare window: an honest failure
    code, _ = run(capsys, "verify", "--suite", "occupation", "--reps", 500, "--out", tmp_path / "bad")
    assert code == EXIT_VERIFY
    assert (tmp_path / "bad" / "occupation.csv").exists()
