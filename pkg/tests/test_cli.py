import json

import pytest
from click.testing import CliRunner

from slskit import plant as P
from slskit.cli import cli
from slskit.experiments import load_record

FIX = "fixture:chain3_swing"


@pytest.fixture
def runner():
    return CliRunner()


def run(runner, *args, env=None):
    return runner.invoke(cli, list(args), env=env, catch_exceptions=False)


def test_synth_sf_writes_valid_record(runner, tmp_path):
    out = tmp_path / "r.json"
    res = run(runner, "synth-sf", "--plant", FIX, "--d", "2", "--T", "8", "--out", str(out))
    assert res.exit_code == 0, res.output
    rec, plant, resp = load_record(out)
    assert rec["kind"] == "sf" and rec["status"] == "feasible" and resp.T == 8
    assert plant.n_x == 6


def test_outputs_are_byte_identical(runner, tmp_path):
    paths = [tmp_path / f"{i}.json" for i in range(2)]
    for p in paths:
        run(runner, "synth-sf", "--plant", "swing-mesh:2", "--seed", "5", "--d", "2", "--T", "6",
            "--out", str(p))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_infeasible_exit_code(runner, tmp_path):
    plant = tmp_path / "p.json"
    assert run(runner, "gen-plant", "--kind", "chain", "--size", "4", "--actuated", "0",
               "--out", str(plant)).exit_code == 0
    res = run(runner, "feas", "--plant", str(plant), "--d", "1", "--T", "4")
    assert res.exit_code == 2
    assert "column 0" in res.stderr
    assert json.loads(res.stdout)["localizable"] is False
    res = run(runner, "synth-sf", "--plant", str(plant), "--d", "1", "--T", "4")
    assert res.exit_code == 2


def test_usage_errors_exit_one(runner, tmp_path):
    assert run(runner, "feas", "--plant", "nonsense", "--d", "1", "--T", "4").exit_code == 1
    assert run(runner, "feas", "--plant", "swing-mesh:3", "--d", "1", "--T", "4").exit_code == 1
    assert run(runner, "feas", "--plant", FIX, "--d", "1,2", "--T", "4").exit_code == 1
    assert run(runner, "synth-sf", "--plant", FIX, "--T", "4").exit_code == 1
    assert run(runner, "synth-sf", "--plant", FIX, "--d", "1", "--T", "4", "--h", "1"
               ).exit_code == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(runner, "feas", "--plant", str(bad), "--d", "1", "--T", "4").exit_code == 1


def test_config_precedence(runner, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('plant = "fixture:chain3_swing"\nd = 2\nT = 6\n')
    out = tmp_path / "o.json"

    def d_used(*extra, env=None):
        res = run(runner, "--config", str(cfg), "synth-sf", "--out", str(out), *extra, env=env)
        assert res.exit_code == 0, res.output
        return json.loads(out.read_text())["d"]

    assert d_used() == 2
    assert d_used(env={"SLSKIT_D": "3"}) == 3
    assert d_used("--d", "4", env={"SLSKIT_D": "3"}) == 4


def test_config_per_command_table_and_unknown_key(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"plant": FIX, "T": 6, "synth-sf": {"d": 2}}))
    out = tmp_path / "o.json"
    res = run(runner, "--config", str(cfg), "synth-sf", "--out", str(out))
    assert res.exit_code == 0 and json.loads(out.read_text())["d"] == 2
    cfg.write_text(json.dumps({"colour": "red"}))
    res = run(runner, "--config", str(cfg), "feas")
    assert res.exit_code == 1 and "unknown config key 'colour'" in res.stderr


def test_synth_of_and_trace(runner, tmp_path):
    out, trace = tmp_path / "of.json", tmp_path / "trace.csv"
    res = run(runner, "synth-of", "--plant", FIX, "--d", "2", "--T", "6", "--out", str(out),
              "--trace", str(trace))
    assert res.exit_code == 0, res.output
    rec, _, _ = load_record(out)
    assert rec["status"] == "converged" and rec["in_pattern"]
    assert trace.read_text().startswith("iter,primal,dual,objective")
    res = run(runner, "synth-of", "--plant", FIX, "--d", "2", "--T", "6", "--max-iter", "3")
    assert res.exit_code == 1 and "maxed" in res.stderr


def test_simulate_from_record(runner, tmp_path):
    rec = tmp_path / "r.json"
    run(runner, "synth-sf", "--plant", FIX, "--d", "2", "--T", "8", "--out", str(rec))
    res = run(runner, "simulate", "--response", str(rec), "--horizon", "12", "--impulse", "1")
    assert res.exit_code == 0
    lines = res.stdout.splitlines()
    assert lines[0].startswith("k,x0") and len(lines) == 13
    # The impulse is fully rejected after T steps.
    assert all(float(v) == pytest.approx(0.0, abs=1e-10) for v in lines[-1].split(",")[1:7])
    assert run(runner, "simulate", "--response", str(rec), "--awgn").exit_code == 1
    a = run(runner, "simulate", "--response", str(rec), "--awgn", "--seed", "2").stdout
    assert a == run(runner, "simulate", "--response", str(rec), "--awgn", "--seed", "2").stdout


def test_simulate_rejects_tampered_record(runner, tmp_path):
    rec = tmp_path / "r.json"
    run(runner, "synth-sf", "--plant", FIX, "--d", "2", "--T", "8", "--out", str(rec))
    obj = json.loads(rec.read_text())
    obj["response"]["M"]["coeffs"][2][1] += 0.5
    rec.write_text(json.dumps(obj))
    res = run(runner, "simulate", "--response", str(rec))
    assert res.exit_code == 1 and "achievability" in res.stderr


def test_sweep_and_plot(runner, tmp_path):
    csv_path = tmp_path / "s.csv"
    res = run(runner, "sweep-T", "--plant", FIX, "--d", "2", "--T", "3..5", "--format", "csv",
              "--out", str(csv_path))
    assert res.exit_code == 0
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "d,T,localized,centralized,ratio" and len(rows) == 4
    assert all(float(r.split(",")[-1]) >= 1.0 - 1e-9 for r in rows[1:])
    res = run(runner, "emit-plot", str(csv_path), "--kind", "sweep-T", "--out",
              str(tmp_path / "plots"))
    assert res.exit_code == 0
    dat = (tmp_path / "plots" / "sweep_T.dat").read_text().splitlines()
    assert dat[0] == "# T ratio" and len(dat) == 4


def test_compare_centralized(runner):
    res = run(runner, "compare-centralized", "--plant", FIX, "--d", "2", "--T", "10")
    body = json.loads(res.stdout)
    assert res.exit_code == 0
    assert body["centralized"] <= body["distributed"] <= body["localized"] * (1 + 1e-12)


def test_tradeoff_cli(runner):
    res = run(runner, "tradeoff-l1", "--plant", FIX, "--d", "2", "--T", "6", "--h", "inf",
              "--points", "3", "--format", "csv")
    assert res.exit_code == 0, res.output
    rows = [r.split(",") for r in res.stdout.splitlines()[1:]]
    assert rows[0][0] == "inf" and len(rows) == 3
    h2 = [float(r[1]) for r in rows]
    assert h2 == sorted(h2)


def test_gen_plant_needs_seed(runner, tmp_path):
    assert run(runner, "gen-plant", "--kind", "swing-mesh").exit_code == 1
    out = tmp_path / "m.json"
    assert run(runner, "gen-plant", "--size", "3", "--seed", "0", "--out", str(out)).exit_code == 0
    assert P.load(out).n_x == 18


def test_large_plant_guard(runner):
    res = run(runner, "feas", "--plant", "chain:2001", "--d", "1", "--T", "2")
    assert res.exit_code == 1 and "--allow-large" in res.stderr
