import csv
import json
import os

import pytest
import yaml
from hypothesis import given, strategies as st

from pamlab import config as cfgmod
from pamlab.cli import dispatch, fmt
from pamlab.config import ConfigError, parse_config, render_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SMALL = os.path.join(ROOT, "configs", "small.yaml")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_and_derived_alpha():
    c = parse_config("model: {kappa: 0.4}")
    assert c["model"]["alpha"] == pytest.approx(0.2)
    assert c.lattice.n_per_side == 32 and c["observables"]["times"] == [0.5]
    parse_config("model: {kappa: 0.4, alpha: 0.2}")
    with pytest.raises(ConfigError):
        parse_config("model: {kappa: 0.4, alpha: 0.3}")


@pytest.mark.parametrize("text", [
    "model: {kappa: 0.4, beta: 1}",
    "modle: {kappa: 0.4}",
    "model: {kappa: 0.6}",
    "model: {}",
    "model: {kappa: 0.4}\ndiscretization: {n_per_side: 24}",
    "model: {kappa: 0.4}\ninit: {kind: atom_cloud, delta: 0.1}",
    "model: {kappa: 0.4}\nobservables: {times: [2.0]}",
    "model: {kappa: 0.4}\nobservables: {tests: [{type: gaussian, sigma: 1}]}",
    "model: {kappa: 0.4}\nexperiment: {name: death, rho: 1}",
    "model: {kappa: 0.4}\nexperiment: {name: nope}",
    "model: {kappa: 0.4}\nrun: {seed: -1}",
    "model: [1, 2]",
    "model: {kappa: '0.4'}",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_kappa_message_names_constraint():
    with pytest.raises(ConfigError) as exc:
        parse_config("model: {kappa: 0.6}")
    assert "(d-2)/2" in str(exc.value)


def test_overrides_and_measure():
    with open(SMALL) as fh:
        c = parse_config(fh.read(), {"run.seed": 11, "model.kappa": 0.2})
    assert c.seed == 11 and c.model.kappa == 0.2
    assert c.measure.kind == "atom_cloud" and c.measure.total_mass == 1.0
    obs = c.observables
    assert obs.times == (0.25, 0.5) and len(obs.balls) == 1 and len(obs.tests) == 1


@given(st.floats(0.01, 0.49), st.integers(0, 2**63), st.sampled_from([8, 16, 32]))
def test_render_roundtrip(kappa, seed, n):
    c = parse_config(f"model: {{kappa: {kappa!r}}}\nrun: {{seed: {seed}}}\ndiscretization: {{n_per_side: {n}}}")
    again = parse_config(render_config(c))
    assert again == c and again.digest() == c.digest()


def test_test_function_builder():
    f = cfgmod.test_function({"type": "smooth_ball", "center": [0, 0, 0], "radius": 1.0, "softness": 0.5})
    assert f(([0, 0, 0],)) == pytest.approx(1.0)


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001" and fmt(3) == "3" and fmt(True) == "1"


# CLI -----------------------------------------------------------------------------


def test_cli_exact(tmp_path, capsys):
    assert dispatch(["exact", "alpha", "--eta", "0.08", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "0.2"
    rows = read_csv(tmp_path / "exact.csv")
    assert float(rows[0]["value"]) == pytest.approx(0.2)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man["outputs"]) == {"config.yaml", "exact.csv"}


def test_cli_errors(tmp_path, capsys):
    assert dispatch(["exact", "alpha", "--eta", "0.5", "--out", str(tmp_path)]) == 2
    assert dispatch(["simulate", "--config", SMALL, "--set", "model.gamma=1", "--out", str(tmp_path)]) == 2
    assert dispatch(["simulate", "--config", SMALL, "--kappa", "0.7", "--out", str(tmp_path)]) == 2
    assert dispatch(["simulate", "--config", SMALL, "--set", "bad", "--out", str(tmp_path)]) == 2
    assert dispatch(["nonsense"]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_simulate_deterministic_across_workers(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["simulate", "--config", SMALL, "--n-ensemble", "4", "--out", str(a)]) == 0
    assert dispatch(["simulate", "--config", SMALL, "--n-ensemble", "4", "--workers", "2", "--out", str(b)]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config_hash"] == mb["config_hash"]
    rows = read_csv(a / "simulate.csv")
    assert len(rows) == 8 and {"member", "t", "total_mass", "ball_0", "test_0", "qv", "bracket"} <= set(rows[0])
    echoed = yaml.safe_load((a / "config.yaml").read_text())
    assert echoed["run"]["n_ensemble"] == 4


def test_cli_noise_check_snapshot(tmp_path):
    from pamlab.noise import read_snapshot

    code = dispatch(["noise-check", "--config", SMALL, "--n-increments", "200", "--snapshot", "--out", str(tmp_path)])
    assert code in (0, 1)
    rows = read_csv(tmp_path / "noise_covariance.csv")
    assert len(rows) == 6
    field, dt, eps = read_snapshot(tmp_path / "noise_snapshot.bin")
    assert eps == 0.6 and field.lattice.n_per_side == 16


def test_cli_chaos_verify(tmp_path):
    assert dispatch(["chaos-verify", "--config", SMALL, "--n-ensemble", "4", "--set", "chaos.order=2",
                     "--out", str(tmp_path)]) == 0
    res = read_csv(tmp_path / "chaos_residual.csv")
    assert [int(r["N"]) for r in res] == [0, 1, 2]
    assert float(res[2]["mean_sq_residual"]) < float(res[0]["mean_sq_residual"])
    assert len(read_csv(tmp_path / "chaos_variance.csv")) == 3


def test_cli_moments_and_paths(tmp_path):
    assert dispatch(["moments", "first", "--config", SMALL, "--out", str(tmp_path / "m")]) == 0
    assert dispatch(["moments", "alpha-norm", "--config", SMALL, "--out", str(tmp_path / "n")]) == 0
    assert float(read_csv(tmp_path / "n" / "moments.csv")[0]["value"]) == float("inf")
    assert dispatch(["bridge-moment", "--eta", "0.1", "--config", SMALL, "--set", "paths.n_paths=20000",
                     "--set", "paths.m=64", "--set", "paths.bin_halfwidth=0.1", "--out", str(tmp_path / "b")]) == 0
    assert dispatch(["pair-moment", "--config", SMALL, "--starts", "0.5,0,0;-0.5,0,0", "--ends", "0,0.5,0;0,-0.5,0",
                     "--set", "paths.n_paths=2000", "--set", "paths.m=32", "--out", str(tmp_path / "p")]) == 0


def test_cli_experiment_total_mass(tmp_path):
    code = dispatch(["experiment", "total-mass", "--config", SMALL, "--n-ensemble", "16", "--out", str(tmp_path)])
    assert code in (0, 1)
    rep = yaml.safe_load((tmp_path / "report.yaml").read_text())
    assert rep["experiment"] == "total-mass" and rep["assertions"]
