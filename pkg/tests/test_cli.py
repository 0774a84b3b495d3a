import json

import numpy as np
import pytest

from qgebm.cli import COMMANDS, main, run
from qgebm.config import config_from_dict
from qgebm.io import read_snapshot

SMALL = {
    "grid": {"N": 8},
    "integrator": {"t_end": 0.2, "stride": 50},
    "experiment": {"cocycle_cases": 6},
}

SUITE = {
    "grid": {"N": 8},
    "experiment": {
        "cocycle_cases": 4, "ic_energies": [1, 100], "ic_per_level": 1, "horizon": 4,
        "pullback_times": [0, 2, 4, 8], "n_windows": 10, "warmup_windows": 3, "n_pairs": 2,
        "n_starts": 3, "t_sync": 40, "t_long": 60, "burn_in": 10, "ensemble_size": 16,
        "t_snapshot": 10, "bounds_members": 8, "bounds_t_end": 5, "sigma2_sweep": [0, 1e-3, 1e-2],
    },
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def only_dir(path):
    (d,) = [x for x in path.iterdir() if x.is_dir()]
    return d


def test_simulate_zero_length_emits_initial_state(tmp_path, cfg_file, capsys):
    out = tmp_path / "runs"
    status = main(["simulate", "--config", str(cfg_file), "--out", str(out), "--override", "integrator.t_end=0"])
    assert status == 0
    assert json.loads(capsys.readouterr().out)["status"] == "pass"
    d = only_dir(out)
    rows = (d / "timeseries.csv").read_text().splitlines()
    assert rows[0] == "time,energy_H,theta_L2sq,q_L2sq,kinetic" and len(rows) == 2
    assert (d / "VERSION").read_text().startswith("qgebm ")
    assert json.loads((d / "config.json").read_text())["integrator"]["t_end"] == 0.0
    g, th, q, T = read_snapshot(d / "final.qgeb")
    assert g.N == 8 and np.all(np.isfinite(th))


def test_cocycle_command_passes(tmp_path, cfg_file):
    status, d = run(config_from_dict(SMALL), "cocycle-test", tmp_path)
    rep = json.loads((d / "report.json").read_text())
    assert status == 0 and rep["passed"]
    assert rep["reports"][0]["constants"]["residuals"] == [0.0] * 6


def test_output_directory_named_by_hash(tmp_path):
    cfg = config_from_dict(SMALL)
    _, d = run(cfg, "simulate", tmp_path)
    assert d.name.startswith(cfg.digest() + "-")
    _, d2 = run(cfg, "simulate", tmp_path)
    assert d2 != d


def test_repeat_runs_byte_identical(tmp_path, cfg_file):
    dirs = []
    for k in range(2):
        main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / str(k)), "--seed", "42"])
        dirs.append(only_dir(tmp_path / str(k)))
    for name in ("timeseries.csv", "final.qgeb", "report.json", "config.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_seed_changes_output(tmp_path, cfg_file):
    for s in ("1", "2"):
        main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / s), "--seed", s])
    a, b = (only_dir(tmp_path / s) / "timeseries.csv" for s in ("1", "2"))
    assert a.read_bytes() != b.read_bytes()


@pytest.mark.parametrize(
    "args",
    [
        ["--override", "physics.viscocity=1"],
        ["--override", "profiles.b.amplitude=0.6"],
        ["--seed", "-1"],
    ],
)
def test_config_errors_exit_2(tmp_path, cfg_file, capsys, args):
    status = main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path)] + args)
    assert status == 2
    assert "error" in json.loads(capsys.readouterr().err)


def test_missing_config_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2


def test_unknown_command_rejected(cfg_file):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate", "--config", str(cfg_file)])
    assert e.value.code == 2


def test_failed_verdict_gives_exit_1_and_summary(tmp_path, cfg_file, capsys):
    # a huge step trips the guard, which is reported as a failed verdict
    status = main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path),
                   "--override", "integrator.dt=0.2", "--override", "integrator.t_end=1",
                   "--override", "physics.Ra=1e4"])
    out = json.loads(capsys.readouterr().out)
    assert status == 1 and out["status"] == "fail"
    assert out["failed"] and "step too large" in out["failed"][0]["note"]


def test_command_list():
    assert COMMANDS == ("simulate", "cocycle-test", "dissipativity", "attractor", "contraction",
                        "fixed-point", "ergodicity", "bounds", "full-suite")


@pytest.mark.slow
@pytest.mark.parametrize("preset", ["laminar", "turbulent"])
def test_full_suite_presets(tmp_path, preset):
    cfg = config_from_dict({**SUITE, "preset": preset})
    status, d = run(cfg, "full-suite", tmp_path)
    rep = json.loads((d / "report.json").read_text())
    names = [r["name"] for r in rep["reports"]]
    assert names == ["cocycle", "dissipativity", "absorption", "attractor", "contraction",
                     "fixed_point", "ergodicity", "bounds"]
    assert status == 0, [v for r in rep["reports"] for v in r["verdicts"] if v["status"] == "fail"]
    contraction = rep["reports"][names.index("contraction")]["verdicts"][0]["status"]
    assert contraction == ("pass" if preset == "laminar" else "not applicable")
