"""Command line entry point: ``qgebm <command> --config <file> [...]``.

Exit status is 0 iff every verdict of the command passes, 1 if a verdict
fails and 2 on usage or configuration errors.  Each run writes into
``<out>/<config hash>-<timestamp>/`` the resolved config, the code version,
a JSON report and any time series or snapshots.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .config import ConfigError, RunConfig, load_config
from .grid import set_fft_workers
from .io import write_snapshot, write_timeseries
from .model import State, StepTooLarge, energy_H, random_state
from .noise import default_spin_up

COMMANDS = (
    "simulate",
    "cocycle-test",
    "dissipativity",
    "attractor",
    "contraction",
    "fixed-point",
    "ergodicity",
    "bounds",
    "full-suite",
)


class Run:
    """Output directory plus the single-writer collector for one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, command: str):
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        self.dir = Path(out) / f"{cfg.digest()}-{stamp}"
        n = 1
        while self.dir.exists():
            self.dir = Path(out) / f"{cfg.digest()}-{stamp}-{n}"
            n += 1
        self.dir.mkdir(parents=True)
        (self.dir / "config.json").write_text(cfg.to_json() + "\n")
        (self.dir / "VERSION").write_text(f"qgebm {__version__}\n")
        self.cfg = cfg
        self.command = command
        self.reports: list[dg.DiagnosticsReport] = []

    def add(self, rep: dg.DiagnosticsReport) -> dg.DiagnosticsReport:
        self.reports.append(rep)
        return rep

    def finish(self) -> int:
        ok = all(r.passed for r in self.reports)
        summary = {
            "command": self.command,
            "passed": ok,
            "reports": [r.to_dict() for r in self.reports],
        }
        (self.dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return 0 if ok else 1


# ---------------------------------------------------------------------------
# commands


def _initial_state(cfg: RunConfig, grid, seed: int, energy: float = 1e-2) -> State:
    return random_state(grid, np.random.default_rng([seed, 1]), energy)


def cmd_simulate(run: Run, seed: int):
    cfg = run.cfg
    m = cfg.model()
    it = cfg.integrator
    path = cfg.path(seed, it.t_start, max(it.t_end, it.t_start + it.dt))
    x = replace(_initial_state(cfg, m.grid, seed), time=it.t_start)
    obs = dg._obs_dict(cfg.experiment.observables)
    tr = m.evolve(x, path, it.t_start, it.t_end, "direct", stride=it.stride, observables=obs)
    write_timeseries(run.dir / "timeseries.csv", tr.times, tr.values)
    write_snapshot(run.dir / "final.qgeb", tr.final)
    rep = dg.DiagnosticsReport("simulate")
    rep.constants.update(steps=tr.steps, final_energy=float(energy_H(tr.final)))
    rep.add("finite", "state finite", "all values finite", None,
            "pass" if all(np.all(np.isfinite(a)) for a in tr.final.arrays()) else "fail")
    run.add(rep)


def cmd_cocycle(run: Run, seed: int):
    cfg = run.cfg
    m = cfg.model()
    rng = np.random.default_rng([seed, 2])
    dt = cfg.integrator.dt
    n1 = int(round(1.0 / dt))
    spin = default_spin_up(m.grid)
    res = []
    for i in range(cfg.experiment.cocycle_cases):
        s = int(rng.integers(0, 2**63))
        t, tau = int(rng.integers(0, n1 + 1)) * dt, int(rng.integers(0, n1 + 1)) * dt
        path = cfg.path(s, -spin - 1.0, t + tau + 1.0)
        x = random_state(m.grid, rng, float(10 ** rng.uniform(-2, 1)))
        mode = ("direct", "transformed")[i % 2]
        res.append(dg.cocycle_residual(m, path, x, t, tau, mode))
    rep = dg.DiagnosticsReport("cocycle")
    rep.constants.update(residuals=res, cases=len(res))
    worst = max(res) if res else 0.0
    rep.add("cocycle", "phi(t+tau,w,x) = phi(t,theta_tau w,phi(tau,w,x))", "bitwise (0)", worst,
            "pass" if worst == 0.0 else "fail")
    run.add(rep)


def _dissipativity(cfg: RunConfig, seed: int):
    m = cfg.model()
    ex = cfg.experiment
    rng = np.random.default_rng([seed, 3])
    ics = [random_state(m.grid, rng, e) for e in ex.ic_energies for _ in range(ex.ic_per_level)]
    path = cfg.path(seed, -default_spin_up(m.grid) - 1.0, ex.horizon + 1.0)
    rep, fit = dg.dissipativity_fit(m, ics, path, ex.horizon)
    return m, rep, fit


def cmd_dissipativity(run: Run, seed: int):
    m, rep, fit = _dissipativity(run.cfg, seed)
    run.add(rep)
    ab = dg.absorption_test(rep.series["times"], rep.series["energies"], fit.R,
                            run.cfg.experiment.absorb_tolerance)
    run.add(ab)
    E = rep.series["energies"]
    write_timeseries(run.dir / "dissipativity.csv", rep.series["times"],
                     {f"E{i}": E[:, i] for i in range(E.shape[1])})


def cmd_attractor(run: Run, seed: int):
    cfg = run.cfg
    m = cfg.model()
    ts = cfg.experiment.pullback_times
    path = cfg.path(seed, -max(ts) - 1.0, 1.0)
    rng = np.random.default_rng([seed, 4])
    x = random_state(m.grid, rng, 1.0)
    states, incs = dg.pullback_sample(m, x, path, ts)
    rep = dg.DiagnosticsReport("attractor")
    rep.constants.update(times=sorted(ts), cauchy_increments=incs)
    tail = incs[1:]
    ok = len(tail) < 2 or bool(np.all(np.diff(tail) < 0)) or bool(tail[-1] < 1e-10 * (1 + float(np.sqrt(energy_H(states[-1])))))
    rep.add("pullback Cauchy", "||phi(t_{i+1},theta_{-t_{i+1}}w,x) - phi(t_i,theta_{-t_i}w,x)|| decreasing",
            "strict decrease or below roundoff", float(incs[-1]) if len(incs) else 0.0,
            "pass" if ok else "fail")
    run.add(rep)


def _contraction(cfg: RunConfig, seed: int):
    m = cfg.model()
    ex = cfg.experiment
    rng = np.random.default_rng([seed, 5])
    t_end = (ex.n_windows + ex.warmup_windows) * ex.window
    path = cfg.path(seed, -default_spin_up(m.grid) - 1.0, t_end + 1.0)
    base = [random_state(m.grid, rng, 1e-3) for _ in range(ex.n_pairs)]
    pairs = [(b, b + random_state(m.grid, rng, 1e-12)) for b in base]
    return dg.contraction_rate(m, path, pairs, ex.window, ex.n_windows, skip=ex.warmup_windows)


def cmd_contraction(run: Run, seed: int):
    rep = _contraction(run.cfg, seed)
    if run.cfg.preset == "turbulent":
        _not_applicable(rep)
    run.add(rep)


def _not_applicable(rep: dg.DiagnosticsReport, only_failed: bool = False):
    """Outside the small-data regime the verdict is informative only."""
    for v in rep.verdicts:
        if only_failed and v.status != "fail":
            continue
        v.note = f"outside the small-data regime; measured status {v.status}"
        v.status = "not applicable"


def cmd_fixed_point(run: Run, seed: int):
    cfg = run.cfg
    m = cfg.model()
    ex = cfg.experiment
    rng = np.random.default_rng([seed, 6])
    path = cfg.path(seed, 0.0, ex.t_sync)
    starts = State.stack([random_state(m.grid, rng, 1.0) for _ in range(ex.n_starts)])
    mean, spread, rep = dg.fixed_point_estimate(m, path, starts, ex.t_sync)
    write_snapshot(run.dir / "fixed_point.qgeb", mean)
    write_timeseries(run.dir / "spread.csv", rep.series["times"], {"spread": rep.series["spreads"]})
    if cfg.preset == "turbulent":
        _not_applicable(rep)
    run.add(rep)


def cmd_ergodicity(run: Run, seed: int):
    cfg = run.cfg
    m = cfg.model()
    ex = cfg.experiment
    x0 = State.zeros(m.grid)
    rep = dg.ergodicity_test(
        m, ["theta_L2sq", "energy_H"], lambda s, a, b: cfg.path(s, a, b), x0,
        ex.t_long, ex.burn_in, ex.ensemble_size, ex.t_snapshot, seed=seed,
    )
    if cfg.preset == "turbulent":
        _not_applicable(rep, only_failed=True)
    run.add(rep)


def cmd_bounds(run: Run, seed: int):
    cfg = run.cfg
    ex = cfg.experiment
    half = ex.bounds_members // 2

    def paths(s2):
        out = []
        for i in range(half):
            out.append(cfg.path(seed + i, 0.0, ex.bounds_t_end, sigma2=s2))
            out.append(cfg.path(seed + i, 0.0, ex.bounds_t_end, sigma2=s2, antithetic=True))
        return out

    models = {}

    def model_for(s2):
        if s2 not in models:
            models[s2] = cfg.model()
        return models[s2]

    rep = dg.mean_square_bound_check(model_for, ex.sigma2_sweep, paths, ex.bounds_t_end)
    if cfg.preset == "turbulent":
        # the factor-10 calibration of C_hat is a default-parameter regression target
        env = [v for v in rep.verdicts if v.name == "envelope" and v.status == "fail"]
        for v in env:
            v.note = "C_hat calibration targets default parameters; measured status fail"
            v.status = "not applicable"
    run.add(rep)


HANDLERS = {
    "simulate": cmd_simulate,
    "cocycle-test": cmd_cocycle,
    "dissipativity": cmd_dissipativity,
    "attractor": cmd_attractor,
    "contraction": cmd_contraction,
    "fixed-point": cmd_fixed_point,
    "ergodicity": cmd_ergodicity,
    "bounds": cmd_bounds,
}


def run(cfg: RunConfig, command: str, out: str | Path = "runs", seed: int | None = None) -> tuple[int, Path]:
    """Execute one command; returns (exit status, output directory)."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    seed = cfg.noise.seed if seed is None else seed
    r = Run(cfg, Path(out), command)
    todo = [c for c in COMMANDS[1:-1]] if command == "full-suite" else [command]
    for c in todo:
        try:
            HANDLERS[c](r, seed)
        except StepTooLarge as e:
            rep = dg.DiagnosticsReport(c)
            rep.add("integration", "step guard", "dt*|E| <= bound*|u| + 1", None, "fail", note=str(e))
            r.add(rep)
    return r.finish(), r.dir


def _threads():
    env = os.environ.get("QGEBM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"QGEBM_THREADS must be an integer, got {env!r}") from None
        set_fft_workers(max(n, 1))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgebm", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default="runs", help="parent directory for run outputs")
    ap.add_argument("--seed", type=int, default=None, help="override noise.seed (u64)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted config override, e.g. physics.nu=2 (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _threads()
        ov = list(args.override)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            ov.append(f"noise.seed={args.seed}")
        cfg = load_config(args.config, ov)
        status, out = run(cfg, args.command, args.out)
    except (ConfigError, FileNotFoundError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 2
    summary = json.loads((out / "report.json").read_text())
    failed = [
        {"report": r["name"], "verdict": v["name"], "value": v["value"], "note": v["note"]}
        for r in summary["reports"] for v in r["verdicts"] if v["status"] == "fail"
    ]
    print(json.dumps({"status": "pass" if status == 0 else "fail", "out": str(out), "failed": failed}))
    return status


if __name__ == "__main__":
    sys.exit(main())
