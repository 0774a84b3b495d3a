"""Run a list of CLI commands on one config and tabulate the verdicts.

    python3 scripts/run_experiments.py scripts/configs/smoke.json --preset laminar
"""

import argparse
import json
import time
from pathlib import Path

from qgebm.cli import COMMANDS, run
from qgebm.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--commands", nargs="+", default=["full-suite"], choices=COMMANDS)
    ap.add_argument("--preset", default=None)
    ap.add_argument("--override", action="append", default=[])
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    ov = list(args.override) + ([f"preset={args.preset}"] if args.preset else [])
    cfg = load_config(args.config, ov)
    worst = 0
    for cmd in args.commands:
        t0 = time.time()
        status, out = run(cfg, cmd, Path(args.out))
        worst = max(worst, status)
        rep = json.loads((out / "report.json").read_text())
        print(f"{cmd}  exit {status}  {time.time() - t0:.1f} s  {out}")
        for r in rep["reports"]:
            for v in r["verdicts"]:
                val = v["value"]
                val = f"{val:.4g}" if isinstance(val, float) else val
                print(f"  {r['name']:<14} {v['name']:<24} {v['status']:<15} {val}  {v['note']}")
    raise SystemExit(worst)


if __name__ == "__main__":
    main()
