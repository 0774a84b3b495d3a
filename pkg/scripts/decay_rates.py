"""Parameter condition margin and discrete linear decay rates for a config.

    python3 scripts/decay_rates.py scripts/configs/default.json --override grid.N=32
"""

import argparse

from qgebm.config import load_config
from qgebm.diagnostics import linear_decay_rate, source_constant
from qgebm.model import check_condition, q_dissipation_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    cfg = load_config(args.config, args.override)
    m = cfg.model()
    ok, margin = check_condition(m.params)
    print(f"condition 4 nu r > beta^2 l^2 / pi^2: {ok} (margin {margin:.6g})")
    print(f"q dissipation rate alpha: {q_dissipation_rate(m.params):.6g}")
    for k, v in linear_decay_rate(m, cfg.integrator.dt).items():
        print(f"linear rate [{k}]: {v:.6g}  (squared norm {2 * v:.6g})")
    print(f"source constant 6a^2 + 6|S_a|^2 + 6|S_o|^2 + tr Q: {source_constant(m, cfg.covariance()):.6g}")


if __name__ == "__main__":
    main()
