"""Per-mode stationary variance of the OU process against q_k / (2 (lambda_k + 1 + b)).

    python3 scripts/ou_variance.py --t-end 500 --dt 5e-4
"""

import argparse

import numpy as np

from qgebm.grid import Grid
from qgebm.noise import CovarianceSpec, basis_norms, default_spin_up, ou_process, sample_path, stationary_variance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--b", type=float, default=0.5)
    ap.add_argument("--sigma2", type=float, default=1.0)
    ap.add_argument("--s-q", type=float, default=2.0)
    ap.add_argument("--dt", type=float, default=5e-4)
    ap.add_argument("--t-end", type=float, default=500.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    g = Grid(1.0, args.N)
    spec = CovarianceSpec(args.sigma2, s_q=args.s_q, K=args.K)
    path = sample_path(spec, g, -default_spin_up(g), args.t_end, args.dt, args.seed)
    proc = ou_process(path, args.b)
    a0, n, K = path.origin_offset, path.step_index(args.t_end), args.K
    bn = basis_norms(g)[:K, :K]
    s1, s2 = np.zeros((K, K)), np.zeros((K, K))
    for z in proc.stream(a0, a0 + n + 1):
        c = z[:K, :K] * bn
        s1 += c
        s2 += c * c
    var = s2 / (n + 1) - (s1 / (n + 1)) ** 2
    ref = stationary_variance(g, spec, args.b)[:K, :K]
    print(" m  n      lambda      empirical     formula    rel err")
    for i in np.argsort(g.lam_neumann[:K, :K], axis=None, kind="stable"):
        m_, n_ = divmod(int(i), K)
        print(f"{m_:2d} {n_:2d} {g.lam_neumann[m_, n_]:11.4f} {var[m_, n_]:13.6g} {ref[m_, n_]:11.6g} "
              f"{var[m_, n_] / ref[m_, n_] - 1:+9.4f}")


if __name__ == "__main__":
    main()
