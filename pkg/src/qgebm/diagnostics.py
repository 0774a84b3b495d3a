"""Numerical checks of the random-dynamical-system properties of the model.

Every function returns plain numbers or a :class:`DiagnosticsReport`; none of
them raise on a failed verdict.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .model import (
    Model,
    State,
    component_energies,
    energy_H,
    energy_V,
    lyapunov,
    q_dissipation_rate,
)
from .grid import poincare_lambda0
from .noise import CovarianceSpec, NoisePath, trace_Q, wiener_shift

__all__ = [
    "Verdict",
    "DiagnosticsReport",
    "Observable",
    "BUILTIN_OBSERVABLES",
    "cocycle_residual",
    "dissipativity_fit",
    "absorption_test",
    "pullback_sample",
    "contraction_rate",
    "fixed_point_estimate",
    "ergodicity_test",
    "mean_square_bound_check",
    "invariant_measure_estimate",
    "tempered_growth",
    "linear_decay_rate",
]


# ---------------------------------------------------------------------------
# reports


@dataclass
class Verdict:
    name: str
    inequality: str
    tolerance: str
    value: float | None
    status: str  # "pass" | "fail" | "not applicable"
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class DiagnosticsReport:
    name: str
    constants: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    def add(self, *args, **kw) -> Verdict:
        v = Verdict(*args, **kw)
        self.verdicts.append(v)
        return v

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "constants": _jsonable(self.constants),
            "verdicts": [_jsonable(asdict(v)) for v in self.verdicts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Named scalar function of a state; ``on_v`` asks for v instead of u."""

    name: str
    fn: Callable
    on_v: bool = False

    def __call__(self, s: State):
        return self.fn(s)


def _kinetic(u: State):
    return component_energies(u)["kinetic"]


def _theta_sq(u: State):
    return component_energies(u)["theta"]


def _q_sq(u: State):
    return component_energies(u)["q"]


def lyapunov_observable(model: Model, alpha: float | None = None) -> Observable:
    p = model.params
    alpha = q_dissipation_rate(p) if alpha is None else alpha
    lam0 = poincare_lambda0(model.grid, "neumann")
    return Observable("lyapunov", lambda v: lyapunov(v, alpha, lam0, p), on_v=True)


BUILTIN_OBSERVABLES = {
    "energy_H": Observable("energy_H", energy_H),
    "theta_L2sq": Observable("theta_L2sq", _theta_sq),
    "q_L2sq": Observable("q_L2sq", _q_sq),
    "kinetic": Observable("kinetic", _kinetic),
}


def _obs_dict(observables) -> dict:
    out = {}
    for o in observables:
        o = BUILTIN_OBSERVABLES[o] if isinstance(o, str) else o
        fn = o.fn
        if o.on_v:
            fn = _mark_v(fn)
        out[o.name] = fn
    return out


def _mark_v(fn):
    def g(s):
        return fn(s)

    g.on_v = True
    return g


def _max_abs_diff(a: State, b: State) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.arrays(), b.arrays()))


# ---------------------------------------------------------------------------
# cocycle


def cocycle_residual(
    model: Model, path: NoisePath, x: State, t: float, tau: float, mode: str = "direct"
) -> float:
    """||phi(t+tau, w, x) - phi(t, theta_tau w, phi(tau, w, x))||_H.

    The left side is a single run over [0, t + tau] that also records its
    state at tau; the right side restarts from that state on the shifted path.
    In transformed mode ``x`` is u(0) and both sides are compared as u.
    """
    j_tau, j_t = path.step_index(tau), path.step_index(t)
    x0 = x if mode == "direct" else x.with_theta_shift(model.z_at(path, 0.0), -1.0)
    left = model.evolve(x0, path, 0.0, (j_tau + j_t) * path.dt, mode, stride=max(j_tau, 1))
    mid = left.states[1] if j_tau > 0 else left.states[0]
    right = model.evolve(replace(mid, time=0.0), wiener_shift(path, tau), 0.0, t, mode)
    d = left.u_states()[-1] - right.u_states()[-1]
    return float(np.sqrt(energy_H(d)))


# ---------------------------------------------------------------------------
# decay law and absorption


def linear_decay_rate(model: Model, dt: float) -> dict:
    """Slowest decay rates of the discrete linearization about 0 (zero data).

    Each block's per-step amplification is inverted to a continuous-time
    rate -log(rho)/dt.  The Theta block includes the explicit b(y) term, so
    its rate is found from the x-mode-0 propagator's spectral radius.
    Squared-norm rates are twice these.
    """
    g = model.grid
    d_th, d_q, d_T = model.implicit_denominators(dt)
    N = g.N
    rates = {}
    rho = 0.0
    for m in range(N):
        G = (np.eye(N) - dt * model.b(np.eye(N)).T) / d_th[m][:, None]
        rho = max(rho, float(np.max(np.abs(np.linalg.eigvals(G)))))
    rates["theta"] = -math.log(rho) / dt
    rates["q"] = math.log(float(np.min(d_q))) / dt
    rates["T"] = math.log(float(np.min(d_T[d_T > 1.0]))) / dt
    rates["slowest"] = min(rates["theta"], rates["q"], rates["T"])
    return rates


@dataclass
class DecayFit:
    C2: float
    alpha1: float
    alpha1_ci: tuple
    C3: float
    R: float
    n_points: int
    trivial: bool = False


def _pooled_fit(times, energies, e0, floor, mask):
    """OLS of log((E - floor)/E0) = log C2 - alpha1 t over masked points."""
    tt, yy = [], []
    for i in range(energies.shape[1]):
        m = mask[:, i]
        if np.count_nonzero(m) == 0:
            continue
        tt.append(times[m])
        yy.append(np.log((energies[m, i] - floor) / e0[i]))
    if not tt:
        return None
    t = np.concatenate(tt)
    y = np.concatenate(yy)
    if t.size < 3 or np.ptp(t) == 0:
        return None
    res = stats.linregress(t, y)
    dof = t.size - 2
    half = stats.t.ppf(0.975, dof) * res.stderr
    alpha1 = -res.slope
    return math.exp(res.intercept), alpha1, (alpha1 - half, alpha1 + half), t.size


def dissipativity_fit(
    model: Model,
    ic_set: Sequence[State],
    path: NoisePath,
    horizon: float,
    stride: int = 10,
    tail_fraction: float = 0.25,
    floor: float | None = None,
    fit_from: float = 0.0,
    transient_factor: float = 4.0,
) -> tuple[DiagnosticsReport, object]:
    """Fit ||v(t)||^2 <= C2 ||v(0)||^2 exp(-alpha1 t) + C3 along the transformed flow.

    ``ic_set`` holds u(0) states; they are moved to v(0) = u(0) - Z(0) and
    evolved together.  C3 is the tail mean of ||v||^2 unless ``floor`` is
    given; the transient is every sample with ||v||^2 > transient_factor * C3
    after ``fit_from``.  Returns the report and the trajectory.
    """
    x = State.stack(list(ic_set)) if not isinstance(ic_set, State) else ic_set
    z0 = model.z_at(path, 0.0)
    v0 = x.with_theta_shift(z0, -1.0)
    traj = model.evolve(
        v0, path, 0.0, horizon, "transformed", stride=stride,
        observables={"E": _mark_v(energy_H)}, keep_states=False,
    )
    times, E = traj.times, traj.values["E"]
    e0 = E[0]
    n_tail = max(int(len(times) * tail_fraction), 1)
    C3 = float(np.mean(E[-n_tail:])) if floor is None else float(floor)
    rep = DiagnosticsReport("dissipativity")
    if C3 > 0:
        mask = (E > transient_factor * C3) & (times[:, None] >= fit_from)
    else:
        mask = (E > 1e-20 * e0[None, :]) & (times[:, None] >= fit_from)
    fit = _pooled_fit(times, E, e0, C3, mask)
    if fit is None:
        result = DecayFit(0.0, float("nan"), (float("nan"),) * 2, C3, 2 * C3, 0, trivial=True)
        rep.add("alpha1 > 0", "||v||^2 <= C2 ||v0||^2 e^{-alpha1 t} + C3", "95% CI",
                None, "pass", note="all ICs inside the floor; trivial pass")
    else:
        C2, a1, ci, n = fit
        result = DecayFit(C2, a1, ci, C3, 2 * C3, n)
        rep.add("alpha1 > 0", "||v||^2 <= C2 ||v0||^2 e^{-alpha1 t} + C3",
                "lower 95% bound > 0", a1, "pass" if ci[0] > 0 else "fail")
    rep.constants.update(C2=result.C2, alpha1=result.alpha1, alpha1_ci=list(result.alpha1_ci),
                         C3=result.C3, R=result.R, n_points=result.n_points)
    rep.series.update(times=times, energies=E)
    return rep, result


def absorption_test(times: np.ndarray, energies: np.ndarray, R: float, tol: float = 1.05) -> DiagnosticsReport:
    """Entry into {E <= R} and forward invariance up to tol * R, per trajectory.

    ``energies`` has shape (n_times, n_traj).
    """
    E = np.asarray(energies)
    if E.ndim == 1:
        E = E[:, None]
    rep = DiagnosticsReport("absorption")
    entry = []
    ok = True
    for i in range(E.shape[1]):
        inside = np.flatnonzero(E[:, i] <= R)
        if inside.size == 0:
            entry.append(float("nan"))
            ok = False
            continue
        k = inside[0]
        entry.append(float(times[k]))
        if np.any(E[k:, i] > tol * R):
            ok = False
    rep.constants.update(R=R, entry_times=entry, max_after_entry=[
        float(np.max(E[int(np.searchsorted(times, t)):, i])) if math.isfinite(t) else float("nan")
        for i, t in enumerate(entry)
    ])
    rep.add("absorbed", "||v(t)||^2 <= R for all t >= t0", f"{tol} R", max(entry) if entry else None,
            "pass" if ok else "fail")
    return rep


def direct_energies(model: Model, ic_set, path: NoisePath, horizon: float, stride: int = 10):
    """||u(t)||^2 along the direct flow (no transformation) for a set of ICs."""
    x = State.stack(list(ic_set)) if not isinstance(ic_set, State) else ic_set
    traj = model.evolve(x, path, 0.0, horizon, "direct", stride=stride,
                        observables={"E": energy_H}, keep_states=False)
    return traj.times, traj.values["E"]


# ---------------------------------------------------------------------------
# attractor, contraction, fixed point


def pullback_sample(model: Model, x: State, path: NoisePath, t_list: Sequence[float]):
    """States phi(t, theta_{-t} w, x) for each t, and their Cauchy increments."""
    t_list = sorted(float(t) for t in t_list)
    if path.t_min > -t_list[-1] + 1e-12 or path.t_max < 0:
        raise ValueError("path window does not cover [-max t, 0]")
    out = []
    for t in t_list:
        traj = model.evolve(x, path, -t, 0.0, "direct", keep_states=False)
        out.append(traj.final if t > 0 else x)
    incs = [float(np.sqrt(energy_H(b - a))) for a, b in zip(out[:-1], out[1:])]
    return out, np.array(incs)


def contraction_rate(
    model: Model,
    path: NoisePath,
    pair_set: Sequence[tuple[State, State]],
    window: float = 1.0,
    n_windows: int = 100,
    t0: float = 0.0,
    skip: int = 0,
) -> DiagnosticsReport:
    """k per unit window as the max over pairs of the distance ratio.

    Pairs are evolved in v along one path; after each window every pair's
    second member is pulled back to its initial separation along the current
    difference direction, so successive windows sample phi(1, theta_n w, .)
    near the trajectory.  Verdict: mean log k < 0 at 95% (one-sided t bound).
    """
    a = State.stack([p[0] for p in pair_set])
    b = State.stack([p[1] for p in pair_set])
    d0 = np.sqrt(energy_H(b - a))
    keep = d0 > 0
    rep = DiagnosticsReport("contraction")
    skipped = int(np.count_nonzero(~keep))
    if not np.any(keep):
        rep.add("mean log k < 0", "E log k(w) < 0", "95% one-sided", None, "fail",
                note="all pairs coincide")
        return rep
    a, b, d0 = a[keep], b[keep], d0[keep]
    n = len(d0)
    z = model.z_at(path, t0)
    x = State.stack([a[i] for i in range(n)] + [b[i] for i in range(n)])
    v = x.with_theta_shift(z, -1.0)
    logk = []
    t = t0
    for w in range(n_windows + skip):
        tr = model.evolve(v, path, t, t + window, "transformed", keep_states=False)
        v = tr.final
        t += window
        va, vb = v[:n], v[n:]
        dist = np.sqrt(energy_H(vb - va))
        k = float(np.max(dist / d0))
        if w >= skip:
            logk.append(math.log(k))
        fac = (d0 / dist)[:, None, None]
        vb = State(v.grid, va.theta + fac * (vb.theta - va.theta), va.q + fac * (vb.q - va.q),
                   va.T + fac * (vb.T - va.T), v.time, True)
        v = State.stack([va[i] for i in range(n)] + [vb[i] for i in range(n)])
    logk = np.array(logk)
    m = float(np.mean(logk))
    se = float(np.std(logk, ddof=1) / math.sqrt(len(logk))) if len(logk) > 1 else float("inf")
    upper = m + stats.t.ppf(0.95, max(len(logk) - 1, 1)) * se
    rep.constants.update(k=np.exp(logk), mean_log_k=m, se_log_k=se, upper95=upper,
                         n_windows=len(logk), skipped_pairs=skipped, window=window)
    rep.add("mean log k < 0", "E log k(w) < 0", "95% one-sided", upper,
            "pass" if upper < 0 else "fail")
    return rep


def fixed_point_estimate(
    model: Model,
    path: NoisePath,
    starts: State,
    t_sync: float,
    stride: int = 100,
    floor_factor: float = 1e4,
    fit_from: float = 2.0,
):
    """Evolve distinct starts on one path; return (mean state, spread, report).

    ``spread`` is the max pairwise ||u_i - u_j||_H at t_sync.  The report
    carries the spread history and its fitted exponential decay slope (per
    unit time), fitted where the spread is above ``floor_factor`` * eps.
    """
    traj = model.evolve(starts, path, 0.0, t_sync, "direct", stride=stride, keep_states=True)
    spreads = np.array([_spread(s) for s in traj.states])
    final = traj.final
    mean = State(final.grid, final.theta.mean(0), final.q.mean(0), final.T.mean(0),
                 final.time, False)
    spread = float(spreads[-1])
    norm = float(np.sqrt(energy_H(mean)))
    rep = DiagnosticsReport("fixed_point")
    floor = floor_factor * np.finfo(float).eps * (1 + norm)
    sel = (traj.times >= fit_from) & (spreads > floor)
    slope = float("nan")
    if np.count_nonzero(sel) >= 3:
        slope = float(stats.linregress(traj.times[sel], np.log(spreads[sel])).slope)
    tol = 1e-8 * (1 + norm)
    rep.constants.update(spread=spread, norm=norm, slope=slope, tolerance=tol)
    rep.series.update(times=traj.times, spreads=spreads)
    rep.add("spread", "max_ij ||u_i - u_j|| < 1e-8 (1 + ||u*||)", f"{tol:.3g}", spread,
            "pass" if spread < tol else "fail")
    return mean, spread, rep


def _spread(s: State) -> float:
    n = s.batch_shape[0]
    best = 0.0
    for i in range(n):
        d = energy_H(s[i + 1:] - s[i]) if i + 1 < n else np.zeros(1)
        best = max(best, float(np.sqrt(np.max(d))) if np.size(d) else 0.0)
    return best


# ---------------------------------------------------------------------------
# statistics


def batch_means(x: np.ndarray, n_batches: int = 20) -> tuple[float, float]:
    """Mean and batch-means standard error of a correlated series."""
    x = np.asarray(x, dtype=float)
    n = len(x) // n_batches
    if n == 0:
        raise ValueError("series shorter than the number of batches")
    b = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(np.mean(x)), float(np.std(b, ddof=1) / math.sqrt(n_batches))


def ergodicity_test(
    model: Model,
    observables,
    make_path: Callable[[int, float, float], NoisePath],
    x0: State,
    t_long: float = 500.0,
    burn_in: float = 50.0,
    ensemble_size: int = 64,
    t_snapshot: float = 100.0,
    seed: int = 0,
    stride: int = 10,
    n_batches: int = 20,
) -> DiagnosticsReport:
    """Time average along one path vs ensemble average at t_snapshot.

    ``make_path(seed, t_min, t_max)`` supplies noise paths.  The time
    average uses seed ``seed``; the ensemble uses ``seed + 1 + i``.
    """
    obs = _obs_dict(observables)
    rep = DiagnosticsReport("ergodicity")
    p = make_path(seed, 0.0, t_long)
    traj = model.evolve(x0, p, 0.0, t_long, "direct", stride=stride, observables=obs, keep_states=False)
    sel = traj.times >= burn_in
    paths = [make_path(seed + 1 + i, 0.0, t_snapshot) for i in range(ensemble_size)]
    xe = State.stack([x0] * ensemble_size)
    ens = model.evolve(xe, paths, 0.0, t_snapshot, "direct", observables=obs, keep_states=False)
    for name in obs:
        ta, ta_se = batch_means(traj.values[name][sel], n_batches)
        vals = ens.values[name][-1]
        ea = float(np.mean(vals))
        ea_se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
        comb = math.sqrt(ta_se**2 + ea_se**2)
        diff = abs(ta - ea)
        ok = diff <= 3 * comb
        rep.constants[name] = dict(time_avg=ta, time_se=ta_se, ens_avg=ea, ens_se=ea_se,
                                   z=diff / comb if comb > 0 else (0.0 if diff == 0 else float("inf")))
        rep.add(f"ergodic[{name}]", "|time avg - ensemble avg| <= 3 SE", "3 combined SE", diff,
                "pass" if ok else "fail")
    return rep


def mean_square_bound_check(
    model_for: Callable[[float], Model],
    sigma2_list: Sequence[float],
    make_paths: Callable[[float], list],
    t_end: float,
    stride: int = 50,
    tail_from: float | None = None,
) -> DiagnosticsReport:
    """Energy envelope and sigma^2 sweep of the tail mean E||Theta||^2.

    ``model_for(sigma2)`` builds the model and ``make_paths(sigma2)`` its
    ensemble of paths; every member starts from u = 0.  The envelope
    L(t) = E||u||^2 + alpha E int ||u||_V^2 with alpha = 2 min(1, nu, kappa)
    gives C_hat = max_t L(t)/t, reported against the source constant
    6a^2 + 6||S_a||^2 + 6||S_o||^2 + tr Q of the largest-sigma model.
    """
    rep = DiagnosticsReport("bounds")
    tails, chats, sources = [], [], []
    tail_from = t_end / 2 if tail_from is None else tail_from
    for s2 in sigma2_list:
        m = model_for(s2)
        paths = make_paths(s2)
        p = m.params
        x = State.zeros(m.grid, (len(paths),))
        tr = m.evolve(x, paths, 0.0, t_end, "direct", stride=stride,
                      observables={"H": energy_H, "V": energy_V, "theta": _theta_sq},
                      keep_states=False)
        t = tr.times
        alpha = 2.0 * min(1.0, p.nu, p.kappa)
        EH = tr.values["H"].mean(axis=1)
        EV = tr.values["V"].mean(axis=1)
        intV = np.concatenate([[0.0], np.cumsum(0.5 * (EV[1:] + EV[:-1]) * np.diff(t))])
        L = EH + alpha * intV
        chat = float(np.max(L[1:] / t[1:]))
        tail = float(tr.values["theta"][t >= tail_from].mean())
        src = source_constant(m, paths[0].cov)
        tails.append(tail)
        chats.append(chat)
        sources.append(src)
    mono = all(b >= a for a, b in zip(tails, tails[1:]))
    rep.constants.update(sigma2=list(sigma2_list), tail_theta=tails, C_hat=chats, source=sources)
    rep.add("tail monotone", "limsup E||Theta||^2 nondecreasing in tr Q", "exact ordering",
            None, "pass" if mono else "fail")
    ratio = chats[-1] / sources[-1] if sources[-1] > 0 else float("nan")
    ok = 0.1 <= ratio <= 10.0
    rep.constants["C_hat_ratio"] = ratio
    rep.add("envelope", "E||u||^2 + alpha E int ||u||_V^2 <= E||u0||^2 + t C_hat",
            "C_hat within factor 10 of source constant", ratio, "pass" if ok else "fail")
    return rep


def source_constant(model: Model, cov: CovarianceSpec) -> float:
    """6 a^2 + 6 ||S_a||^2 + 6 ||S_o||^2 + tr Q."""
    g = model.grid
    w = g.quadrature_weight
    pr = model.profiles
    a = model.params.a
    S2 = w * (float(np.sum(pr.S_a**2)) + float(np.sum(pr.S_o**2)))
    return 6 * a * a * g.l**2 + 6 * S2 + trace_Q(cov, g)


def invariant_measure_estimate(
    values: dict,
    times: np.ndarray,
    burn_in: float,
    bins: int = 30,
    n_batches: int = 20,
    ranges: dict | None = None,
) -> dict:
    """Time-averaged moment tables and histograms after burn-in.

    Histograms are normalized densities with batch-means error bars per bin.
    """
    sel = times >= burn_in
    out = {}
    for name, series in values.items():
        x = np.asarray(series)[sel]
        if x.ndim > 1:
            x = x.reshape(len(x), -1)[:, 0]
        mean, se = batch_means(x, n_batches)
        rng = (ranges or {}).get(name)
        if rng is None:
            lo, hi = float(np.min(x)), float(np.max(x))
            if hi == lo:
                hi = lo + 1.0
            rng = (lo, hi)
        edges = np.linspace(rng[0], rng[1], bins + 1)
        dens, _ = np.histogram(x, edges, density=False)
        dens = dens / (len(x) * np.diff(edges))
        nb = len(x) // n_batches
        bh = np.array([
            np.histogram(x[i * nb:(i + 1) * nb], edges)[0] / (nb * np.diff(edges))
            for i in range(n_batches)
        ])
        err = bh.std(axis=0, ddof=1) / math.sqrt(n_batches)
        out[name] = dict(mean=mean, se=se, var=float(np.var(x)), edges=edges, density=dens, density_se=err)
    return out


def tempered_growth(times: np.ndarray, norms: np.ndarray, max_slope: float = 1e-2) -> DiagnosticsReport:
    """Slope test on log of the running max of ||z(theta_t w)|| over the second half."""
    runmax = np.maximum.accumulate(np.asarray(norms, float))
    sel = times >= times[-1] / 2
    slope = float(stats.linregress(times[sel], np.log(np.maximum(runmax[sel], 1e-300))).slope)
    rep = DiagnosticsReport("tempered")
    rep.constants.update(slope=slope, final_log_max=float(np.log(runmax[-1])))
    rep.add("tempered", "limsup log+ ||z(theta_t w)|| / t = 0", f"slope < {max_slope}", slope,
            "pass" if slope < max_slope else "fail")
    return rep
