"""Coupled quasigeostrophic ocean / energy-balance atmosphere model.

State u = (Theta, q, T): air temperature (Neumann), ocean vorticity
(Dirichlet, psi from Lap psi = q) and zero-mean ocean temperature (Neumann).

    du/dt + A u = F(u) + dW          (direct form, noise on Theta only)
    dv/dt + A v = F(v + Z(theta_t w)) (transformed form, v = u - Z, Z = (z, 0, 0))

with A u = (-Lap Theta + (1 + b) Theta, -nu Lap q, -kappa Lap T) and

    F1 = -a + S_a - b S_o + b T
    F2 = -r q + Pr Ra dT/dy - J(psi, q) - beta psi_x
    F3 = -J(T, psi)

Time stepping is first-order IMEX Euler in spectral space: diffusion, the
constant reaction on Theta and the Ekman drag are implicit (diagonal); the
b(y) terms, the Jacobians, beta psi_x and the coupling are explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import grid as gs
from .grid import COS, SIN, Grid, ScalarField
from .noise import NoisePath, ProfileOp, ou_process

__all__ = [
    "PhysParams",
    "ForcingProfiles",
    "State",
    "Model",
    "Trajectory",
    "StepTooLarge",
    "check_condition",
    "q_dissipation_rate",
    "lyapunov",
    "norm_H",
    "norm_V",
    "random_state",
]


# Amplitudes below this are set to zero after each step.  Source-free
# components decay geometrically and would otherwise reach subnormal
# floats, whose arithmetic is an order of magnitude slower.
FLUSH = 1e-140


class StepTooLarge(FloatingPointError):
    """Explicit tendency violates the CFL-style guard."""


@dataclass(frozen=True)
class PhysParams:
    a: float = 0.1
    nu: float = 1.0
    r: float = 1.0
    beta: float = 1.0
    Pr: float = 1.0
    Ra: float = 10.0
    l: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("nu", "r", "Pr", "Ra", "l", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("a", "beta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


def check_condition(p: PhysParams) -> tuple[bool, float]:
    """4 nu r > beta^2 l^2 / pi^2; returns (holds, margin)."""
    margin = 4.0 * p.nu * p.r - p.beta**2 * p.l**2 / np.pi**2
    return bool(margin > 0), float(margin)


def q_dissipation_rate(p: PhysParams) -> float:
    """alpha = r - beta^2 l^2 / (4 nu pi^2), positive iff the condition holds.

    With it, d/dt ||q||^2 <= -alpha ||q||^2 + (Pr Ra)^2 / alpha ||grad T||^2.
    """
    return p.r - p.beta**2 * p.l**2 / (4.0 * p.nu * np.pi**2)


@dataclass(frozen=True, eq=False)
class ForcingProfiles:
    """b(y) on the y nodes, S_a and S_o on the full node grid."""

    grid: Grid
    b: np.ndarray
    S_a: np.ndarray
    S_o: np.ndarray

    def __post_init__(self):
        N = self.grid.N
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (N,)).copy()
        object.__setattr__(self, "b", b)
        for name in ("S_a", "S_o"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (N, N)).copy()
            object.__setattr__(self, name, v)
        # report the worst node, upper bound first
        if b.max() >= 1 or b.min() <= 0:
            i = int(np.argmax(b)) if b.max() >= 1 else int(np.argmin(b))
            side = "exceeds 1" if b[i] >= 1 else "is not positive"
            raise ValueError(
                f"b(y) must satisfy 0 < b < 1; b = {b[i]:.6g} {side} at y = {self.grid.y[i]:.6g}"
            )

    @classmethod
    def cosine(
        cls,
        grid: Grid,
        s_a: float = 0.1,
        s_o: float = 0.1,
        b_offset: float = 0.5,
        b_amplitude: float = 0.4,
    ) -> ForcingProfiles:
        """b = offset - amplitude cos(pi y/l), S = s cos(pi y/l)."""
        cy = np.cos(np.pi * grid.y / grid.l)
        X, Y = grid.mesh
        cY = np.cos(np.pi * Y / grid.l)
        return cls(grid, b_offset - b_amplitude * cy, s_a * cY, s_o * cY)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class State:
    """Spectral amplitudes of (Theta, q, T); leading axes are batch axes.

    ``transformed`` marks v = (Theta - z, q, T).
    """

    grid: Grid
    theta: np.ndarray
    q: np.ndarray
    T: np.ndarray
    time: float = 0.0
    transformed: bool = False

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple = (), **kw) -> State:
        z = np.zeros(batch + (grid.N, grid.N))
        return cls(grid, z, z.copy(), z.copy(), **kw)

    @classmethod
    def from_physical(cls, grid: Grid, theta, q, T, **kw) -> State:
        """Build from nodal values; T is projected to zero mean."""
        th = gs.analyze2(np.asarray(theta, float), (COS, COS), grid.N)
        qq = gs.analyze2(np.asarray(q, float), (SIN, SIN), grid.N)
        TT = gs.analyze2(np.asarray(T, float), (COS, COS), grid.N)
        TT[..., 0, 0] = 0.0
        return cls(grid, th, qq, TT, **kw)

    @classmethod
    def stack(cls, states: Sequence[State]) -> State:
        s0 = states[0]
        return replace(
            s0,
            theta=np.stack([s.theta for s in states]),
            q=np.stack([s.q for s in states]),
            T=np.stack([s.T for s in states]),
        )

    @property
    def batch_shape(self) -> tuple:
        return self.theta.shape[:-2]

    def __getitem__(self, idx) -> State:
        return replace(self, theta=self.theta[idx], q=self.q[idx], T=self.T[idx])

    def __len__(self):
        return self.theta.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.theta, self.q, self.T

    def _combine(self, other: State, sign: float) -> State:
        return replace(
            self,
            theta=self.theta + sign * other.theta,
            q=self.q + sign * other.q,
            T=self.T + sign * other.T,
        )

    def __add__(self, other: State) -> State:
        return self._combine(other, 1.0)

    def __sub__(self, other: State) -> State:
        return self._combine(other, -1.0)

    def scale(self, c: float) -> State:
        return replace(self, theta=c * self.theta, q=c * self.q, T=c * self.T)

    def field(self, name: str) -> ScalarField:
        """One component as a ScalarField (unbatched states only)."""
        bc = {"theta": "neumann", "q": "dirichlet", "T": "neumann"}[name]
        return ScalarField(self.grid, getattr(self, name), bc, "spectral")

    def psi(self) -> np.ndarray:
        return -self.q / self.grid.lam_dirichlet

    def physical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        N = self.grid.N
        return (
            gs.synth2(self.theta, (COS, COS), N),
            gs.synth2(self.q, (SIN, SIN), N),
            gs.synth2(self.T, (COS, COS), N),
        )

    def with_theta_shift(self, z: np.ndarray, sign: float) -> State:
        """Add sign * z to Theta, toggling the transformed flag when sign < 0."""
        return replace(self, theta=self.theta + sign * z, transformed=sign < 0)

    def equals(self, other: State) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


# ---------------------------------------------------------------------------
# norms and functionals


def _sq(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sum(w * a * a, axis=(-2, -1))


def energy_H(u: State) -> np.ndarray:
    """||u||_H^2 = ||Theta||^2 + ||q||^2 + ||T||^2."""
    g = u.grid
    return _sq(u.theta, g.wn) + _sq(u.q, g.wd) + _sq(u.T, g.wn)


def norm_H(u: State):
    return np.sqrt(energy_H(u))


def energy_V(u: State) -> np.ndarray:
    """||Theta||_{H1}^2 + ||grad q||^2 + ||grad T||^2."""
    g = u.grid
    return (
        _sq(u.theta, g.wn * (1.0 + g.lam_neumann))
        + _sq(u.q, g.wd * g.lam_dirichlet)
        + _sq(u.T, g.wn * g.lam_neumann)
    )


def norm_V(u: State):
    return np.sqrt(energy_V(u))


def component_energies(u: State) -> dict[str, np.ndarray]:
    g = u.grid
    return {
        "theta": _sq(u.theta, g.wn),
        "q": _sq(u.q, g.wd),
        "T": _sq(u.T, g.wn),
        "grad_T": _sq(u.T, g.wn * g.lam_neumann),
        "grad_q": _sq(u.q, g.wd * g.lam_dirichlet),
        "kinetic": _sq(u.q, g.wd / g.lam_dirichlet),
    }


def lyapunov(v: State, alpha: float, lam0: float, p: PhysParams):
    """(lam0/2)||Theta~||^2 + ||T||^2 + (alpha lam0 / (2 Pr^2 Ra^2)) ||q||^2."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    e = component_energies(v)
    return 0.5 * lam0 * e["theta"] + e["T"] + alpha * lam0 / (2.0 * p.Pr**2 * p.Ra**2) * e["q"]


def random_state(
    grid: Grid,
    rng: np.random.Generator,
    energy: float = 1.0,
    kmax: int = 6,
    split=(1.0, 1.0, 1.0),
    batch: tuple = (),
) -> State:
    """Band-limited random state (modes < kmax) with ||u||_H^2 = energy.

    ``split`` sets the share of the energy carried by (Theta, q, T).
    """
    N = grid.N
    comps = []
    for kind, share in zip(((COS, COS), (SIN, SIN), (COS, COS)), split):
        a = np.zeros(batch + (N, N))
        a[..., :kmax, :kmax] = rng.standard_normal(batch + (kmax, kmax))
        decay = 1.0 / (1.0 + grid.eigenvalues(kind)[:kmax, :kmax] / grid.eigenvalues(kind)[1, 1])
        a[..., :kmax, :kmax] *= decay
        comps.append((a, kind, share))
    comps[2][0][..., 0, 0] = 0.0
    arrs = []
    for a, kind, share in comps:
        e = _sq(a, grid.norm_weights(kind))
        scale = np.sqrt(energy * share / sum(split) / np.where(e > 0, e, 1.0))
        arrs.append(a * scale[..., None, None])
    return State(grid, *arrs)


# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: list | None
    values: dict
    final: State
    zs: list | None = None  # OU samples at output times (transformed mode)
    steps: int = 0

    def state_at(self, i: int) -> State:
        return self.states[i]

    def u_states(self) -> list:
        """Untransformed states v + Z at the output times."""
        if self.zs is None:
            return self.states
        return [s.with_theta_shift(z, 1.0) for s, z in zip(self.states, self.zs)]


class Model:
    """Spectral operators, IMEX steppers and the discrete solution map.

    ``forcing=False`` is a test hook that zeroes F entirely (including the
    Ekman term), leaving only -A and the noise.
    """

    def __init__(
        self,
        grid: Grid,
        params: PhysParams,
        profiles: ForcingProfiles,
        cfl_bound: float = 0.5,
        forcing: bool = True,
    ):
        if abs(params.l - grid.l) > 1e-12 * grid.l:
            raise ValueError("params.l and grid.l disagree")
        if profiles.grid != grid:
            raise ValueError("profiles live on a different grid")
        self.grid = grid
        self.params = params
        self.profiles = profiles
        self.cfl_bound = cfl_bound
        self.forcing = forcing
        self.b = ProfileOp(grid, profiles.b)
        N = grid.N
        self._ks = grid.wavenumbers(SIN)  # modes 1..N
        self._inv_lamD = 1.0 / grid.lam_dirichlet
        self._P = grid.cos_to_sin  # (N, N+1)
        S_a = gs.analyze2(profiles.S_a, (COS, COS), N)
        S_o = gs.analyze2(profiles.S_o, (COS, COS), N)
        c = S_a - self.b(S_o)
        c[0, 0] -= params.a
        self._c_theta = c
        self._denoms: dict[float, tuple] = {}

    # -- operators ---------------------------------------------------------

    def apply_A(self, u: State) -> State:
        g, p = self.grid, self.params
        return replace(
            u,
            theta=(g.lam_neumann + 1.0) * u.theta + self.b(u.theta),
            q=p.nu * g.lam_dirichlet * u.q,
            T=p.kappa * g.lam_neumann * u.T,
        )

    def _nonlinear(self, q: np.ndarray, T: np.ndarray):
        """(Jpq, JTp, lin_q) with lin_q = P(Pr Ra T_y - beta psi_x)."""
        N, M = self.grid.N, self.grid.M
        ks = self._ks
        psi = -q * self._inv_lamD
        bshape = q.shape[:-2]
        zrow = np.zeros(bshape + (1, N))
        zcol = np.zeros(bshape + (N, 1))
        # (cos x: modes 0..N, sin y: modes 1..N)
        psi_x = np.concatenate([zrow, ks[:, None] * psi], axis=-2)
        q_x = np.concatenate([zrow, ks[:, None] * q], axis=-2)
        T_y = np.concatenate([-ks[None, : N - 1] * T[..., :, 1:], zcol], axis=-1)
        T_y = np.concatenate([T_y, zrow], axis=-2)
        # (sin x: modes 1..N, cos y: modes 0..N)
        psi_y = np.concatenate([zcol, ks[None, :] * psi], axis=-1)
        q_y = np.concatenate([zcol, ks[None, :] * q], axis=-1)
        T_x = np.concatenate([-ks[: N - 1, None] * T[..., 1:, :], zrow], axis=-2)
        T_x = np.concatenate([T_x, zcol], axis=-1)

        A = gs.synth2(np.stack([psi_x, q_x, T_y], axis=-3), (COS, SIN), M)
        B = gs.synth2(np.stack([psi_y, q_y, T_x], axis=-3), (SIN, COS), M)
        psi_xp, q_xp, T_yp = A[..., 0, :, :], A[..., 1, :, :], A[..., 2, :, :]
        psi_yp, q_yp, T_xp = B[..., 0, :, :], B[..., 1, :, :], B[..., 2, :, :]
        Jpq = gs.analyze2(psi_xp * q_yp - psi_yp * q_xp, (SIN, SIN), N)
        JTp = gs.analyze2(T_xp * psi_yp - T_yp * psi_xp, (COS, COS), N)
        p = self.params
        lin_q = self._P @ (p.Pr * p.Ra * T_y - p.beta * psi_x)
        return Jpq, JTp, lin_q

    def _F(self, theta: np.ndarray, q: np.ndarray, T: np.ndarray):
        """F without its -r q term; theta enters no component of F."""
        Jpq, JTp, lin_q = self._nonlinear(q, T)
        F1 = self._c_theta + self.b(T)
        F2 = lin_q - Jpq
        F3 = -JTp
        F3[..., 0, 0] = 0.0
        return F1, F2, F3

    def rhs_F(self, u: State) -> State:
        if not self.forcing:
            return State.zeros(self.grid, u.batch_shape, time=u.time, transformed=u.transformed)
        F1, F2, F3 = self._F(u.theta, u.q, u.T)
        return replace(u, theta=np.broadcast_to(F1, u.theta.shape).copy(),
                       q=F2 - self.params.r * u.q, T=F3)

    # -- time stepping -----------------------------------------------------

    def implicit_denominators(self, dt: float):
        d = self._denoms.get(dt)
        if d is None:
            g, p = self.grid, self.params
            r = p.r if self.forcing else 0.0
            d = (
                1.0 + dt * (g.lam_neumann + 1.0),
                1.0 + dt * (p.nu * g.lam_dirichlet + r),
                1.0 + dt * p.kappa * g.lam_neumann,
            )
            self._denoms[dt] = d
        return d

    def _explicit(self, theta, q, T, z):
        theta_eval = theta if z is None else theta + z
        if self.forcing:
            F1, F2, F3 = self._F(theta_eval, q, T)
        else:
            F1 = F2 = F3 = 0.0
        E_th = F1 - self.b(theta)
        return E_th, np.broadcast_to(F2, q.shape), np.broadcast_to(F3, T.shape)

    def _guard(self, dt, theta, q, T, E):
        g = self.grid
        e_norm = np.sqrt(_sq(E[0], g.wn) + _sq(E[1], g.wd) + _sq(E[2], g.wn))
        s_norm = np.sqrt(_sq(theta, g.wn) + _sq(q, g.wd) + _sq(T, g.wn))
        if not np.all(dt * e_norm <= self.cfl_bound * s_norm + 1.0):
            raise StepTooLarge(
                f"step too large: dt*|E|={np.max(dt * e_norm):.3g} exceeds "
                f"{self.cfl_bound}*|u|+1={np.max(self.cfl_bound * s_norm + 1.0):.3g}"
            )

    def _advance(self, theta, q, T, dt, z=None, dW=None):
        E = self._explicit(theta, q, T, z)
        self._guard(dt, theta, q, T, E)
        d_th, d_q, d_T = self.implicit_denominators(dt)
        rhs_th = theta + dt * E[0]
        if dW is not None:
            rhs_th = rhs_th + dW
        T_new = (T + dt * E[2]) / d_T
        T_new[..., 0, 0] = 0.0
        out = rhs_th / d_th, (q + dt * E[1]) / d_q, T_new
        for a in out:
            a[np.abs(a) < FLUSH] = 0.0
        return out

    def step_transformed(self, v: State, z, dt: float) -> State:
        """One IMEX step of dv/dt + A v = F(v + Z)."""
        zz = getattr(z, "z", z)
        th, q, T = self._advance(v.theta, v.q, v.T, dt, z=zz)
        return replace(v, theta=th, q=q, T=T, time=v.time + dt, transformed=True)

    def step_direct(self, u: State, dW: np.ndarray, dt: float) -> State:
        """One Euler-Maruyama IMEX step; dW are Theta amplitudes (N x N)."""
        th, q, T = self._advance(u.theta, u.q, u.T, dt, dW=dW)
        return replace(u, theta=th, q=q, T=T, time=u.time + dt, transformed=False)

    def ou(self, path: NoisePath):
        return ou_process(path, self.b)

    def z_at(self, path: NoisePath, t: float) -> np.ndarray:
        return self.ou(path).at(path.step_index(t) + path.origin_offset)

    def evolve(
        self,
        x: State,
        path: NoisePath | Sequence[NoisePath],
        t0: float,
        t1: float,
        mode: str = "direct",
        stride: int | None = None,
        observables: dict[str, Callable] | None = None,
        keep_states: bool = True,
    ) -> Trajectory:
        """Discrete solution map phi(t1 - t0, theta_t0 w, x) on one or more paths.

        A sequence of paths drives the batch members one-to-one; a single
        path drives all of them.  Output is sampled every ``stride`` steps
        (default: only the end points) plus the final state.
        """
        if mode not in ("direct", "transformed"):
            raise ValueError(f"unknown mode {mode!r}")
        paths = list(path) if isinstance(path, (list, tuple)) else [path]
        p0 = paths[0]
        dt = p0.dt
        j0, j1 = p0.step_index(t0), p0.step_index(t1)
        if j1 < j0:
            raise ValueError("t1 must not precede t0")
        for p in paths:
            if p.dt != dt:
                raise ValueError("paths disagree on dt")
            if not (p.j_min <= j0 and j1 <= p.j_max):
                raise ValueError(
                    f"path window [{p.t_min}, {p.t_max}] does not cover [{t0}, {t1}]"
                )
        multi = len(paths) > 1 or isinstance(path, (list, tuple))
        if multi and x.batch_shape[:1] != (len(paths),):
            raise ValueError("batch size must match the number of paths")
        stride = max(j1 - j0, 1) if stride is None else int(stride)
        observables = observables or {}

        theta, q, T = x.arrays()
        transformed = mode == "transformed"
        streams = None
        if transformed:
            streams = [self.ou(p).stream(j0 + p.origin_offset, j1 + p.origin_offset + 1) for p in paths]

        def z_now():
            zs = [next(s) for s in streams]
            return np.stack(zs) if multi else zs[0]

        times, states, zs_out = [], [] if keep_states else None, [] if transformed else None
        values = {k: [] for k in observables}

        def record(j, th, qq, TT, z):
            s = replace(x, theta=th, q=qq, T=TT, time=j * dt, transformed=transformed)
            times.append(j * dt)
            if keep_states:
                states.append(s)
            if transformed:
                zs_out.append(z)
            u = s.with_theta_shift(z, 1.0) if transformed else s
            for k, fn in observables.items():
                values[k].append(fn(s if getattr(fn, "on_v", False) else u))

        z = z_now() if transformed else None
        record(j0, theta, q, T, z)
        chunk = 256
        buf, buf_lo = None, j0
        for j in range(j0, j1):
            if transformed:
                theta, q, T = self._advance(theta, q, T, dt, z=z)
                z = z_now()
            else:
                if buf is None or j - buf_lo >= buf.shape[0]:
                    hi = min(j + chunk, j1)
                    incs = [p.increment_amplitudes(j, hi) for p in paths]
                    buf = np.stack(incs, axis=-3) if multi else incs[0]
                    buf_lo = j
                theta, q, T = self._advance(theta, q, T, dt, dW=buf[j - buf_lo])
            if (j + 1 - j0) % stride == 0 or j + 1 == j1:
                record(j + 1, theta, q, T, z)
        final = replace(x, theta=theta, q=q, T=T, time=j1 * dt, transformed=transformed)
        return Trajectory(
            np.array(times),
            states,
            {k: np.array(v) for k, v in values.items()},
            final,
            zs_out,
            j1 - j0,
        )


def on_v(fn: Callable) -> Callable:
    """Mark an observable as acting on v rather than u = v + Z in transformed runs."""
    fn.on_v = True
    return fn
