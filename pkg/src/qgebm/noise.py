"""Trace-class Wiener noise on the Neumann cosine basis and the stationary OU field.

The noise w = sum_k sqrt(q_k) beta_k(t) e_k lives on the L2-normalized cosine
eigenfunctions e_k of the Neumann Laplacian.  Increments are generated by a
counter-based generator keyed on (seed, absolute step index), so any window
of a path, and any Wiener-shifted view of it, regenerates bit-identical
numbers.  This is what makes the discrete cocycle property exact.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .grid import Grid

__all__ = [
    "CovarianceSpec",
    "NoisePath",
    "OUState",
    "OUProcess",
    "trace_Q",
    "sample_path",
    "wiener_shift",
    "ou_step",
    "ou_stationary",
    "basis_norms",
]

BLOCK = 64  # steps per generator block
_U64 = (1 << 64) - 1
_INCREMENT_STREAM = 0
_OU_INIT_STREAM = 1


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal covariance q_k = sigma2 (1 + lambda_k)^(-s_q) on cos modes m, n < K.

    ``table`` overrides the power law with explicit per-mode eigenvalues
    (shape K x K).  ``K=None`` keeps every grid mode.
    """

    sigma2: float = 1e-3
    s_q: float = 2.0
    K: int | None = None
    table: tuple | None = None

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.table is None and self.K is None and self.s_q <= 1:
            raise ValueError("s_q <= 1 with unbounded K: trace of Q diverges")
        if self.table is not None:
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or t.shape[0] != t.shape[1]:
                raise ValueError("covariance table must be square")
            if np.any(t < 0):
                raise ValueError("covariance eigenvalues must be non-negative")

    def cutoff(self, grid: Grid) -> int:
        if self.table is not None:
            return min(len(self.table), grid.N)
        return grid.N if self.K is None else min(int(self.K), grid.N)

    def eigenvalues(self, grid: Grid) -> np.ndarray:
        K = self.cutoff(grid)
        if self.table is not None:
            return np.asarray(self.table, dtype=float)[:K, :K]
        lam = grid.lam_neumann[:K, :K]
        return self.sigma2 * (1.0 + lam) ** (-self.s_q)


def trace_Q(spec: CovarianceSpec, grid: Grid) -> float:
    return float(np.sum(spec.eigenvalues(grid)))


def basis_norms(grid: Grid) -> np.ndarray:
    """L2 norms of cos(m pi x/l) cos(n pi y/l); amplitude = coefficient / norm."""
    return np.sqrt(grid.wn)


# ---------------------------------------------------------------------------
# counter-based normals


@lru_cache(maxsize=32)
def _normal_block(seed: int, stream: int, block: int, K: int) -> np.ndarray:
    key = (seed & _U64) | (stream << 64)
    counter = (block & _U64) << 128
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    out = gen.standard_normal((BLOCK, K, K))
    out.flags.writeable = False
    return out


def _normals(seed: int, stream: int, j0: int, j1: int, K: int) -> np.ndarray:
    """Standard normals for absolute steps j0 <= j < j1, shape (j1 - j0, K, K)."""
    out = np.empty((j1 - j0, K, K))
    j = j0
    while j < j1:
        b, r = divmod(j, BLOCK)
        n = min(BLOCK - r, j1 - j)
        out[j - j0 : j - j0 + n] = _normal_block(seed, stream, b, K)[r : r + n]
        j += n
    return out


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoisePath:
    """A seeded Wiener path sampled on a uniform step grid.

    Steps are addressed by local index j (covering [j dt, (j+1) dt)); the
    absolute generator index is ``j + origin_offset``.  ``abs_lo``/``abs_hi``
    bound the generated window in absolute indices and do not move under
    the Wiener shift.
    """

    seed: int
    dt: float
    grid: Grid
    cov: CovarianceSpec
    abs_lo: int
    abs_hi: int
    origin_offset: int = 0
    sign: float = 1.0

    @property
    def j_min(self) -> int:
        return self.abs_lo - self.origin_offset

    @property
    def j_max(self) -> int:
        return self.abs_hi - self.origin_offset

    @property
    def t_min(self) -> float:
        return self.j_min * self.dt

    @property
    def t_max(self) -> float:
        return self.j_max * self.dt

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1) * self.dt

    @property
    def K(self) -> int:
        return self.cov.cutoff(self.grid)

    @property
    def variances(self) -> np.ndarray:
        return self.cov.eigenvalues(self.grid) * self.dt

    def step_index(self, t: float) -> int:
        j = round(t / self.dt)
        if abs(t / self.dt - j) > 1e-6:
            raise ValueError(f"time {t} is not a multiple of dt={self.dt}")
        return j

    def covers(self, t0: float, t1: float) -> bool:
        return self.j_min <= self.step_index(t0) and self.step_index(t1) <= self.j_max

    def increments(self, j0: int, j1: int) -> np.ndarray:
        """Coefficient increments dW_k for local steps j0 <= j < j1, shape (n, K, K)."""
        if j0 < self.j_min or j1 > self.j_max:
            raise ValueError(
                f"steps [{j0}, {j1}) outside path window [{self.j_min}, {self.j_max})"
            )
        K = self.K
        std = np.sqrt(self.variances)
        a0 = j0 + self.origin_offset
        xi = _normals(self.seed, _INCREMENT_STREAM, a0, a0 + (j1 - j0), K)
        return self.sign * std * xi

    def increment_amplitudes(self, j0: int, j1: int) -> np.ndarray:
        """Increments as Theta amplitudes on the full N x N cosine grid."""
        inc = self.increments(j0, j1)
        N, K = self.grid.N, self.K
        out = np.zeros((j1 - j0, N, N))
        out[:, :K, :K] = inc / basis_norms(self.grid)[:K, :K]
        return out

    def cumulative(self, t: float) -> np.ndarray:
        """W(t) in coefficients, with W(0) = 0."""
        j = self.step_index(t)
        if j >= 0:
            return self.increments(0, j).sum(axis=0) if j else np.zeros((self.K, self.K))
        return -self.increments(j, 0).sum(axis=0)


def sample_path(
    spec: CovarianceSpec,
    grid: Grid,
    t_min: float,
    t_max: float,
    dt: float,
    seed: int,
    antithetic: bool = False,
) -> NoisePath:
    """Noise path covering [t_min, t_max] on steps of size dt.

    Nothing is drawn eagerly; increments are a pure function of
    (seed, absolute step index, mode index).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_min < t_max:
        raise ValueError("t_min must be smaller than t_max")
    lo = int(np.floor(t_min / dt + 1e-9))
    hi = int(np.ceil(t_max / dt - 1e-9))
    return NoisePath(int(seed), float(dt), grid, spec, lo, hi, 0, -1.0 if antithetic else 1.0)


def wiener_shift(path: NoisePath, tau: float) -> NoisePath:
    """theta_tau: the same increments re-indexed so that local 0 sits at old tau."""
    k = round(tau / path.dt)
    if abs(tau / path.dt - k) > 1e-6:
        raise ValueError(f"shift {tau} is not a multiple of dt={path.dt}")
    return replace(path, origin_offset=path.origin_offset + k)


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck field  dz + (-Lap + 1 + b(y)) z dt = dw


@dataclass(frozen=True)
class OUState:
    """OU field as cosine amplitudes (N x N) at a given time."""

    z: np.ndarray
    time: float
    grid: Grid

    def coefficients(self) -> np.ndarray:
        return self.z * basis_norms(self.grid)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.wn * self.z**2)))


class ProfileOp:
    """Multiplication by b(y) on cos-y amplitudes; scalar fast path for constant b."""

    def __init__(self, grid: Grid, b_nodes):
        b = np.broadcast_to(np.asarray(b_nodes, dtype=float), (grid.N,))
        self.nodes = np.array(b)
        self.mean = float(b.mean())
        self.constant = bool(np.all(b == b[0]))
        self.matrix = None if self.constant else grid.profile_matrix(b)
        self.key = self.nodes.tobytes()

    def __call__(self, a: np.ndarray) -> np.ndarray:
        if self.constant:
            return self.mean * a
        return a @ self.matrix.T


def _as_profile(grid: Grid, b) -> ProfileOp:
    return b if isinstance(b, ProfileOp) else ProfileOp(grid, b)


def ou_step(z: OUState, dW: np.ndarray, dt: float, b_profile) -> OUState:
    """z_{n+1} = (I + dt(-Lap + 1))^-1 (z_n - dt b(y) z_n + dW), amplitudes."""
    grid = z.grid
    b = _as_profile(grid, b_profile)
    denom = 1.0 + dt * (grid.lam_neumann + 1.0)
    return OUState((z.z - dt * b(z.z) + dW) / denom, z.time + dt, grid)


def stationary_variance(grid: Grid, cov: CovarianceSpec, b_mean: float) -> np.ndarray:
    """q_k / (2 (lambda_k + 1 + b_mean)) per retained mode (coefficients)."""
    K = cov.cutoff(grid)
    return cov.eigenvalues(grid) / (2.0 * (grid.lam_neumann[:K, :K] + 1.0 + b_mean))


class OUProcess:
    """z(theta_t omega) along one noise source, anchored at its first generated step.

    The anchor is the absolute index ``abs_lo`` of the path, which Wiener
    shifts leave unchanged; hence z at absolute step j is the same whichever
    shifted view asks for it.  States are recomputed from sparse
    checkpoints, each step being the same deterministic recursion.
    """

    CHECKPOINT = 1000

    def __init__(self, path: NoisePath, b_profile):
        self.path = replace(path, origin_offset=0)
        self.grid = path.grid
        self.b = _as_profile(self.grid, b_profile)
        self.dt = path.dt
        self.anchor = path.abs_lo
        self._denom = 1.0 + self.dt * (self.grid.lam_neumann + 1.0)
        self._checkpoints: dict[int, np.ndarray] = {self.anchor: self._initial()}

    def _initial(self) -> np.ndarray:
        grid, K = self.grid, self.path.K
        std = np.sqrt(stationary_variance(grid, self.path.cov, self.b.mean))
        xi = _normals(self.path.seed, _OU_INIT_STREAM, self.anchor, self.anchor + 1, K)[0]
        z = np.zeros((grid.N, grid.N))
        z[:K, :K] = self.path.sign * std * xi / basis_norms(grid)[:K, :K]
        return z

    def _advance(self, z: np.ndarray, dW: np.ndarray) -> np.ndarray:
        return (z - self.dt * self.b(z) + dW) / self._denom

    def at(self, j_abs: int) -> np.ndarray:
        """z at absolute step index j_abs (start of step j_abs)."""
        return next(self.stream(j_abs, j_abs + 1))

    def stream(self, j_abs: int, j_end: int):
        """Yield z at absolute indices j_abs, ..., j_end - 1."""
        if j_abs < self.anchor or j_end - 1 > self.path.abs_hi:
            raise ValueError("requested OU time outside the path window")
        j = max(k for k in self._checkpoints if k <= j_abs)
        z = self._checkpoints[j]
        buf, buf_lo = None, None
        while True:
            if j >= j_abs:
                yield z
            if j + 1 >= j_end:
                return
            if buf is None or j - buf_lo >= len(buf):
                buf_lo = j
                buf = self.path.increment_amplitudes(j, min(j + 256, self.path.abs_hi))
            z = self._advance(z, buf[j - buf_lo])
            j += 1
            if (j - self.anchor) % self.CHECKPOINT == 0 and j not in self._checkpoints:
                self._checkpoints[j] = z


_OU_CACHE: OrderedDict = OrderedDict()


def ou_process(path: NoisePath, b_profile) -> OUProcess:
    """Memoized OUProcess for the path's underlying source (shift-invariant key)."""
    b = _as_profile(path.grid, b_profile)
    key = (path.seed, path.sign, path.dt, path.abs_lo, path.abs_hi, path.grid, path.cov, b.key)
    proc = _OU_CACHE.get(key)
    if proc is None:
        proc = OUProcess(path, b)
        _OU_CACHE[key] = proc
        while len(_OU_CACHE) > 16:
            _OU_CACHE.popitem(last=False)
    else:
        _OU_CACHE.move_to_end(key)
    return proc


def default_spin_up(grid: Grid) -> float:
    """10 / (lambda_min + 1) with lambda_min = 0 for the Neumann spectrum."""
    return 10.0


def ou_stationary(
    path: NoisePath,
    b_profile,
    spin_up: float | None = None,
    t_end: float | None = None,
    stride: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Stationary OU samples z(theta_t omega) on the path grid, t in [0, t_end].

    The recursion starts from a draw of the constant-coefficient stationary
    law (mean of b in place of b(y)) at the path's first step and runs
    through at least ``spin_up`` time units before local t = 0.

    Returns ``(times, z)`` with z of shape (n, N, N) in amplitudes.
    """
    spin_up = default_spin_up(path.grid) if spin_up is None else spin_up
    t_end = path.t_max if t_end is None else t_end
    if path.t_min > -spin_up + 1e-9 * path.dt or not path.covers(0.0, t_end):
        raise ValueError(
            f"path window [{path.t_min}, {path.t_max}] does not cover [-{spin_up}, {t_end}]"
        )
    proc = ou_process(path, b_profile)
    j1 = path.step_index(t_end)
    a0 = path.origin_offset
    zs = [z for i, z in enumerate(proc.stream(a0, a0 + j1 + 1)) if i % stride == 0]
    times = np.arange(0, j1 + 1, stride) * path.dt
    return times, np.array(zs)
