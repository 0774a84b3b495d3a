"""Sine/cosine spectral discretization of the square basin [0, l]^2.

Fields are sampled on a cell-centred grid x_i = (i + 1/2) l / N.  Neumann
fields are expanded in cos(m pi x / l) cos(n pi y / l), m, n = 0 .. N-1, and
Dirichlet fields in sin(m pi x / l) sin(n pi y / l), m, n = 1 .. N.  Both
expansions are exact on the shared node set (DCT-II / DST-II), so products
of fields of either type can be formed pointwise on one physical grid.

Spectral coefficients are *amplitudes*: a field equals
``sum a[m, n] phi_m(x) phi_n(y)`` with unnormalized trig basis functions.
The discrete L2 norm is therefore

    ||f||^2 = (l^2 / 4) sum w_m w_n a[m, n]^2

with w = 2 for the cosine zero mode and for the sine mode m = N (which
samples to +-1 on the nodes), w = 1 otherwise.  This is Parseval for the
quadrature ``h^2 sum f_ij^2`` and holds to rounding.

Arrays are indexed ``[..., ix, iy]``; any leading axes are batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft

__all__ = [
    "Grid",
    "ScalarField",
    "LinearY",
    "make_grid",
    "to_spectral",
    "to_physical",
    "laplacian",
    "invert_vorticity",
    "gradient",
    "jacobian",
    "project",
    "poincare_lambda0",
    "l2_inner",
    "l2_norm",
    "spectral_norm",
    "BC_PARITY",
]

COS, SIN = "cos", "sin"
BC_PARITY = {"neumann": (COS, COS), "dirichlet": (SIN, SIN)}

_workers: int | None = None


def set_fft_workers(n: int | None) -> None:
    """Cap the thread count used by the transforms (``None``: scipy default)."""
    global _workers
    _workers = n


# ---------------------------------------------------------------------------
# 1D building blocks (work along an arbitrary axis)


def _modes(kind: str, length: int) -> np.ndarray:
    return np.arange(length) if kind == COS else np.arange(1, length + 1)


def _synth_scale(kind: str, length: int, M: int) -> np.ndarray:
    s = np.full(length, float(M))
    if kind == COS:
        s[0] *= 2.0
    elif length >= M:
        s[M - 1] *= 2.0
    return s


def _along(vec: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = vec.size
    return vec.reshape(shape)


# Below this many nodes a transform along one of the last two axes is a
# dense matrix product, which beats the FFT call overhead.
DENSE_MAX = 64


@lru_cache(maxsize=128)
def _basis(kind: str, L: int, M: int) -> np.ndarray:
    """(M, L) basis values at the M cell-centred nodes, read-only."""
    x = (np.arange(M) + 0.5) / M
    arg = np.pi * np.outer(x, _modes(kind, L))
    B = np.cos(arg) if kind == COS else np.sin(arg)
    B.flags.writeable = False
    return B


@lru_cache(maxsize=128)
def _analysis(kind: str, L: int, M: int) -> np.ndarray:
    """(L, M) matrix mapping node values to the first L amplitudes."""
    A = _basis(kind, L, M).T * (2.0 / _synth_scale(kind, L, M))[:, None]
    A.flags.writeable = False
    return A


def _apply(mat: np.ndarray, a: np.ndarray, axis: int) -> np.ndarray:
    if axis == a.ndim - 1:
        if a.flags.c_contiguous:
            return (a.reshape(-1, a.shape[-1]) @ mat.T).reshape(a.shape[:-1] + (mat.shape[0],))
        return a @ mat.T
    return mat @ a


def synth_axis(a: np.ndarray, kind: str, M: int, axis: int) -> np.ndarray:
    """Evaluate a compact amplitude series at M cell-centred nodes."""
    axis = axis % a.ndim
    L = a.shape[axis]
    if L > M:
        a = np.take(a, np.arange(M), axis=axis)
        L = M
    if M <= DENSE_MAX and axis >= a.ndim - 2:
        return _apply(_basis(kind, L, M), a, axis)
    y = a * _along(_synth_scale(kind, L, M), axis, a.ndim)
    if kind == COS:
        return fft.idct(y, type=2, n=M, axis=axis, workers=_workers)
    return fft.idst(y, type=2, n=M, axis=axis, workers=_workers)


def analyze_axis(f: np.ndarray, kind: str, L: int, axis: int) -> np.ndarray:
    """Amplitudes of the first L modes of nodal data along ``axis``."""
    axis = axis % f.ndim
    M = f.shape[axis]
    n = min(L, M)
    if M <= DENSE_MAX and axis >= f.ndim - 2:
        y = _apply(_analysis(kind, n, M), f, axis)
    else:
        if kind == COS:
            y = fft.dct(f, type=2, axis=axis, workers=_workers)
        else:
            y = fft.dst(f, type=2, axis=axis, workers=_workers)
        y = np.take(y, np.arange(n), axis=axis)
        y = y / _along(_synth_scale(kind, n, M), axis, f.ndim)
    if n < L:
        pad = [(0, 0)] * f.ndim
        pad[axis] = (0, L - n)
        y = np.pad(y, pad)
    return y


def synth2(a: np.ndarray, parity: tuple[str, str], M: int) -> np.ndarray:
    return synth_axis(synth_axis(a, parity[0], M, -2), parity[1], M, -1)


def analyze2(f: np.ndarray, parity: tuple[str, str], L: int) -> np.ndarray:
    return analyze_axis(analyze_axis(f, parity[0], L, -2), parity[1], L, -1)


def galerkin_cos_to_sin(n_out: int, n_in: int) -> np.ndarray:
    """L2 projection matrix taking cos modes 0..n_in-1 to sin modes 1..n_out.

    Entry [p, m] is (2/l) * integral of cos(m pi x/l) sin((p+1) pi x/l) over
    [0, l]; it does not depend on l.
    """
    s = np.arange(1, n_out + 1)[:, None].astype(float)
    c = np.arange(n_in)[None, :].astype(float)
    odd = (s + c) % 2 == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(odd, (2.0 / np.pi) * 2.0 * s / (s**2 - c**2), 0.0)
    return P


def galerkin_sin_to_cos(n_out: int, n_in: int) -> np.ndarray:
    """L2 projection matrix taking sin modes 1..n_in to cos modes 0..n_out-1."""
    c = np.arange(n_out)[:, None].astype(float)
    s = np.arange(1, n_in + 1)[None, :].astype(float)
    odd = (s + c) % 2 == 1
    norm = np.where(c == 0, 1.0, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where(odd, (2.0 * s / (np.pi * (s**2 - c**2))) / norm, 0.0)
    return Q


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Square grid of N x N cell-centred nodes on [0, l]^2."""

    l: float
    N: int

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError("l must be positive")
        if int(self.N) != self.N or self.N % 2:
            raise ValueError("N must be even")
        if self.N < 8:
            raise ValueError("N must be at least 8")

    @property
    def h(self) -> float:
        return self.l / self.N

    @property
    def spacing(self) -> float:
        return self.h

    @property
    def M(self) -> int:
        """Padded node count for dealiased products (3/2 rule)."""
        return 3 * self.N // 2

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    @property
    def y(self) -> np.ndarray:
        return self.x

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def quadrature_weight(self) -> float:
        return self.h**2

    def wavenumbers(self, kind: str, length: int | None = None) -> np.ndarray:
        length = self.N if length is None else length
        return _modes(kind, length) * np.pi / self.l

    def eigenvalues(self, parity: tuple[str, str]) -> np.ndarray:
        kx = self.wavenumbers(parity[0])
        ky = self.wavenumbers(parity[1])
        return kx[:, None] ** 2 + ky[None, :] ** 2

    @cached_property
    def lam_neumann(self) -> np.ndarray:
        return self.eigenvalues((COS, COS))

    @cached_property
    def lam_dirichlet(self) -> np.ndarray:
        return self.eigenvalues((SIN, SIN))

    def weights(self, kind: str) -> np.ndarray:
        w = np.ones(self.N)
        w[0 if kind == COS else -1] = 2.0
        return w

    def norm_weights(self, parity: tuple[str, str]) -> np.ndarray:
        """Per-coefficient factors turning squared amplitudes into ||f||^2."""
        return (self.l**2 / 4.0) * np.outer(self.weights(parity[0]), self.weights(parity[1]))

    @cached_property
    def wn(self) -> np.ndarray:
        return self.norm_weights((COS, COS))

    @cached_property
    def wd(self) -> np.ndarray:
        return self.norm_weights((SIN, SIN))

    @cached_property
    def cos_to_sin(self) -> np.ndarray:
        """Galerkin projection, cos modes 0..N onto sin modes 1..N."""
        return galerkin_cos_to_sin(self.N, self.N + 1)

    @cached_property
    def sin_to_cos(self) -> np.ndarray:
        return galerkin_sin_to_cos(self.N, self.N)

    def profile_matrix(self, b_nodes: np.ndarray) -> np.ndarray:
        """Galerkin matrix of multiplication by b(y) acting on cos-y amplitudes.

        b is taken to be the cosine interpolant of its nodal values, so the
        product with any cos mode < N is resolved exactly on the padded grid.
        Apply as ``a @ B.T`` along the last axis.
        """
        b_nodes = np.asarray(b_nodes, dtype=float)
        bhat = analyze_axis(b_nodes, COS, self.N, -1)
        b_fine = synth_axis(bhat, COS, self.M, -1)
        basis = synth_axis(np.eye(self.N), COS, self.M, -1)  # row n: cos mode n
        return analyze_axis(basis * b_fine[None, :], COS, self.N, -1).T

    def __repr__(self):
        return f"Grid(l={self.l!r}, N={self.N})"


def make_grid(l: float, N: int) -> Grid:
    """Build a grid; rejects odd N, N < 8 and non-positive l."""
    return Grid(float(l), int(N))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearY:
    """The unbounded profile c * y (e.g. the planetary vorticity beta y)."""

    slope: float


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    bc: str | None
    representation: str = "physical"
    parity: tuple[str, str] | None = field(default=None)

    def __post_init__(self):
        if self.parity is None:
            if self.bc not in BC_PARITY:
                raise ValueError(f"bc_tag missing or unknown: {self.bc!r}")
            object.__setattr__(self, "parity", BC_PARITY[self.bc])
        elif self.bc is None:
            tag = {v: k for k, v in BC_PARITY.items()}.get(tuple(self.parity), "mixed")
            object.__setattr__(self, "bc", tag)
        if self.representation not in ("physical", "spectral"):
            raise ValueError(f"unknown representation {self.representation!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def from_function(cls, grid: Grid, fn, bc: str) -> ScalarField:
        X, Y = grid.mesh
        return cls(grid, np.broadcast_to(fn(X, Y), X.shape).astype(float), bc)

    @classmethod
    def zeros(cls, grid: Grid, bc: str, representation: str = "spectral") -> ScalarField:
        return cls(grid, np.zeros((grid.N, grid.N)), bc, representation)

    @property
    def spectral(self) -> np.ndarray:
        return to_spectral(self).values

    @property
    def physical(self) -> np.ndarray:
        return to_physical(self).values

    def with_values(self, values, representation=None) -> ScalarField:
        return replace(self, values=values, representation=representation or self.representation)

    def __add__(self, other: ScalarField) -> ScalarField:
        _check_same(self, other)
        if self.parity != other.parity:
            raise ValueError("cannot add fields of different parity")
        return self.with_values(self.spectral + other.spectral, "spectral")

    def __sub__(self, other: ScalarField) -> ScalarField:
        return self + other.scale(-1.0)

    def scale(self, c: float) -> ScalarField:
        return self.with_values(c * self.values)


def _check_same(f: ScalarField, g: ScalarField) -> None:
    if f.grid != g.grid:
        raise ValueError("grid mismatch")


def to_spectral(f: ScalarField) -> ScalarField:
    if f.bc is None:
        raise ValueError("bc_tag missing")
    if f.representation == "spectral":
        return f
    return f.with_values(analyze2(f.values, f.parity, f.grid.N), "spectral")


def to_physical(f: ScalarField) -> ScalarField:
    if f.bc is None:
        raise ValueError("bc_tag missing")
    if f.representation == "physical":
        return f
    return f.with_values(synth2(f.values, f.parity, f.grid.N), "physical")


def laplacian(f: ScalarField) -> ScalarField:
    s = to_spectral(f)
    return s.with_values(-f.grid.eigenvalues(f.parity) * s.values)


def invert_vorticity(q: ScalarField) -> ScalarField:
    """Streamfunction psi with Laplacian(psi) = q and psi = 0 on the boundary."""
    if q.bc != "dirichlet":
        raise ValueError("vorticity must carry the dirichlet tag")
    s = to_spectral(q)
    return s.with_values(-s.values / q.grid.lam_dirichlet)


def _diff_axis(a: np.ndarray, kind: str, grid: Grid, axis: int, extend: bool):
    """Differentiate compact amplitudes along one axis; returns (array, new kind).

    cos -> sin keeps length N (the top sine slot is zero).  sin -> cos yields
    modes 0..N; with ``extend`` False the cos mode N, which vanishes on the
    nodes, is dropped.
    """
    axis = axis % a.ndim
    N = a.shape[axis]
    a = np.moveaxis(a, axis, -1)
    if kind == COS:
        k = grid.wavenumbers(SIN, N)[: N - 1]
        out = np.zeros_like(a)
        out[..., : N - 1] = -k * a[..., 1:]
        new = SIN
    else:
        k = grid.wavenumbers(SIN, N)
        out = np.zeros(a.shape[:-1] + (N + 1,))
        out[..., 1:] = k * a
        if not extend:
            out = out[..., :N]
        new = COS
    return np.moveaxis(out, -1, axis), new


def gradient(f: ScalarField, axis: str) -> ScalarField:
    """Spectral derivative along 'x' or 'y'; the result has mixed parity."""
    ax = {"x": -2, "y": -1}[axis]
    s = to_spectral(f)
    vals, kind = _diff_axis(s.values, f.parity[ax], f.grid, ax, extend=False)
    parity = list(f.parity)
    parity[ax] = kind
    return ScalarField(f.grid, vals, None, "spectral", tuple(parity))


def _padded_derivs(f: ScalarField):
    """(f_x, f_y) evaluated on the 3/2-padded node set."""
    s = to_spectral(f)
    out = []
    for ax in (-2, -1):
        vals, kind = _diff_axis(s.values, f.parity[ax], f.grid, ax, extend=True)
        parity = list(f.parity)
        parity[ax] = kind
        out.append(synth2(vals, tuple(parity), f.grid.M))
    return out


def jacobian(g: ScalarField, h: ScalarField | LinearY) -> ScalarField:
    """J(g, h) = g_x h_y - g_y h_x, dealiased on the 3/2-padded grid.

    For g, h of equal tag the product is a sine-sine series, otherwise a
    cosine-cosine one; the result is truncated to N modes in that basis.
    ``h = LinearY(c)`` gives c * g_x exactly, in mixed parity.
    """
    if isinstance(h, LinearY):
        return gradient(g, "x").scale(h.slope)
    _check_same(g, h)
    gx, gy = _padded_derivs(g)
    hx, hy = _padded_derivs(h)
    prod = gx * hy - gy * hx
    out_bc = "dirichlet" if g.parity == h.parity else "neumann"
    if {g.bc, h.bc} - {"dirichlet", "neumann"}:
        raise ValueError("jacobian needs dirichlet or neumann inputs")
    return ScalarField(g.grid, analyze2(prod, BC_PARITY[out_bc], g.grid.N), out_bc, "spectral")


def project(f: ScalarField, bc: str) -> ScalarField:
    """L2 (Galerkin) projection onto the declared basis, axis by axis."""
    target = BC_PARITY[bc]
    s = to_spectral(f)
    a = s.values
    grid = f.grid
    for ax, (have, want) in enumerate(zip(f.parity, target)):
        if have == want:
            continue
        P = grid.cos_to_sin[:, : grid.N] if want == SIN else grid.sin_to_cos
        a = np.moveaxis(np.tensordot(P, np.moveaxis(a, ax - 2, 0), axes=(1, 0)), 0, ax - 2)
    return ScalarField(grid, a, bc, "spectral")


def poincare_lambda0(grid: Grid, bc: str) -> float:
    """Smallest admissible Laplacian eigenvalue (Neumann: on zero-mean fields)."""
    if bc == "dirichlet":
        return 2.0 * np.pi**2 / grid.l**2
    if bc in ("neumann", "neumann-zero-mean"):
        return np.pi**2 / grid.l**2
    raise ValueError(f"unknown bc {bc!r}")


def l2_inner(f: ScalarField, g: ScalarField) -> float:
    """Discrete L2 inner product with quadrature weight h^2."""
    _check_same(f, g)
    return float(f.grid.quadrature_weight * np.sum(to_physical(f).values * to_physical(g).values))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def spectral_norm(f: ScalarField) -> float:
    s = to_spectral(f)
    return float(np.sqrt(np.sum(f.grid.norm_weights(f.parity) * s.values**2)))
