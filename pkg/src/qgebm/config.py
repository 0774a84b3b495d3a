"""Run configuration: JSON schema, presets, validation and model construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, make_grid
from .model import ForcingProfiles, Model, PhysParams
from .noise import CovarianceSpec, NoisePath, sample_path

__all__ = [
    "ConfigError",
    "RunConfig",
    "PRESETS",
    "load_config",
    "config_from_dict",
    "apply_override",
]


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    l: float = 1.0
    N: int = 64


@dataclass
class PhysicsConfig:
    a: float = 0.1
    nu: float = 1.0
    r: float = 1.0
    beta: float = 1.0
    Pr: float = 1.0
    Ra: float = 10.0
    kappa: float = 1.0


@dataclass
class ProfileConfig:
    """``cosine``: offset - amplitude cos(pi y/l) (b) or amplitude cos(pi y/l) (S).

    ``table``: node values, length N for b and N x N for S_a, S_o.
    """

    kind: str = "cosine"
    offset: float = 0.0
    amplitude: float = 0.0
    values: list | None = None


def _b_default():
    return ProfileConfig("cosine", 0.5, 0.4)


def _s_default():
    return ProfileConfig("cosine", 0.0, 0.1)


@dataclass
class ProfilesConfig:
    b: ProfileConfig = field(default_factory=_b_default)
    S_a: ProfileConfig = field(default_factory=_s_default)
    S_o: ProfileConfig = field(default_factory=_s_default)


@dataclass
class NoiseConfig:
    sigma2: float = 1e-3
    s_q: float = 2.0
    K: int | None = None
    seed: int = 0


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    t_start: float = 0.0
    t_end: float = 1.0
    stride: int = 100
    cfl_bound: float = 0.5


@dataclass
class ExperimentConfig:
    observables: list = field(default_factory=lambda: ["energy_H", "theta_L2sq", "q_L2sq", "kinetic"])
    # cocycle
    cocycle_cases: int = 20
    # dissipativity / absorption
    ic_energies: list = field(default_factory=lambda: [1.0, 1e2, 1e4])
    ic_per_level: int = 2
    horizon: float = 8.0
    absorb_tolerance: float = 1.05
    # attractor
    pullback_times: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 8.0, 16.0])
    # contraction / fixed point
    n_windows: int = 100
    window: float = 1.0
    warmup_windows: int = 5
    n_pairs: int = 4
    n_starts: int = 8
    t_sync: float = 50.0
    # ergodicity
    t_long: float = 500.0
    burn_in: float = 50.0
    ensemble_size: int = 64
    t_snapshot: float = 100.0
    # bounds
    sigma2_sweep: list = field(default_factory=lambda: [0.0, 1e-4, 1e-3, 1e-2])
    bounds_members: int = 32
    bounds_t_end: float = 10.0


@dataclass
class RunConfig:
    preset: str = "custom"
    grid: GridConfig = field(default_factory=GridConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    profiles: ProfilesConfig = field(default_factory=ProfilesConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    # -- construction helpers ---------------------------------------------

    def make_grid(self) -> Grid:
        return make_grid(self.grid.l, self.grid.N)

    def params(self) -> PhysParams:
        return PhysParams(l=self.grid.l, **asdict(self.physics))

    def forcing_profiles(self, grid: Grid | None = None) -> ForcingProfiles:
        grid = grid or self.make_grid()
        return ForcingProfiles(
            grid,
            _profile_nodes(self.profiles.b, grid, "b"),
            _profile_nodes(self.profiles.S_a, grid, "S_a"),
            _profile_nodes(self.profiles.S_o, grid, "S_o"),
        )

    def covariance(self, sigma2: float | None = None) -> CovarianceSpec:
        s2 = self.noise.sigma2 if sigma2 is None else sigma2
        return CovarianceSpec(sigma2=s2, s_q=self.noise.s_q, K=self.noise.K)

    def model(self, **kw) -> Model:
        grid = self.make_grid()
        return Model(grid, self.params(), self.forcing_profiles(grid),
                     cfl_bound=self.integrator.cfl_bound, **kw)

    def path(self, seed: int, t_min: float, t_max: float, sigma2: float | None = None,
             antithetic: bool = False) -> NoisePath:
        return sample_path(self.covariance(sigma2), self.make_grid(), t_min, t_max,
                           self.integrator.dt, seed, antithetic=antithetic)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def validate(self) -> RunConfig:
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")
        try:
            grid = self.make_grid()
        except ValueError as e:
            raise ConfigError(f"grid: {e}") from None
        try:
            self.params()
        except ValueError as e:
            raise ConfigError(f"physics: {e}") from None
        try:
            self.forcing_profiles(grid)
        except ValueError as e:
            raise ConfigError(f"profiles: {e}") from None
        try:
            self.covariance()
        except ValueError as e:
            raise ConfigError(f"noise: {e}") from None
        it = self.integrator
        if not it.dt > 0:
            raise ConfigError("integrator.dt: must be positive")
        if it.t_end < it.t_start:
            raise ConfigError("integrator.t_end: must not precede t_start")
        if it.stride < 1:
            raise ConfigError("integrator.stride: must be at least 1")
        if not 0 <= self.noise.seed < 2**64:
            raise ConfigError("noise.seed: must be an unsigned 64-bit integer")
        return self


def _profile_nodes(pc: ProfileConfig, grid: Grid, name: str) -> np.ndarray:
    if pc.kind == "cosine":
        if name == "b":
            return pc.offset - pc.amplitude * np.cos(np.pi * grid.y / grid.l)
        X, Y = grid.mesh
        return pc.offset + pc.amplitude * np.cos(np.pi * Y / grid.l)
    if pc.kind == "table":
        if pc.values is None:
            raise ValueError(f"{name}: table profile needs values")
        v = np.asarray(pc.values, dtype=float)
        want = (grid.N,) if name == "b" else (grid.N, grid.N)
        if v.shape != want:
            raise ValueError(f"{name}: table has shape {v.shape}, expected {want}")
        return v
    raise ValueError(f"{name}: unknown profile kind {pc.kind!r}")


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    "custom": {},
    "laminar": {
        "physics": {"nu": 2.0, "kappa": 2.0, "a": 1e-3},
        "profiles": {"S_a": {"amplitude": 1e-3}, "S_o": {"amplitude": 1e-3}},
        "noise": {"sigma2": 1e-4},
    },
    # violates 4 nu r > beta^2 l^2 / pi^2, large data and noise
    "turbulent": {
        "physics": {"nu": 0.05, "r": 0.05, "beta": 2.0, "kappa": 0.05, "a": 0.5, "Ra": 50.0},
        "profiles": {"S_a": {"amplitude": 0.5}, "S_o": {"amplitude": 0.5}},
        "noise": {"sigma2": 0.1},
    },
}


# ---------------------------------------------------------------------------
# dict <-> dataclass, fail-closed


def _merge(obj, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    names = {f.name: f for f in fields(obj)}
    for key, val in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"unknown key {path!r}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            _merge(cur, val, path)
        else:
            setattr(obj, key, _coerce(cur, val, names[key], path))
    return obj


def _coerce(cur, val, f, path):
    if isinstance(cur, bool) or isinstance(val, bool):
        if not isinstance(val, bool) or not isinstance(cur, bool):
            raise ConfigError(f"{path}: expected {type(cur).__name__}, got {val!r}")
        return val
    if isinstance(cur, int) and not isinstance(cur, bool):
        if isinstance(val, float) and val.is_integer():
            val = int(val)
        if not isinstance(val, int):
            raise ConfigError(f"{path}: expected an integer, got {val!r}")
        return val
    if isinstance(cur, float):
        if not isinstance(val, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {val!r}")
        return float(val)
    if isinstance(cur, str):
        if not isinstance(val, str):
            raise ConfigError(f"{path}: expected a string, got {val!r}")
        return val
    if isinstance(cur, list):
        if not isinstance(val, list):
            raise ConfigError(f"{path}: expected a list, got {val!r}")
        return val
    # optional fields (None default)
    if val is not None and f.name == "K" and not isinstance(val, int):
        raise ConfigError(f"{path}: expected an integer or null, got {val!r}")
    return val


def config_from_dict(data: dict, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then preset, then ``data``, then ``key=value`` overrides."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    preset = data.get("preset", "custom")
    for o in overrides or []:
        if o.split("=", 1)[0].strip() == "preset":
            preset = o.split("=", 1)[1].strip()
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    cfg = RunConfig()
    _merge(cfg, {**PRESETS[preset], "preset": preset}, "")
    _merge(cfg, data, "")
    cfg.preset = preset
    for o in overrides or []:
        apply_override(cfg, o)
    return cfg.validate()


def apply_override(cfg: RunConfig, spec: str) -> RunConfig:
    """Apply ``section.key=value``; the value is JSON, else a bare string."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r}: expected key=value")
    key, raw = (s.strip() for s in spec.split("=", 1))
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    if key == "preset":
        return cfg
    parts = key.split(".")
    nested: dict = {}
    d = nested
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = val
    _merge(cfg, nested, "")
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return config_from_dict(data, overrides)
