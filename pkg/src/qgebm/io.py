"""Time-series CSV and binary field snapshots."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import Grid
from .model import State

__all__ = ["SnapshotError", "write_timeseries", "write_snapshot", "read_snapshot", "SNAPSHOT_VERSION"]

MAGIC = b"QGEB"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIId")  # magic, version, N, l


class SnapshotError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_timeseries(path, times, values: dict | None = None) -> Path:
    """CSV with a ``time`` column followed by one column per observable."""
    path = Path(path)
    values = values or {}
    names = list(values)
    cols = [np.asarray(values[k], dtype=float).reshape(len(times), -1) for k in names]
    header = ["time"]
    for k, c in zip(names, cols):
        header += [k] if c.shape[1] == 1 else [f"{k}[{i}]" for i in range(c.shape[1])]
    lines = [",".join(header)]
    for i, t in enumerate(times):
        row = [_fmt(t)]
        for c in cols:
            row += [_fmt(v) for v in c[i]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_snapshot(path, state: State) -> Path:
    """Header (magic, u32 version, u32 N, f64 l) then Theta, q, T node values."""
    if state.batch_shape:
        raise ValueError("snapshots hold a single state")
    g = state.grid
    body = b"".join(np.ascontiguousarray(f, dtype="<f8").tobytes() for f in state.physical())
    path = Path(path)
    path.write_bytes(_HEADER.pack(MAGIC, SNAPSHOT_VERSION, g.N, g.l) + body)
    return path


def read_snapshot(path) -> tuple[Grid, np.ndarray, np.ndarray, np.ndarray]:
    """Return the grid and the (Theta, q, T) node arrays exactly as written."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC[: len(data)]:
        raise SnapshotError("not a QGEB file")
    if len(data) < _HEADER.size:
        raise SnapshotError("unexpected end of snapshot header")
    magic, version, N, l = _HEADER.unpack_from(data)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot version mismatch: file {version}, reader {SNAPSHOT_VERSION}")
    n = N * N * 8
    if len(data) < _HEADER.size + 3 * n:
        raise SnapshotError("unexpected end of snapshot data")
    arrs = [
        np.frombuffer(data, dtype="<f8", count=N * N, offset=_HEADER.size + i * n).reshape(N, N).astype(float)
        for i in range(3)
    ]
    return Grid(l, N), *arrs


def load_state(path) -> State:
    """Snapshot back to a spectral State (T projected to zero mean)."""
    grid, th, q, T = read_snapshot(path)
    return State.from_physical(grid, th, q, T)
