"""Checkpoints, run manifests and energy time series.

Checkpoint byte layout (all little-endian)::

    magic    8 bytes   b"VNSD0001"
    header  68 bytes   3 x u64 points, 3 x f64 periods, f64 time, f64 mu, u32 field count
    fields             per field: u16 name length, name (ASCII), N f64 values (C order)
    crc      4 bytes   CRC-32 (IEEE) of every preceding byte

Fields are ``u0 u1 u2 F00 F01 ... F22 p``.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from . import grid_fields as gf
from .grid_fields import Grid

MAGIC = b"VNSD0001"
HEADER = struct.Struct("<3Q3dddI")
NAME_LEN = struct.Struct("<H")
CRC = struct.Struct("<I")
FIELD_NAMES = ("u0", "u1", "u2") + tuple(f"F{i}{j}" for i in range(3) for j in range(3)) + ("p",)
CONSTRAINT_TOL = 1e-10
TIMESERIES_COLUMNS = ("t", "kinetic", "elastic", "diss_u", "diss_F", "residual", "div_u_max", "divFt_l2")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CRCMismatchError(CheckpointError):
    pass


class ConstraintError(CheckpointError):
    pass


def checkpoint_size(points, names=FIELD_NAMES) -> int:
    n = int(np.prod(points))
    return len(MAGIC) + HEADER.size + sum(NAME_LEN.size + len(s) + 8 * n for s in names) + CRC.size


def _state_arrays(state):
    arrs = [state.u[i] for i in range(3)] + [state.F[i, j] for i in range(3) for j in range(3)] + [state.p]
    return dict(zip(FIELD_NAMES, arrs))


def checkpoint_bytes(state) -> bytes:
    g = state.grid
    parts = [MAGIC, HEADER.pack(*g.points, *g.periods, state.time, state.mu, len(FIELD_NAMES))]
    for name, a in _state_arrays(state).items():
        b = name.encode("ascii")
        parts.append(NAME_LEN.pack(len(b)))
        parts.append(b)
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def state_from_bytes(data: bytes, verify: bool = True):
    """Parse a checkpoint; ``verify`` re-checks the solenoidal constraints."""
    from .solver import State

    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a VNSD0001 checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + HEADER.size:
        raise TruncatedCheckpointError("truncated checkpoint: incomplete header")
    nx, ny, nz, lx, ly, lz, time, mu, count = HEADER.unpack_from(data, pos)
    pos += HEADER.size
    n = nx * ny * nz
    arrays = {}
    for _ in range(count):
        if len(data) < pos + NAME_LEN.size:
            raise TruncatedCheckpointError("truncated checkpoint: incomplete field name")
        (ln,) = NAME_LEN.unpack_from(data, pos)
        pos += NAME_LEN.size
        if len(data) < pos + ln + 8 * n:
            raise TruncatedCheckpointError("truncated checkpoint: incomplete field data")
        name = data[pos: pos + ln].decode("ascii", errors="replace")
        pos += ln
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(float).reshape(nx, ny, nz)
        pos += 8 * n
    if len(data) < pos + CRC.size:
        raise TruncatedCheckpointError("truncated checkpoint: missing CRC")
    (stored,) = CRC.unpack_from(data, pos)
    if len(data) != pos + CRC.size or zlib.crc32(data[:pos]) & 0xFFFFFFFF != stored:
        raise CRCMismatchError("CRC mismatch: checkpoint is corrupted")
    missing = [k for k in FIELD_NAMES if k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks fields {missing}")
    grid = Grid((nx, ny, nz), (lx, ly, lz))
    u = np.stack([arrays[f"u{i}"] for i in range(3)])
    F = np.stack([np.stack([arrays[f"F{i}{j}"] for j in range(3)]) for i in range(3)])
    state = State(grid, time, u, F, mu, p=arrays["p"])
    if verify:
        du = gf.divergence_error(grid, u)
        dF = gf.column_divergence_error(grid, F)
        if du > CONSTRAINT_TOL or dF > CONSTRAINT_TOL:
            raise ConstraintError(f"constraint check failed on load: div u {du:.3e}, column div F {dF:.3e}")
    return state


def write_checkpoint(state, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(checkpoint_bytes(state))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc


def read_checkpoint(path, verify: bool = True):
    return state_from_bytes(Path(path).read_bytes(), verify)


# -- time series ------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def append_timeseries(path, budget) -> None:
    """Append one budget row, writing the header if the file is new or empty."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a") as fh:
        if new:
            fh.write(",".join(TIMESERIES_COLUMNS) + "\n")
        fh.write(",".join(_fmt(v) for v in budget.row()) + "\n")


def read_timeseries(path) -> np.ndarray:
    """Rows up to the last complete line, as an ``(n, 8)`` array."""
    text = Path(path).read_text()
    lines = text.split("\n")
    if not text.endswith("\n"):
        lines = lines[:-1]
    rows = [ln for ln in lines[1:] if ln]
    return np.array([[float(x) for x in ln.split(",")] for ln in rows]).reshape(-1, len(TIMESERIES_COLUMNS))


# -- manifests -----------------------------------------------------------------------

SCHEME = "integrating-factor AB2, midpoint start, 2/3 dealiasing"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_items(config) -> list:
    """Flatten a SolverConfig into ``(key, value)`` text pairs."""
    items = []
    for f in dc_fields(config):
        v = getattr(config, f.name)
        if f.name == "initial":
            items += [(f"initial.{g.name}", str(getattr(v, g.name))) for g in dc_fields(v)]
        elif f.name == "forcing":
            items.append(("solver.forcing", getattr(v, "name", "none") if v is not None else "none"))
        elif isinstance(v, tuple):
            items.append((f"solver.{f.name}", ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)))
        else:
            items.append((f"solver.{f.name}", repr(v) if isinstance(v, float) else str(v)))
    return items


def write_manifest(path, config, initial_checkpoint) -> None:
    lines = [f"{k}={v}" for k, v in config_items(config)]
    lines += [
        f"seed={config.seed}",
        f"scheme={SCHEME}",
        f"dt={config.dt!r}",
        f"version={__version__}",
        f"initial_checkpoint={Path(initial_checkpoint).name}",
        f"initial_sha256={file_sha256(initial_checkpoint)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
