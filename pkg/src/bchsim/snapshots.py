"""Binary field snapshots (CHBK format) and checkpoint sidecars.

CHBK layout, all multi-byte values little-endian:

    bytes 0..3   magic "CHBK"
    uint32       format version (currently 1)
    uint32       d (2 or 3)
    uint32 * d   N_i grid points per axis
    float64 * d  L_i box lengths
    uint32       field count
    per field:
        uint32               name length in bytes
        bytes                UTF-8 name
        float64 * prod(N_i)  samples, row-major (C order)

A checkpoint is a CHBK snapshot holding phi and v_1..v_d plus a JSON sidecar
``<path>.meta.json`` with the scalar stepper state (t, dt, step index, accept
streak, seed).  Restoring phi and v exactly and re-deriving mu/w makes a
resumed run bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigurationError
from .spectral import Grid

MAGIC = b"CHBK"
VERSION = 1


def write_snapshot(path, grid: Grid, fields: dict) -> None:
    d = grid.ndim
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", d))
        fh.write(struct.pack(f"<{d}I", *grid.sizes))
        fh.write(struct.pack(f"<{d}d", *grid.lengths))
        fh.write(struct.pack("<I", len(fields)))
        for name, values in fields.items():
            arr = np.ascontiguousarray(values, dtype="<f8")
            if arr.shape != grid.shape:
                raise ConfigurationError(
                    f"snapshot field '{name}' has shape {arr.shape}, grid is {grid.shape}"
                )
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(arr.tobytes())


def read_snapshot(path):
    """Returns (grid, fields) with fields a dict of name -> ndarray."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigurationError(f"{path}: not a CHBK snapshot")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported CHBK version {version}")
        (d,) = struct.unpack("<I", fh.read(4))
        if d not in (2, 3):
            raise ConfigurationError(f"{path}: bad dimension {d}")
        sizes = struct.unpack(f"<{d}I", fh.read(4 * d))
        lengths = struct.unpack(f"<{d}d", fh.read(8 * d))
        (count,) = struct.unpack("<I", fh.read(4))
        grid = Grid(sizes=sizes, lengths=lengths)
        npoints = int(np.prod(sizes))
        fields = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            raw = fh.read(8 * npoints)
            if len(raw) != 8 * npoints:
                raise ConfigurationError(f"{path}: truncated field '{name}'")
            fields[name] = np.frombuffer(raw, dtype="<f8").reshape(sizes).copy()
    return grid, fields


def state_fields(state) -> dict:
    fields = {"phi": state.phi.values, "mu": state.mu.values, "w": state.w.values}
    for i, comp in enumerate(state.v.components, start=1):
        fields[f"v_{i}"] = comp.values
    return fields


def write_checkpoint(path, state, dt: float, streak: int, seed: int) -> None:
    write_snapshot(path, state.phi.grid, state_fields(state))
    meta = {
        "t": state.t,
        "dt": dt,
        "step_index": state.step_index,
        "streak": streak,
        "seed": seed,
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def read_checkpoint(path):
    """Returns (grid, fields, meta). Raises ConfigurationError without sidecar."""
    grid, fields = read_snapshot(path)
    try:
        with open(str(path) + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: checkpoint sidecar {path}.meta.json is missing")
    for key in ("t", "dt", "step_index", "streak", "seed"):
        if key not in meta:
            raise ConfigurationError(f"{path}: checkpoint sidecar lacks '{key}'")
    return grid, fields, meta
