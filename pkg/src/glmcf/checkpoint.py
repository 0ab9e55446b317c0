"""Binary checkpoints of a GraphState.

Layout (little-endian): magic ``b"GLMCF01\\n"``, uint32 version, uint32 n,
uint32 N, float64 t, then c (n doubles), phi_hat and u (N^n doubles each,
C order, axis 0 slowest).  Run metadata needed to resume lives in a JSON
sidecar next to the binary file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .angle import GraphState

MAGIC = b"GLMCF01\n"
VERSION = 1
_HEADER = struct.Struct("<8sIIId")


def encode_state(state: GraphState) -> bytes:
    u = np.ascontiguousarray(state.u, dtype="<f8")
    n = u.ndim
    N = u.shape[0]
    if u.shape != (N,) * n or np.shape(state.base_potential) != u.shape:
        raise ValueError("potentials must share a cubic grid shape")
    c = np.ascontiguousarray(state.harmonic, dtype="<f8")
    if c.shape != (n,):
        raise ValueError(f"harmonic coefficients must have length {n}")
    phi = np.ascontiguousarray(state.base_potential, dtype="<f8")
    return _HEADER.pack(MAGIC, VERSION, n, N, float(state.t)) + c.tobytes() + phi.tobytes() + u.tobytes()


def decode_state(blob: bytes, u0_anchor: float = 0.0) -> GraphState:
    if len(blob) < _HEADER.size:
        raise ValueError("checkpoint truncated")
    magic, version, n, N, t = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if n not in (1, 2, 3):
        raise ValueError(f"bad dimension {n} in checkpoint")
    size = N ** n
    expected = _HEADER.size + 8 * (n + 2 * size)
    if len(blob) != expected:
        raise ValueError(f"checkpoint size {len(blob)} != expected {expected}")
    off = _HEADER.size
    c = np.frombuffer(blob, "<f8", n, off).astype(float)
    off += 8 * n
    phi = np.frombuffer(blob, "<f8", size, off).reshape((N,) * n).astype(float)
    off += 8 * size
    u = np.frombuffer(blob, "<f8", size, off).reshape((N,) * n).astype(float)
    return GraphState(c, phi, u, float(t), float(u0_anchor))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path: str | os.PathLike, state: GraphState, meta: dict | None = None) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_state(state))
    meta = dict(meta or {})
    meta["u0_anchor"] = state.u0_anchor
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[GraphState, dict]:
    path = Path(path)
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    state = decode_state(path.read_bytes(), float(meta.get("u0_anchor", 0.0)))
    return state, meta
