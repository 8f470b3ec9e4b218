"""Binary on-disk cache for assembled operator matrices.

Layout: 8-byte magic, little-endian uint64 header length, JSON header,
raw float64 payload.  The header repeats every parameter that went into the
assembly so a stale file can be rejected instead of silently reused.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import VPBError

_MAGIC = b"VPBSPEC1"


def cache_dir() -> Path | None:
    """Cache root from VPB_SPECTRAL_CACHE; None disables caching."""
    root = os.environ.get("VPB_SPECTRAL_CACHE", "").strip()
    if not root:
        return None
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def key_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_matrix(path: Path, header: dict, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    head = dict(header)
    head["shape"] = list(matrix.shape)
    head["dtype"] = "float64"
    blob = json.dumps(head, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(matrix.tobytes())
    os.replace(tmp, path)


def read_matrix(path: Path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise VPBError(f"{path}: not an operator cache file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype=np.float64)
    shape = tuple(header.get("shape", ()))
    if data.size != int(np.prod(shape)):
        raise VPBError(f"{path}: truncated payload")
    return header, data.reshape(shape).copy()
