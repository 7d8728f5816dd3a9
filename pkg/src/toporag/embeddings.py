"""Embedding matrices, cosine helpers and the binary embedding file format.

File layout (little-endian): magic ``b"TPRG"``, one kind byte, ``N`` and
``d`` as int64, then ``N*d`` float64 values row-major. A JSON sidecar
(``<file>.json``) carries the kind, shape and config fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TPRG"
KINDS = ("proximity", "role", "text")
_HEADER = struct.Struct("<4sBqq")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    rows: np.ndarray
    kind: str
    fingerprint: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("embedding rows must be a 2-D matrix")
        if not np.all(np.isfinite(rows)):
            raise ValueError("embedding contains non-finite entries")
        object.__setattr__(self, "rows", rows)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def __len__(self) -> int:
        return self.rows.shape[0]


def fingerprint(payload: dict) -> str:
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def unit_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def save_embedding(emb: EmbeddingMatrix, path: str | Path, config: dict | None = None) -> None:
    path = Path(path)
    n, d = emb.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, KINDS.index(emb.kind), n, d))
        fh.write(emb.rows.astype("<f8").tobytes(order="C"))
    sidecar = {"kind": emb.kind, "n": n, "d": d, "fingerprint": emb.fingerprint, "config": config or {}}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_embedding(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated embedding header")
    magic, kind, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if kind >= len(KINDS):
        raise ValueError(f"{path}: unknown kind byte {kind}")
    body = raw[_HEADER.size:]
    if len(body) != n * d * 8:
        raise ValueError(f"{path}: expected {n * d} values, found {len(body) // 8}")
    rows = np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    fp = ""
    side = Path(str(path) + ".json")
    if side.exists():
        fp = json.loads(side.read_text(encoding="utf-8")).get("fingerprint", "")
    return EmbeddingMatrix(rows, KINDS[kind], fp)
