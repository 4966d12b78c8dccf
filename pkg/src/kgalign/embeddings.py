"""Binary embedding tables, input fusion, and a hash-based fallback encoder.

On-disk layout: magic ``ICLE``, u8 version, u8 kind code, u16 reserved,
u32 count, u32 dim (little-endian), then ``count * dim`` float32 values,
row-major, row i belonging to entity or relation id i.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ShapeError

MAGIC = b"ICLE"
VERSION = 1

KIND_CODES = {
    "entity-name": 0,
    "entity-description": 1,
    "relation-name": 2,
    "fused": 3,
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}

NORM_TOL = 1e-3


@dataclass
class EmbeddingTable:
    """Dense float32 matrix, one row per id."""

    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise FormatError(f"unknown embedding kind {self.kind!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeError(f"embedding table must be 2-d, got {self.data.shape}")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def validate_table(table: EmbeddingTable) -> None:
    """Check the per-kind invariants: finite values, unit rows where required.

    Description tables may contain exact-zero rows: a zero row is the
    agreed marker for a missing description.
    """
    if not np.isfinite(table.data).all():
        raise DataError(f"{table.kind} table contains NaN or Inf")
    if table.kind == "fused":
        return
    norms = np.linalg.norm(table.data.astype(np.float64), axis=1)
    ok = np.abs(norms - 1.0) <= NORM_TOL
    if table.kind == "entity-description":
        ok |= norms == 0.0
    if not ok.all():
        bad = int(np.argmin(ok))
        raise DataError(
            f"{table.kind} row {bad} has L2 norm {norms[bad]:.6f}, expected 1.0"
        )


def write_embeddings(path, table: EmbeddingTable) -> None:
    validate_table(table)
    header = struct.pack(
        "<4sBBHII", MAGIC, VERSION, KIND_CODES[table.kind], 0,
        table.count, table.dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(table.data, dtype="<f4").tobytes())


def read_embeddings(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic in embedding file {path}")
    _, version, kind_code, reserved, count, dim = struct.unpack_from("<4sBBHII", blob, 0)
    if version != VERSION:
        raise FormatError(f"unsupported embedding format version {version}")
    if kind_code not in CODE_KINDS:
        raise FormatError(f"unknown embedding kind code {kind_code}")
    if reserved != 0:
        raise FormatError("reserved header field must be zero")
    expected = 16 + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(
            f"embedding payload length mismatch: header says {count}x{dim} "
            f"({expected} bytes), file has {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(count, dim).copy()
    table = EmbeddingTable(kind=CODE_KINDS[kind_code], data=data)
    validate_table(table)
    return table


def fuse(name: EmbeddingTable, desc: EmbeddingTable | None = None,
         desc_dim: int | None = None) -> EmbeddingTable:
    """Concatenate name and description rows into the fused input table.

    A missing description table is replaced by a zero block of ``desc_dim``
    columns so the same code path serves description-free runs. The fused
    rows are deliberately not re-normalized: each part is already unit norm
    and the concatenation of two unit vectors is kept as-is.
    """
    if desc is None:
        if desc_dim is None:
            raise ShapeError("desc_dim required when no description table is given")
        desc_block = np.zeros((name.count, desc_dim), dtype=np.float32)
    else:
        if desc.count != name.count:
            raise ShapeError(
                f"row count mismatch: {name.count} names vs {desc.count} descriptions"
            )
        desc_block = desc.data
    fused = np.concatenate([name.data, desc_block], axis=1)
    return EmbeddingTable(kind="fused", data=fused)


def _stable_hash(token: str, seed: int) -> int:
    key = struct.pack("<q", seed)
    digest = hashlib.blake2b(token.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Dense signed pseudo-random vector derived from the token hash alone.

    A whole-digest expansion (instead of one signed bucket per token) keeps
    distinct token multisets from ever summing to the same row, which a
    bucket scheme cannot guarantee at small dims.
    """
    h = hashlib.shake_256(struct.pack("<q", seed) + token.encode("utf-8"))
    raw = np.frombuffer(h.digest(4 * dim), dtype="<u4")
    return raw.astype(np.float64) / 2147483648.0 - 1.0


def fallback_encode(texts: list[str], dim: int, seed: int,
                    kind: str = "entity-name") -> EmbeddingTable:
    """Deterministic hashed bag-of-words rows, L2-normalized.

    Stands in for a pretrained sentence encoder in tests and synthetic
    datasets: identical token multisets map to identical rows regardless
    of order; empty text maps to a fixed unit axis vector.
    """
    if dim < 1:
        raise ShapeError("dim must be >= 1")
    rows = np.zeros((len(texts), dim), dtype=np.float64)
    cache: dict[str, np.ndarray] = {}
    for i, text in enumerate(texts):
        tokens = text.split()
        for token in tokens:
            if token not in cache:
                cache[token] = _token_vector(token, dim, seed)
            rows[i] += cache[token]
        norm = np.linalg.norm(rows[i])
        if norm == 0.0:
            marker = "<empty>" if not tokens else "\x1f".join(sorted(tokens))
            rows[i, _stable_hash(marker, seed) % dim] = 1.0
        else:
            rows[i] /= norm
    return EmbeddingTable(kind=kind, data=rows.astype(np.float32))
