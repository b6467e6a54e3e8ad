"""Systematic MDS erasure code over GF(256) with strip batching.

A file is split into K strips of b bytes and expanded to N = r*K coded strips;
the first K are the file verbatim, the parities come from a Cauchy generator
(any square submatrix of a Cauchy matrix is nonsingular, so any K strips
reconstruct the file). Batching m = K/k consecutive strips into one chunk
turns the same coded file into an (N*k/K, k) code for chunks of m*b bytes,
for every k that divides K: one stored object serves all chunking levels.

Coded-file container layout (little-endian):

    offset  size  field
    0       4     magic  b"SKCF"
    4       2     format version (= 1)
    6       2     K, data strips
    8       2     N, total strips
    10      8     b, strip size in bytes
    18      4     pad, count of trailing pad bytes in the last data strip
    22      N*b   payload, strips back to back

The Cauchy construction draws N distinct field elements, so N <= 256.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SKCF"
VERSION = 1
MAX_TOTAL_STRIPS = 256

_HEADER = struct.Struct("<4sHHHQL")
HEADER_SIZE = _HEADER.size

_PRIMITIVE_POLY = 0x11D


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    exp = np.zeros(512, dtype=np.int32)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIMITIVE_POLY
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    for a in range(1, 256):
        mul[a, nz] = exp[log[a] + log[nz]]
    return exp, log, mul


_EXP, _LOG, _MUL = _build_tables()


def _gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("no inverse of 0 in GF(256)")
    return int(_EXP[255 - _LOG[a]])


def _generator_row(index: int, k_strips: int) -> np.ndarray:
    """Row of the systematic generator matrix for strip ``index`` (0-based)."""
    row = np.zeros(k_strips, dtype=np.uint8)
    if index < k_strips:
        row[index] = 1
        return row
    x = index  # parity rows use elements K..N-1, columns use 0..K-1
    for j in range(k_strips):
        row[j] = _gf_inv(x ^ j)
    return row


@dataclass(frozen=True)
class CodedFileMeta:
    strip_size: int
    k_strips: int
    n_strips: int
    pad: int

    def __post_init__(self) -> None:
        if self.strip_size < 1:
            raise ValueError("strip_size must be >= 1")
        if not 1 <= self.k_strips <= self.n_strips:
            raise ValueError("need n_strips >= k_strips >= 1")
        if self.n_strips > MAX_TOTAL_STRIPS:
            raise ValueError(f"n_strips must be <= {MAX_TOTAL_STRIPS} for the GF(256) construction")
        if not 0 <= self.pad < self.strip_size:
            raise ValueError("pad must lie in [0, strip_size)")

    @property
    def file_size(self) -> int:
        return self.k_strips * self.strip_size - self.pad

    def chunk_count(self, k: int) -> int:
        return self.n_strips * k // self.k_strips

    def strips_per_chunk(self, k: int) -> int:
        if k < 1 or self.k_strips % k != 0:
            raise ValueError(f"chunking level k={k} must divide K={self.k_strips}")
        return self.k_strips // k


@dataclass(frozen=True)
class CodedFile:
    meta: CodedFileMeta
    payload: bytes

    def __post_init__(self) -> None:
        if len(self.payload) != self.meta.n_strips * self.meta.strip_size:
            raise ValueError("payload length must equal n_strips * strip_size")

    def chunk(self, k: int, index: int) -> bytes:
        start, end = chunk_range(self.meta, k, index)
        return self.payload[start:end]

    def to_bytes(self) -> bytes:
        m = self.meta
        return _HEADER.pack(MAGIC, VERSION, m.k_strips, m.n_strips, m.strip_size, m.pad) + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CodedFile":
        if len(blob) < HEADER_SIZE:
            raise ValueError("truncated coded file: missing header")
        magic, version, k, n, b, pad = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        meta = CodedFileMeta(strip_size=b, k_strips=k, n_strips=n, pad=pad)
        payload = blob[HEADER_SIZE:]
        return cls(meta, payload)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> "CodedFile":
        return cls.from_bytes(Path(path).read_bytes())


def encode(data: bytes, strip_size: int, redundancy: float) -> CodedFile:
    """Encode a file into N = redundancy * K strips, the first K verbatim."""
    if strip_size < 1:
        raise ValueError("strip_size must be >= 1")
    if not data:
        raise ValueError("cannot encode an empty file")
    if redundancy < 1:
        raise ValueError("redundancy ratio must be >= 1")
    pad = (-len(data)) % strip_size
    k_strips = (len(data) + pad) // strip_size
    n_float = redundancy * k_strips
    n_strips = round(n_float)
    if abs(n_float - n_strips) > 1e-9:
        raise ValueError(f"redundancy * K must be integral, got {n_float}")
    meta = CodedFileMeta(strip_size=strip_size, k_strips=k_strips, n_strips=n_strips, pad=pad)
    padded = np.frombuffer(data + b"\0" * pad, dtype=np.uint8).reshape(k_strips, strip_size)
    parities = np.empty((n_strips - k_strips, strip_size), dtype=np.uint8)
    for p in range(k_strips, n_strips):
        row = _generator_row(p, k_strips)
        acc = _MUL[row[0]][padded[0]].copy()
        for j in range(1, k_strips):
            acc ^= _MUL[row[j]][padded[j]]
        parities[p - k_strips] = acc
    payload = padded.tobytes() + parities.tobytes()
    return CodedFile(meta, payload)


def chunk_range(meta: CodedFileMeta, k: int, index: int) -> tuple[int, int]:
    """Byte range [start, end) of chunk ``index`` (1-based) at chunking level k."""
    m = meta.strips_per_chunk(k)
    count = meta.chunk_count(k)
    if not 1 <= index <= count:
        raise ValueError(f"chunk index {index} outside [1, {count}] at level k={k}")
    start = (index - 1) * m * meta.strip_size
    return start, start + m * meta.strip_size


def decode(meta: CodedFileMeta, k: int, chunks: Mapping[int, bytes]) -> bytes:
    """Reconstruct the original file from exactly k distinct chunks (1-based
    indices) taken at chunking level k."""
    m = meta.strips_per_chunk(k)
    count = meta.chunk_count(k)
    if len(chunks) != k:
        raise ValueError(f"need exactly {k} distinct chunks, got {len(chunks)}")
    strip_indices: list[int] = []
    strips: list[np.ndarray] = []
    for index, blob in sorted(chunks.items()):
        if not 1 <= index <= count:
            raise ValueError(f"chunk index {index} outside [1, {count}] at level k={k}")
        if len(blob) != m * meta.strip_size:
            raise ValueError(f"chunk {index} has {len(blob)} bytes, expected {m * meta.strip_size}")
        arr = np.frombuffer(blob, dtype=np.uint8).reshape(m, meta.strip_size)
        base = (index - 1) * m
        strip_indices.extend(range(base, base + m))
        strips.extend(arr)
    data = _solve_strips(meta, strip_indices, strips)
    raw = data.tobytes()
    return raw[: meta.file_size]


def _solve_strips(meta: CodedFileMeta, indices: list[int], strips: list[np.ndarray]) -> np.ndarray:
    k_strips = meta.k_strips
    if all(i < k_strips for i in indices):
        # systematic fast path: the gathered strips are data strips already
        data = np.empty((k_strips, meta.strip_size), dtype=np.uint8)
        for i, strip in zip(indices, strips):
            data[i] = strip
        return data
    a = np.vstack([_generator_row(i, k_strips) for i in indices])
    b = np.vstack(strips)
    # Gauss-Jordan over GF(256); the Cauchy construction guarantees full rank
    for col in range(k_strips):
        piv = col
        while a[piv, col] == 0:
            piv += 1
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        inv = _gf_inv(int(a[col, col]))
        a[col] = _MUL[inv][a[col]]
        b[col] = _MUL[inv][b[col]]
        for row in range(k_strips):
            if row != col and a[row, col]:
                factor = int(a[row, col])
                a[row] ^= _MUL[factor][a[col]]
                b[row] ^= _MUL[factor][b[col]]
    return b
