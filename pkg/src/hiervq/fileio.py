"""Binary file formats for codebooks ("SGHC") and feature grids ("SGHF").

Both formats are little-endian throughout.

Codebook file, version 1::

    magic "SGHC" | u32 version=1 | u32 k | u32 m | u32 d_sem | u32 d_pix
    | f32 momentum | u8 frozen
    | semantic vectors        (k * d_sem f32)
    | semantic ema_cluster_size (k f32)
    | semantic ema_sum        (k * d_sem f32)
    | k sub-codebook blocks, each:
        vectors (m * d_pix f32) | sizes (m f32) | sums (m * d_pix f32)

Feature-grid file, version 1::

    magic "SGHF" | u32 version=1 | u32 height | u32 width | u32 dim
    | height * width * dim f32, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import FeatureGrid, HierarchicalCodebook, PixelSubCodebook, SemanticCodebook
from .errors import FormatError, HierVQError, ParseError

__all__ = [
    "CODEBOOK_MAGIC",
    "FEATURE_MAGIC",
    "FORMAT_VERSION",
    "save_codebook",
    "load_codebook",
    "save_feature_grid",
    "load_feature_grid",
]

CODEBOOK_MAGIC = b"SGHC"
FEATURE_MAGIC = b"SGHF"
FORMAT_VERSION = 1


class _Reader:
    """Cursor over a byte buffer with truncation-checked reads."""

    def __init__(self, buf: bytes, label: str) -> None:
        self.buf = buf
        self.pos = 0
        self.label = label

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError(
                f"truncated {self.label}: needed {n} bytes for {what} at offset "
                f"{self.pos}, only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)

    def expect_end(self) -> None:
        if self.pos != len(self.buf):
            raise ParseError(
                f"inconsistent {self.label}: {len(self.buf) - self.pos} trailing "
                f"bytes after declared payload"
            )


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_codebook(cb: HierarchicalCodebook, path) -> None:
    """Write a hierarchical codebook to ``path`` in SGHC v1 layout."""
    sem = cb.semantic
    parts = [
        CODEBOOK_MAGIC,
        struct.pack(
            "<IIIIIfB",
            FORMAT_VERSION,
            cb.k,
            cb.m,
            cb.dim_sem,
            cb.dim_pix,
            cb.momentum,
            1 if sem.frozen else 0,
        ),
        _f32_bytes(sem.vectors),
        _f32_bytes(sem.ema_cluster_size),
        _f32_bytes(sem.ema_sum),
    ]
    for sub in cb.subs:
        parts.append(_f32_bytes(sub.vectors))
        parts.append(_f32_bytes(sub.ema_cluster_size))
        parts.append(_f32_bytes(sub.ema_sum))
    Path(path).write_bytes(b"".join(parts))


def load_codebook(path) -> HierarchicalCodebook:
    """Read an SGHC v1 codebook file written by :func:`save_codebook`."""
    r = _Reader(Path(path).read_bytes(), "codebook file")
    magic = r.take(4, "magic")
    if magic != CODEBOOK_MAGIC:
        raise FormatError(f"bad magic: expected {CODEBOOK_MAGIC!r}, got {magic!r}")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    k = r.u32("k")
    m = r.u32("m")
    d_sem = r.u32("d_sem")
    d_pix = r.u32("d_pix")
    if min(k, m, d_sem, d_pix) < 1:
        raise ParseError(
            f"inconsistent dimensions: k={k}, m={m}, d_sem={d_sem}, d_pix={d_pix}"
        )
    momentum = r.f32("momentum")
    if not (0.0 < momentum < 1.0) or not np.isfinite(momentum):
        raise ParseError(f"momentum out of range (0, 1): {momentum}")
    frozen_byte = r.u8("frozen flag")
    if frozen_byte not in (0, 1):
        raise ParseError(f"frozen flag must be 0 or 1, got {frozen_byte}")

    expected = 4 * (k * d_sem + k + k * d_sem) + 4 * k * (m * d_pix + m + m * d_pix)
    remaining = len(r.buf) - r.pos
    if remaining < expected:
        raise ParseError(
            f"truncated codebook file: payload needs {expected} bytes, got {remaining}"
        )

    try:
        sem_vectors = r.f32_array(k * d_sem, "semantic vectors").reshape(k, d_sem)
        sem_sizes = r.f32_array(k, "semantic ema_cluster_size")
        sem_sums = r.f32_array(k * d_sem, "semantic ema_sum").reshape(k, d_sem)
        semantic = SemanticCodebook(
            sem_vectors,
            momentum=momentum,
            frozen=bool(frozen_byte),
            ema_cluster_size=sem_sizes,
            ema_sum=sem_sums,
        )
        subs = []
        for i in range(k):
            vectors = r.f32_array(m * d_pix, f"sub-codebook {i} vectors").reshape(m, d_pix)
            sizes = r.f32_array(m, f"sub-codebook {i} sizes")
            sums = r.f32_array(m * d_pix, f"sub-codebook {i} sums").reshape(m, d_pix)
            subs.append(PixelSubCodebook(vectors, ema_cluster_size=sizes, ema_sum=sums))
        r.expect_end()
        return HierarchicalCodebook(semantic, subs, momentum=momentum)
    except ParseError:
        raise
    except HierVQError as exc:
        raise ParseError(f"inconsistent codebook payload: {exc}") from exc


def save_feature_grid(grid: FeatureGrid, path) -> None:
    """Write a feature grid to ``path`` in SGHF v1 layout."""
    header = FEATURE_MAGIC + struct.pack(
        "<IIII", FORMAT_VERSION, grid.height, grid.width, grid.dim
    )
    Path(path).write_bytes(header + _f32_bytes(grid.data))


def load_feature_grid(path) -> FeatureGrid:
    """Read an SGHF v1 feature-grid file."""
    r = _Reader(Path(path).read_bytes(), "feature file")
    magic = r.take(4, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic: expected {FEATURE_MAGIC!r}, got {magic!r}")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    height = r.u32("height")
    width = r.u32("width")
    dim = r.u32("dim")
    if min(height, width, dim) < 1:
        raise ParseError(f"inconsistent dimensions: {height}x{width}x{dim}")
    values = r.f32_array(height * width * dim, "grid values")
    r.expect_end()
    try:
        return FeatureGrid(values.reshape(height, width, dim))
    except HierVQError as exc:
        raise ParseError(f"inconsistent feature payload: {exc}") from exc
