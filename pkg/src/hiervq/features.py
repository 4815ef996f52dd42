"""Deterministic patch features: PGM/PPM ingestion, orthonormal 2-D DCT,
low-band semantic proxies, and IDCT tiling back to an image.

Images are reduced to luma in [0, 1] and cut into non-overlapping P x P
patches (center-cropped to multiples of P).  Pixel features are the full
P^2 DCT coefficients of a patch; semantic-proxy features keep only the
top-left L x L low-frequency block, the band that carries most of the
recognizable content at this scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import FeatureGrid
from .errors import ArgumentError, DataError, DomainError, FormatError, ParseError, ShapeError

__all__ = [
    "GrayImage",
    "PatchSpec",
    "load_image",
    "save_image_pgm",
    "dct2",
    "idct2",
    "pixel_features",
    "semantic_proxy_features",
    "embed_low_band",
    "reconstruct_image",
]

_LUMA = (0.299, 0.587, 0.114)


class GrayImage:
    """A height x width luma image with float32 values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ShapeError(f"image must be 2-D and non-empty, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DomainError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __repr__(self) -> str:
        return f"GrayImage({self.height}x{self.width})"


@dataclass
class PatchSpec:
    """Square patch geometry; the stride always equals the side length."""

    patch: int = 8

    def __post_init__(self) -> None:
        if self.patch < 1:
            raise ArgumentError(f"patch side must be >= 1, got {self.patch}")

    @property
    def stride(self) -> int:
        return self.patch


class _TokenScanner:
    """Whitespace/comment-aware scanner for netpbm headers and ASCII rasters."""

    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def _skip_separators(self) -> None:
        while self.pos < len(self.buf):
            ch = self.buf[self.pos]
            if ch in b" \t\r\n\x0b\x0c":
                self.pos += 1
            elif ch == ord("#"):
                nl = self.buf.find(b"\n", self.pos)
                self.pos = len(self.buf) if nl < 0 else nl + 1
            else:
                return

    def next_int(self, what: str) -> int:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            raise ParseError(f"truncated image file: expected {what}")
        return int(self.buf[start : self.pos])

    def raster_start(self) -> int:
        """Binary rasters begin exactly one whitespace byte after the maxval."""
        if self.pos >= len(self.buf) or self.buf[self.pos] not in b" \t\r\n":
            raise ParseError("truncated image file: missing raster separator")
        return self.pos + 1


def load_image(path) -> GrayImage:
    """Read an 8-bit PGM (P2/P5) or PPM (P3/P6) file as luma in [0, 1].

    Color images are converted with 0.299 R + 0.587 G + 0.114 B.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 2:
        raise FormatError("file too short for a netpbm header")
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}; expected P2/P3/P5/P6")
    color = magic in (b"P3", b"P6")
    binary = magic in (b"P5", b"P6")
    scanner = _TokenScanner(buf)
    scanner.pos = 2
    width = scanner.next_int("width")
    height = scanner.next_int("height")
    maxval = scanner.next_int("maxval")
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise ParseError(f"invalid image size {width}x{height}")
    channels = 3 if color else 1
    count = width * height * channels

    if binary:
        start = scanner.raster_start()
        raw = buf[start : start + count]
        if len(raw) < count:
            raise ParseError(
                f"truncated image file: raster needs {count} bytes, got {len(raw)}"
            )
        values = np.frombuffer(raw, dtype=np.uint8, count=count).astype(np.float64)
    else:
        values = np.empty(count, dtype=np.float64)
        for i in range(count):
            v = scanner.next_int("sample value")
            if v > maxval:
                raise ParseError(f"sample value {v} exceeds maxval {maxval}")
            values[i] = v

    values /= 255.0
    if color:
        rgb = values.reshape(height, width, 3)
        luma = rgb[:, :, 0] * _LUMA[0] + rgb[:, :, 1] * _LUMA[1] + rgb[:, :, 2] * _LUMA[2]
    else:
        luma = values.reshape(height, width)
    return GrayImage(np.clip(luma, 0.0, 1.0))


def save_image_pgm(img: GrayImage, path) -> None:
    """Write a binary (P5) 8-bit PGM file."""
    raster = np.clip(np.rint(img.data.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + raster.tobytes())


@lru_cache(maxsize=None)
def _dct_matrix(p: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: row u is the u-th cosine basis vector."""
    i = np.arange(p, dtype=np.float64)
    mat = np.cos(np.pi * (2.0 * i[None, :] + 1.0) * i[:, None] / (2.0 * p))
    mat *= np.sqrt(2.0 / p)
    mat[0] *= np.sqrt(0.5)
    mat.setflags(write=False)
    return mat


def _square_patch(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ShapeError(f"{name} must be square and non-empty, got shape {arr.shape}")
    return arr


def dct2(patch) -> np.ndarray:
    """Orthonormal type-II 2-D DCT of a square patch."""
    x = _square_patch(patch, "patch")
    mat = _dct_matrix(x.shape[0])
    return mat @ x @ mat.T


def idct2(coeffs) -> np.ndarray:
    """Inverse of :func:`dct2`; exact up to rounding."""
    c = _square_patch(coeffs, "coefficients")
    mat = _dct_matrix(c.shape[0])
    return mat.T @ c @ mat


def _center_crop(img: GrayImage, p: int) -> np.ndarray:
    h = (img.height // p) * p
    w = (img.width // p) * p
    if h == 0 or w == 0:
        raise DataError(
            f"image {img.height}x{img.width} is smaller than one {p}x{p} patch"
        )
    top = (img.height - h) // 2
    left = (img.width - w) // 2
    return img.data[top : top + h, left : left + w].astype(np.float64)


def _block_coeffs(img: GrayImage, spec: PatchSpec) -> np.ndarray:
    """DCT coefficients of all patches as a (gh, gw, P, P) array."""
    p = spec.patch
    cropped = _center_crop(img, p)
    gh, gw = cropped.shape[0] // p, cropped.shape[1] // p
    blocks = cropped.reshape(gh, p, gw, p).transpose(0, 2, 1, 3)
    mat = _dct_matrix(p)
    return np.einsum("ui,ghij,vj->ghuv", mat, blocks, mat, optimize=True)


def pixel_features(img: GrayImage, spec: PatchSpec) -> FeatureGrid:
    """Full P^2 DCT coefficients per patch, flattened row-major per cell."""
    coeffs = _block_coeffs(img, spec)
    gh, gw = coeffs.shape[:2]
    return FeatureGrid(coeffs.reshape(gh, gw, spec.patch * spec.patch))


def semantic_proxy_features(img: GrayImage, spec: PatchSpec, low: int = 4) -> FeatureGrid:
    """Top-left ``low x low`` DCT block per patch: the low-frequency proxy
    for a semantic encoder's output at desk scale."""
    if low < 1:
        raise ArgumentError(f"low band size must be >= 1, got {low}")
    if low > spec.patch:
        raise ArgumentError(f"low band {low} exceeds patch side {spec.patch}")
    coeffs = _block_coeffs(img, spec)
    gh, gw = coeffs.shape[:2]
    return FeatureGrid(coeffs[:, :, :low, :low].reshape(gh, gw, low * low))


def embed_low_band(grid: FeatureGrid, spec: PatchSpec) -> FeatureGrid:
    """Zero-pad L^2 low-band cells back to full P^2 coefficient layout."""
    low = int(round(np.sqrt(grid.dim)))
    if low * low != grid.dim:
        raise ArgumentError(f"grid dim {grid.dim} is not a square low band")
    if low > spec.patch:
        raise ArgumentError(f"low band {low} exceeds patch side {spec.patch}")
    p = spec.patch
    out = np.zeros((grid.height, grid.width, p, p), dtype=np.float32)
    out[:, :, :low, :low] = grid.data.reshape(grid.height, grid.width, low, low)
    return FeatureGrid(out.reshape(grid.height, grid.width, p * p))


def reconstruct_image(pix_quantized: FeatureGrid, spec: PatchSpec) -> GrayImage:
    """Tile per-patch inverse DCTs back into an image, clamped to [0, 1]."""
    p = spec.patch
    if pix_quantized.dim != p * p:
        raise ShapeError(
            f"grid dim {pix_quantized.dim} != patch size {p}x{p}={p * p}"
        )
    gh, gw = pix_quantized.height, pix_quantized.width
    coeffs = pix_quantized.data.astype(np.float64).reshape(gh, gw, p, p)
    mat = _dct_matrix(p)
    patches = np.einsum("ui,ghuv,vj->ghij", mat, coeffs, mat, optimize=True)
    image = patches.transpose(0, 2, 1, 3).reshape(gh * p, gw * p)
    return GrayImage(np.clip(image, 0.0, 1.0))
