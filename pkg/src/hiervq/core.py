"""Domain types and index arithmetic for the hierarchical codebook.

The data model is a frozen semantic codebook of K codes where every code
owns a pixel sub-codebook of m entries.  A (semantic, pixel) index pair
(i, j) flattens into a single vocabulary index h = i*m + j, so the complete
flat vocabulary has K*m entries.

Storage convention: vectors and grids are float32; reductions and distance
sums are accumulated in float64 by the consumers of these types.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DomainError, RangeError, ShapeError

__all__ = [
    "FeatureGrid",
    "SemanticCodebook",
    "PixelSubCodebook",
    "HierarchicalCodebook",
    "TokenGrid",
    "flatten_index",
    "unflatten_index",
    "concat_features",
]


def _as_float32_matrix(values, name: str, *, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return arr


class FeatureGrid:
    """An ``height x width`` grid of ``dim``-dimensional float32 vectors."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = _as_float32_matrix(data, "feature grid", ndim=3)
        if min(arr.shape) < 1:
            raise ShapeError(f"grid axes must all be >= 1, got shape {arr.shape}")
        self.data = arr

    @classmethod
    def from_flat(cls, height: int, width: int, dim: int, values) -> "FeatureGrid":
        """Build a grid from row-major flat values of length height*width*dim."""
        if height < 1 or width < 1 or dim < 1:
            raise ShapeError(f"invalid grid shape ({height}, {width}, {dim})")
        arr = np.asarray(values, dtype=np.float32).ravel()
        if arr.size != height * width * dim:
            raise ShapeError(
                f"expected {height * width * dim} values for a "
                f"{height}x{width}x{dim} grid, got {arr.size}"
            )
        return cls(arr.reshape(height, width, dim))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def cells(self) -> np.ndarray:
        """All cell vectors as an (height*width, dim) view."""
        return self.data.reshape(-1, self.dim)

    def __repr__(self) -> str:
        return f"FeatureGrid({self.height}x{self.width}x{self.dim})"


class SemanticCodebook:
    """K semantic code vectors plus their EMA training accumulators.

    ``ema_cluster_size`` and ``ema_sum`` track exponential moving averages of
    per-code assignment counts and assigned-vector sums.  Once ``frozen`` is
    set the codebook rejects all training updates; quantization remains
    available.
    """

    __slots__ = ("vectors", "ema_cluster_size", "ema_sum", "momentum", "frozen")

    def __init__(
        self,
        vectors,
        *,
        momentum: float = 0.99,
        frozen: bool = False,
        ema_cluster_size=None,
        ema_sum=None,
    ) -> None:
        self.vectors = _as_float32_matrix(vectors, "codebook vectors", ndim=2)
        if self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ShapeError(f"codebook must be at least 1x1, got {self.vectors.shape}")
        if not (0.0 < momentum < 1.0):
            raise ArgumentError(f"momentum must lie in (0, 1), got {momentum}")
        self.momentum = float(momentum)
        self.frozen = bool(frozen)
        k, d = self.vectors.shape
        if ema_cluster_size is None:
            ema_cluster_size = np.zeros(k, dtype=np.float32)
        self.ema_cluster_size = np.ascontiguousarray(ema_cluster_size, dtype=np.float32)
        if self.ema_cluster_size.shape != (k,):
            raise ShapeError(
                f"ema_cluster_size must have shape ({k},), got {self.ema_cluster_size.shape}"
            )
        if not np.isfinite(self.ema_cluster_size).all() or (self.ema_cluster_size < 0).any():
            raise DomainError("ema_cluster_size must be finite and non-negative")
        if ema_sum is None:
            ema_sum = np.zeros((k, d), dtype=np.float32)
        self.ema_sum = _as_float32_matrix(ema_sum, "ema_sum", ndim=2)
        if self.ema_sum.shape != (k, d):
            raise ShapeError(f"ema_sum must have shape ({k}, {d}), got {self.ema_sum.shape}")

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim_sem(self) -> int:
        return self.vectors.shape[1]

    def freeze(self) -> None:
        self.frozen = True

    def copy(self) -> "SemanticCodebook":
        return SemanticCodebook(
            self.vectors.copy(),
            momentum=self.momentum,
            frozen=self.frozen,
            ema_cluster_size=self.ema_cluster_size.copy(),
            ema_sum=self.ema_sum.copy(),
        )

    def __repr__(self) -> str:
        state = "frozen" if self.frozen else "trainable"
        return f"SemanticCodebook(k={self.k}, dim_sem={self.dim_sem}, {state})"


class PixelSubCodebook:
    """The m-entry pixel codebook owned by one semantic code."""

    __slots__ = ("vectors", "ema_cluster_size", "ema_sum")

    def __init__(self, vectors, *, ema_cluster_size=None, ema_sum=None) -> None:
        self.vectors = _as_float32_matrix(vectors, "sub-codebook vectors", ndim=2)
        if self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ShapeError(
                f"sub-codebook must be at least 1x1, got {self.vectors.shape}"
            )
        m, d = self.vectors.shape
        if ema_cluster_size is None:
            ema_cluster_size = np.zeros(m, dtype=np.float32)
        self.ema_cluster_size = np.ascontiguousarray(ema_cluster_size, dtype=np.float32)
        if self.ema_cluster_size.shape != (m,):
            raise ShapeError(
                f"ema_cluster_size must have shape ({m},), got {self.ema_cluster_size.shape}"
            )
        if not np.isfinite(self.ema_cluster_size).all() or (self.ema_cluster_size < 0).any():
            raise DomainError("ema_cluster_size must be finite and non-negative")
        if ema_sum is None:
            ema_sum = np.zeros((m, d), dtype=np.float32)
        self.ema_sum = _as_float32_matrix(ema_sum, "ema_sum", ndim=2)
        if self.ema_sum.shape != (m, d):
            raise ShapeError(f"ema_sum must have shape ({m}, {d}), got {self.ema_sum.shape}")

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim_pix(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "PixelSubCodebook":
        return PixelSubCodebook(
            self.vectors.copy(),
            ema_cluster_size=self.ema_cluster_size.copy(),
            ema_sum=self.ema_sum.copy(),
        )

    def __repr__(self) -> str:
        return f"PixelSubCodebook(m={self.m}, dim_pix={self.dim_pix})"


class HierarchicalCodebook:
    """A semantic codebook plus one pixel sub-codebook per semantic code.

    The flat vocabulary size is ``k * m``.  ``momentum`` governs EMA updates
    of the sub-codebooks; the semantic codebook carries its own momentum from
    its training stage.
    """

    __slots__ = ("semantic", "subs", "momentum")

    def __init__(
        self,
        semantic: SemanticCodebook,
        subs: list[PixelSubCodebook],
        *,
        momentum: float | None = None,
    ) -> None:
        if len(subs) != semantic.k:
            raise ShapeError(
                f"expected {semantic.k} sub-codebooks (one per semantic code), got {len(subs)}"
            )
        m = subs[0].m
        d_pix = subs[0].dim_pix
        for idx, sub in enumerate(subs):
            if sub.m != m or sub.dim_pix != d_pix:
                raise ShapeError(
                    f"sub-codebook {idx} has shape ({sub.m}, {sub.dim_pix}), "
                    f"expected ({m}, {d_pix})"
                )
        if momentum is None:
            momentum = semantic.momentum
        if not (0.0 < momentum < 1.0):
            raise ArgumentError(f"momentum must lie in (0, 1), got {momentum}")
        self.semantic = semantic
        self.subs = list(subs)
        self.momentum = float(momentum)

    @property
    def k(self) -> int:
        return self.semantic.k

    @property
    def m(self) -> int:
        return self.subs[0].m

    @property
    def dim_sem(self) -> int:
        return self.semantic.dim_sem

    @property
    def dim_pix(self) -> int:
        return self.subs[0].dim_pix

    @property
    def vocab_size(self) -> int:
        return self.k * self.m

    def sub_vectors(self) -> np.ndarray:
        """All sub-codebook vectors stacked as a (k, m, dim_pix) array."""
        return np.stack([sub.vectors for sub in self.subs])

    def copy(self) -> "HierarchicalCodebook":
        return HierarchicalCodebook(
            self.semantic.copy(),
            [sub.copy() for sub in self.subs],
            momentum=self.momentum,
        )

    def __repr__(self) -> str:
        return (
            f"HierarchicalCodebook(k={self.k}, m={self.m}, dim_sem={self.dim_sem}, "
            f"dim_pix={self.dim_pix}, vocab={self.vocab_size})"
        )


class TokenGrid:
    """Per-cell (semantic index, pixel sub-index, flat index) triples.

    Carries the sub-codebook size ``m`` so the flat-index invariant
    ``flat == sem * m + pix`` is checkable without external context.
    """

    __slots__ = ("sem_idx", "pix_idx", "flat_idx", "m")

    def __init__(self, sem_idx, pix_idx, m: int) -> None:
        if m < 1:
            raise ArgumentError(f"sub-codebook size m must be >= 1, got {m}")
        sem = np.ascontiguousarray(sem_idx, dtype=np.int32)
        pix = np.ascontiguousarray(pix_idx, dtype=np.int32)
        if sem.ndim != 2 or sem.shape != pix.shape:
            raise ShapeError(
                f"index grids must be 2-D and congruent, got {sem.shape} vs {pix.shape}"
            )
        if sem.size and (sem.min() < 0):
            raise RangeError("semantic indices must be >= 0")
        if pix.size and (pix.min() < 0 or pix.max() >= m):
            raise RangeError(f"pixel sub-indices must lie in [0, {m})")
        self.sem_idx = sem
        self.pix_idx = pix
        self.flat_idx = sem.astype(np.int64) * m + pix
        self.m = int(m)

    @classmethod
    def from_flat(cls, flat_idx, m: int) -> "TokenGrid":
        """Recover a token grid from flat indices via integer division."""
        if m < 1:
            raise ArgumentError(f"sub-codebook size m must be >= 1, got {m}")
        flat = np.ascontiguousarray(flat_idx, dtype=np.int64)
        if flat.ndim != 2:
            raise ShapeError(f"flat index grid must be 2-D, got shape {flat.shape}")
        if flat.size and flat.min() < 0:
            raise RangeError("flat indices must be >= 0")
        return cls(flat // m, flat % m, m)

    @property
    def height(self) -> int:
        return self.sem_idx.shape[0]

    @property
    def width(self) -> int:
        return self.sem_idx.shape[1]

    def __repr__(self) -> str:
        return f"TokenGrid({self.height}x{self.width}, m={self.m})"


def flatten_index(i: int, j: int, m: int) -> int:
    """Flat vocabulary index of semantic code ``i`` with sub-index ``j``."""
    if m < 1:
        raise ArgumentError(f"sub-codebook size m must be >= 1, got {m}")
    if i < 0:
        raise RangeError(f"semantic index must be >= 0, got {i}")
    if not (0 <= j < m):
        raise RangeError(f"sub-index must lie in [0, {m}), got {j}")
    return i * m + j


def unflatten_index(h: int, m: int) -> tuple[int, int]:
    """Inverse of :func:`flatten_index`: ``h -> (h // m, h % m)``."""
    if m < 1:
        raise ArgumentError(f"sub-codebook size m must be >= 1, got {m}")
    if h < 0:
        raise RangeError(f"flat index must be >= 0, got {h}")
    return h // m, h % m


def concat_features(sem: FeatureGrid, pix: FeatureGrid) -> FeatureGrid:
    """Concatenate two grids along the feature dimension, cell by cell.

    The first ``sem.dim`` components of every output cell reproduce the
    semantic vector exactly; the trailing ``pix.dim`` components reproduce
    the pixel vector exactly.
    """
    if (sem.height, sem.width) != (pix.height, pix.width):
        raise ShapeError(
            f"grids must share height/width: {sem.height}x{sem.width} vs "
            f"{pix.height}x{pix.width}"
        )
    return FeatureGrid(np.concatenate([sem.data, pix.data], axis=2))
