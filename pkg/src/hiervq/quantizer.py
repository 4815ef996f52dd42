"""Nearest-code search and the two-stage hierarchical quantization pipeline.

The distance kernel uses the expansion ``|z - c|^2 = |z|^2 - 2 z.c + |c|^2``
with precomputed code norms so the inner loop is a single GEMM.  The GEMM
runs in float32 for speed; every row whose runner-up score lands within a
rigorous rounding tolerance of the winner is re-ranked by an exact float64
scan, so returned indices always equal an exhaustive double-precision search
with lowest-index tie-break.  Returned squared distances are computed in
float64 against the winning row.

Batch calls may be partitioned across worker threads; chunking is fixed and
per-chunk results are exact, so outputs are independent of the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (
    FeatureGrid,
    HierarchicalCodebook,
    SemanticCodebook,
    TokenGrid,
    concat_features,
)
from .errors import ArgumentError, DomainError, RangeError, ShapeError

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

__all__ = [
    "QuantizationResult",
    "nearest_code",
    "nearest_codes",
    "quantize_semantic",
    "quantize_pixel",
    "quantize_hierarchical",
    "dequantize",
]

# Queries per GEMM chunk.  Fixed (not derived from the thread count) so that
# outputs are bitwise identical for any number of workers.
_CHUNK = 512

# Problems with n*k at or below this run one exact float64 pass directly;
# the float32 fast path only pays off on large batches.
_SMALL_PROBLEM = 1 << 18

# Safety factor over the worst-case float32 rounding error of the expansion
# kernel; rows whose top-two scores are closer than the resulting tolerance
# are re-ranked in float64.
_TIE_TOL = 3e-5


def _score_pass_numpy(scores: np.ndarray, tol: np.ndarray, out_idx, out_flag, base: int):
    idx = np.argmin(scores, axis=1)
    best = scores[np.arange(scores.shape[0]), idx]
    if scores.shape[1] > 1:
        part = np.partition(scores, 1, axis=1)
        runner = part[:, 1]
    else:
        runner = np.full(scores.shape[0], np.inf, dtype=scores.dtype)
    out_idx[base : base + scores.shape[0]] = idx
    out_flag[base : base + scores.shape[0]] = runner <= best + tol


if HAS_NUMBA:

    @numba.njit(nogil=True, cache=True)
    def _score_pass(G, halfsq, tol, out_idx, out_flag, base):  # pragma: no cover
        n, k = G.shape
        for i in range(n):
            best = halfsq[0] - G[i, 0]
            second = np.inf
            bj = 0
            for j in range(1, k):
                s = halfsq[j] - G[i, j]
                if s < best:
                    second = best
                    best = s
                    bj = j
                elif s < second:
                    second = s
            out_idx[base + i] = bj
            out_flag[base + i] = second <= best + tol[i]


def _exact_rerank(z64: np.ndarray, cb64: np.ndarray) -> int:
    d2 = ((cb64 - z64) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def nearest_codes(
    vectors,
    codebook_matrix,
    *,
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codebook row for each query vector.

    Returns ``(indices, squared_distances)`` where ties are broken by lowest
    index and distances are exact float64 values against the winning rows.
    """
    Z = np.asarray(vectors)
    C = np.asarray(codebook_matrix)
    if Z.ndim != 2 or C.ndim != 2:
        raise ShapeError(
            f"expected 2-D query and codebook matrices, got {Z.shape} and {C.shape}"
        )
    if C.shape[0] < 1:
        raise ShapeError("codebook must contain at least one row")
    if Z.shape[1] != C.shape[1]:
        raise ShapeError(
            f"dimension mismatch: queries are {Z.shape[1]}-D, codes are {C.shape[1]}-D"
        )
    if not np.isfinite(Z).all():
        raise DomainError("query vectors contain non-finite values")
    if not np.isfinite(C).all():
        raise DomainError("codebook contains non-finite values")

    n, d = Z.shape
    k = C.shape[0]
    idx = np.empty(n, dtype=np.int64)
    if n == 0:
        return idx, np.empty(0, dtype=np.float64)

    Z64 = Z.astype(np.float64, copy=False)
    C64 = C.astype(np.float64, copy=False)

    if n * k <= _SMALL_PROBLEM:
        d2 = (
            (Z64 * Z64).sum(axis=1)[:, None]
            - 2.0 * (Z64 @ C64.T)
            + (C64 * C64).sum(axis=1)[None, :]
        )
        # The expansion can disagree with |z-c|^2 near exact ties; re-rank
        # every row directly since the whole matrix is small anyway.
        idx = np.argmin(d2, axis=1)
        gap = np.partition(d2, 1, axis=1)[:, 1] - d2[np.arange(n), idx] if k > 1 else None
        if gap is not None:
            scale = np.abs(d2).max() + 1.0
            for i in np.nonzero(gap <= 1e-9 * scale)[0]:
                idx[i] = _exact_rerank(Z64[i], C64)
        dist = ((Z64 - C64[idx]) ** 2).sum(axis=1)
        return idx.astype(np.int64), np.maximum(dist, 0.0)

    C32 = np.ascontiguousarray(C, dtype=np.float32)
    Z32 = np.ascontiguousarray(Z, dtype=np.float32)
    halfsq64 = 0.5 * (C64 * C64).sum(axis=1)
    halfsq32 = halfsq64.astype(np.float32)
    sqz = (Z64 * Z64).sum(axis=1)
    scale = sqz + 2.0 * float(halfsq64.max()) + 1.0
    tol = (_TIE_TOL * d / 48.0 * scale).astype(np.float32)
    flag = np.empty(n, dtype=np.bool_)

    def work(span: tuple[int, int]) -> None:
        s, e = span
        G = Z32[s:e] @ C32.T
        if HAS_NUMBA:
            _score_pass(G, halfsq32, tol[s:e], idx, flag, s)
        else:
            _score_pass_numpy(halfsq32[None, :] - G, tol[s:e], idx, flag, s)

    spans = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    # Default to available parallelism; results are identical either way.
    workers = (os.cpu_count() or 1) if threads is None else max(1, int(threads))
    # BLAS is pinned to one thread per GEMM so that worker-level parallelism
    # composes predictably and results do not depend on BLAS scheduling.
    with threadpool_limits(limits=1):
        if workers == 1 or len(spans) == 1:
            for span in spans:
                work(span)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(work, spans))

    for i in np.nonzero(flag)[0]:
        idx[i] = _exact_rerank(Z64[i], C64)
    dist = ((Z64 - C64[idx]) ** 2).sum(axis=1)
    return idx, np.maximum(dist, 0.0)


def nearest_code(v, codebook_matrix) -> tuple[int, float]:
    """Index and squared distance of the codebook row nearest to ``v``."""
    vec = np.asarray(v)
    if vec.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {vec.shape}")
    idx, dist = nearest_codes(vec[None, :], codebook_matrix)
    return int(idx[0]), float(dist[0])


def _l2_normalize(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DomainError(f"cannot L2-normalize zero vectors in {what}")
    return rows / norms


@dataclass
class QuantizationResult:
    """Output of the full hierarchical quantization of one feature-grid pair."""

    tokens: TokenGrid
    quantized_sem: FeatureGrid
    quantized_pix: FeatureGrid
    quantized_concat: FeatureGrid


def quantize_semantic(
    z: FeatureGrid,
    cb: SemanticCodebook,
    *,
    normalize: bool = False,
    threads: int | None = None,
) -> tuple[np.ndarray, FeatureGrid]:
    """Assign every cell to its nearest semantic code.

    Returns the (height, width) int32 index grid and the grid of selected
    code vectors.  With ``normalize=True`` the search runs on L2-normalized
    features and codes (selection only; output vectors stay raw codebook
    rows).  Off by default.
    """
    if z.dim != cb.dim_sem:
        raise ShapeError(f"feature dim {z.dim} != codebook dim {cb.dim_sem}")
    cells = z.cells()
    matrix = cb.vectors
    if normalize:
        cells = _l2_normalize(cells.astype(np.float64), "features")
        matrix = _l2_normalize(matrix.astype(np.float64), "codebook")
    idx, _ = nearest_codes(cells, matrix, threads=threads)
    quantized = FeatureGrid(cb.vectors[idx].reshape(z.height, z.width, cb.dim_sem))
    return idx.astype(np.int32).reshape(z.height, z.width), quantized


def quantize_pixel(
    z_pix: FeatureGrid,
    hier: HierarchicalCodebook,
    sem_idx,
    *,
    threads: int | None = None,
) -> tuple[np.ndarray, FeatureGrid]:
    """Quantize pixel features inside the sub-codebook chosen per cell.

    Cell ``c`` with semantic index ``k`` searches only sub-codebook ``k``;
    no other sub-codebook can be selected for that cell.
    """
    if z_pix.dim != hier.dim_pix:
        raise ShapeError(f"feature dim {z_pix.dim} != sub-codebook dim {hier.dim_pix}")
    sem = np.asarray(sem_idx)
    if sem.shape != (z_pix.height, z_pix.width):
        raise ShapeError(
            f"semantic index grid {sem.shape} does not match feature grid "
            f"{(z_pix.height, z_pix.width)}"
        )
    if not np.issubdtype(sem.dtype, np.integer):
        raise ArgumentError("semantic indices must be integers")
    flat_sem = sem.ravel().astype(np.int64)
    if flat_sem.size and (flat_sem.min() < 0 or flat_sem.max() >= hier.k):
        raise RangeError(f"semantic indices must lie in [0, {hier.k})")

    cells = z_pix.cells()
    n = cells.shape[0]
    pix_idx = np.empty(n, dtype=np.int64)
    quantized = np.empty((n, hier.dim_pix), dtype=np.float32)
    order = np.argsort(flat_sem, kind="stable")
    bounds = np.searchsorted(flat_sem[order], np.arange(hier.k + 1))
    for k in np.unique(flat_sem):
        members = order[bounds[k] : bounds[k + 1]]
        sub = hier.subs[k]
        idx, _ = nearest_codes(cells[members], sub.vectors, threads=threads)
        pix_idx[members] = idx
        quantized[members] = sub.vectors[idx]
    grid = FeatureGrid(quantized.reshape(z_pix.height, z_pix.width, hier.dim_pix))
    return pix_idx.astype(np.int32).reshape(z_pix.height, z_pix.width), grid


def quantize_hierarchical(
    z_sem: FeatureGrid,
    z_pix: FeatureGrid,
    hier: HierarchicalCodebook,
    *,
    normalize: bool = False,
    threads: int | None = None,
) -> QuantizationResult:
    """Full pipeline: semantic assignment, guided pixel assignment, concat."""
    if (z_sem.height, z_sem.width) != (z_pix.height, z_pix.width):
        raise ShapeError(
            f"grids must share height/width: {z_sem.height}x{z_sem.width} vs "
            f"{z_pix.height}x{z_pix.width}"
        )
    sem_idx, q_sem = quantize_semantic(z_sem, hier.semantic, normalize=normalize, threads=threads)
    pix_idx, q_pix = quantize_pixel(z_pix, hier, sem_idx, threads=threads)
    tokens = TokenGrid(sem_idx, pix_idx, hier.m)
    return QuantizationResult(
        tokens=tokens,
        quantized_sem=q_sem,
        quantized_pix=q_pix,
        quantized_concat=concat_features(q_sem, q_pix),
    )


def dequantize(tokens: TokenGrid, hier: HierarchicalCodebook) -> FeatureGrid:
    """Look up and concatenate the code vectors named by a token grid."""
    if tokens.m != hier.m:
        raise ArgumentError(f"token grid has m={tokens.m}, codebook has m={hier.m}")
    sem = tokens.sem_idx.ravel().astype(np.int64)
    pix = tokens.pix_idx.ravel().astype(np.int64)
    if sem.size and sem.max() >= hier.k:
        raise RangeError(f"semantic indices must lie in [0, {hier.k})")
    sem_rows = hier.semantic.vectors[sem]
    pix_rows = hier.sub_vectors()[sem, pix]
    data = np.concatenate([sem_rows, pix_rows], axis=1)
    return FeatureGrid(data.reshape(tokens.height, tokens.width, hier.dim_sem + hier.dim_pix))
