"""Variance-reduction analysis of code assignments, plus scalar metrics.

The variance reduction ratio (VRR) of an assignment of patches to codes is

    vrr = 1 - v_mean / v_global

where v_mean averages the within-code variance of patch features over all
codes holding at least two patches and v_global is the variance over all
patches.  A larger value means patches sharing a code look more alike.

Variances are unbiased (ddof=1) per dimension and averaged over dimensions.
The unbiased estimator makes a uniformly random assignment score ~0
regardless of how many patches land on each code, which is what lets the
random baseline act as a lower bound at small corpus sizes.  A pooled mode
(patch-weighted, population variances) is available behind a flag; it makes
v_mean monotone under refining an assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureGrid, HierarchicalCodebook, SemanticCodebook
from .errors import (
    ArgumentError,
    DataError,
    DegenerateInputError,
    DomainError,
    ShapeError,
)
from .features import GrayImage, PatchSpec, pixel_features, semantic_proxy_features
from .quantizer import nearest_codes, quantize_hierarchical
from .trainer import TrainConfig, train_semantic_codebook

__all__ = [
    "VRRReport",
    "VRRExperimentReport",
    "vrr",
    "vrr_experiment",
    "semantic_distill_loss",
    "reconstruction_metrics",
]


@dataclass
class VRRReport:
    """Within-code vs. global variance of one assignment scheme."""

    v_mean: float
    v_global: float
    vrr: float
    codes_counted: int
    total_patches: int


def _group_variances(
    assignments: np.ndarray, X: np.ndarray, pooled: bool
) -> tuple[float, int]:
    """Mean within-code variance and the number of codes it covers."""
    k = int(assignments.max()) + 1
    counts = np.bincount(assignments, minlength=k).astype(np.float64)
    d = X.shape[1]
    s1 = np.zeros((k, d), dtype=np.float64)
    s2 = np.zeros((k, d), dtype=np.float64)
    np.add.at(s1, assignments, X)
    np.add.at(s2, assignments, X * X)
    occupied = counts > 0
    ss = s2 - np.where(occupied[:, None], s1 * s1 / np.maximum(counts, 1.0)[:, None], 0.0)
    ss = np.maximum(ss, 0.0)
    if pooled:
        # Patch-weighted population variances: sum of within-code squared
        # deviations over all patches; never increases under refinement.
        return float(ss.sum() / (X.shape[0] * d)), int(occupied.sum())
    eligible = counts >= 2
    if not eligible.any():
        raise DataError("no code holds at least 2 patches; within-variance undefined")
    per_code = ss[eligible].mean(axis=1) / (counts[eligible] - 1.0)
    return float(per_code.mean()), int(eligible.sum())


def vrr(assignments, features, *, pooled: bool = False) -> VRRReport:
    """Variance reduction ratio of one patch-to-code assignment."""
    idx = np.asarray(assignments, dtype=np.int64).ravel()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2-D (patches x dims), got {X.shape}")
    if idx.size != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} patches but {idx.size} assignments")
    if X.shape[0] < 2:
        raise DataError("need at least 2 patches to compare variances")
    if idx.size and idx.min() < 0:
        raise DomainError("assignments must be non-negative")
    if not np.isfinite(X).all():
        raise DomainError("features contain non-finite values")

    n = X.shape[0]
    mean = X.mean(axis=0)
    ss_tot = ((X - mean) ** 2).sum()
    v_global = float(ss_tot / (n * X.shape[1])) if pooled else float(
        ss_tot / ((n - 1) * X.shape[1])
    )
    if v_global <= 0.0:
        raise DegenerateInputError("all patches identical: global variance is zero")
    v_mean, codes_counted = _group_variances(idx, X, pooled)
    return VRRReport(
        v_mean=v_mean,
        v_global=v_global,
        vrr=1.0 - v_mean / v_global,
        codes_counted=codes_counted,
        total_patches=n,
    )


@dataclass
class VRRExperimentReport:
    """VRR under four assignment schemes on one image corpus.

    ``random_runs`` holds one report per seed for the uniform-random scheme;
    ``random_mean``/``random_spread`` are their mean and sample standard
    deviation.  The remaining schemes are deterministic given the codebooks
    and the flat-quantizer seed.
    """

    random_runs: list[VRRReport] = field(default_factory=list)
    random_mean: float = 0.0
    random_spread: float = 0.0
    semantic: VRRReport | None = None
    flat_kmeans: VRRReport | None = None
    hierarchical: VRRReport | None = None
    total_patches: int = 0
    vocab_size: int = 0

    def scheme_values(self) -> dict[str, float]:
        return {
            "random": self.random_mean,
            "semantic": self.semantic.vrr,
            "flat_kmeans": self.flat_kmeans.vrr,
            "hierarchical": self.hierarchical.vrr,
        }

    def records(self) -> dict[str, object]:
        out: dict[str, object] = {
            "total_patches": self.total_patches,
            "vocab_size": self.vocab_size,
            "vrr_random_mean": self.random_mean,
            "vrr_random_spread": self.random_spread,
            "vrr_random_seeds": len(self.random_runs),
        }
        for name, rep in (
            ("semantic", self.semantic),
            ("flat_kmeans", self.flat_kmeans),
            ("hierarchical", self.hierarchical),
        ):
            out[f"vrr_{name}"] = rep.vrr
            out[f"v_mean_{name}"] = rep.v_mean
            out[f"codes_counted_{name}"] = rep.codes_counted
        return out


def vrr_experiment(
    images: list[GrayImage],
    sem_cb: SemanticCodebook,
    hier: HierarchicalCodebook,
    spec: PatchSpec,
    seeds,
    *,
    pooled: bool = False,
    exclude_dc: bool = False,
    flat_epochs: int = 4,
    flat_seed: int | None = None,
    threads: int | None = None,
) -> VRRExperimentReport:
    """Compare VRR under four assignment schemes on an image corpus.

    Schemes: (a) uniform-random indices over the flat vocabulary, one run
    per seed; (b) semantic indices only; (c) a flat codebook of the same
    total size trained directly on the DCT features (the single-level
    reference); (d) hierarchical flat indices.
    """
    if not images:
        raise DataError("image corpus is empty")
    seeds = list(seeds)
    if not seeds:
        raise ArgumentError("need at least one seed for the random baseline")
    low = int(round(np.sqrt(sem_cb.dim_sem)))
    if low * low != sem_cb.dim_sem:
        raise ArgumentError(
            f"semantic dim {sem_cb.dim_sem} is not a square low band; "
            "this experiment derives proxy features from the codebook dim"
        )

    dct_rows = []
    sem_assign = []
    flat_assign = []
    for img in images:
        pix = pixel_features(img, spec)
        sem = semantic_proxy_features(img, spec, low=low)
        result = quantize_hierarchical(sem, pix, hier, threads=threads)
        dct_rows.append(pix.cells())
        sem_assign.append(result.tokens.sem_idx.ravel())
        flat_assign.append(result.tokens.flat_idx.ravel())
    X = np.concatenate(dct_rows, axis=0)
    if exclude_dc:
        X = X[:, 1:]
    sem_idx = np.concatenate(sem_assign)
    flat_idx = np.concatenate(flat_assign)
    n = X.shape[0]
    vocab = hier.vocab_size

    report = VRRExperimentReport(total_patches=n, vocab_size=vocab)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        report.random_runs.append(vrr(rng.integers(0, vocab, size=n), X, pooled=pooled))
    values = np.array([r.vrr for r in report.random_runs])
    report.random_mean = float(values.mean())
    report.random_spread = float(values.std(ddof=1)) if values.size > 1 else 0.0

    report.semantic = vrr(sem_idx, X, pooled=pooled)

    # kmeans++ needs at least vocab distinct samples; tiny corpora fall back
    # to plain sampling for the flat reference quantizer.
    flat_cfg = TrainConfig(
        k=vocab,
        m=1,
        momentum=hier.momentum,
        epochs=flat_epochs,
        batch_size=4096,
        seed=seeds[0] if flat_seed is None else flat_seed,
        init="kmeanspp" if n >= vocab else "random_sample",
    )
    grid = FeatureGrid(X.astype(np.float32)[None, :, :])
    flat_cb, _ = train_semantic_codebook([grid], flat_cfg, threads=threads)
    flat_codes, _ = nearest_codes(X, flat_cb.vectors, threads=threads)
    report.flat_kmeans = vrr(flat_codes, X, pooled=pooled)

    report.hierarchical = vrr(flat_idx, X, pooled=pooled)
    return report


def semantic_distill_loss(a, b) -> float:
    """Cosine-plus-L1 discrepancy between two aligned vector sets.

    Mean over vectors of (1 - cosine similarity) plus the mean absolute
    elementwise difference.  Zero iff the sets are identical.
    """
    A = np.asarray(a, dtype=np.float64)
    B = np.asarray(b, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if B.ndim == 1:
        B = B[None, :]
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeError(f"vector sets must be aligned 2-D, got {A.shape} vs {B.shape}")
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise DomainError("vector sets contain non-finite values")
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise DomainError("cosine similarity undefined for zero vectors")
    # 1 - cos == |a/|a| - b/|b||^2 / 2, which is exactly zero (and never
    # negative) when the sets coincide.
    one_minus_cos = 0.5 * ((A / na - B / nb) ** 2).sum(axis=1)
    return float(one_minus_cos.mean() + np.abs(A - B).mean())


def reconstruction_metrics(orig: GrayImage, recon: GrayImage) -> tuple[float, float]:
    """(mse, psnr) between two images; psnr is +inf when they match."""
    if (orig.height, orig.width) != (recon.height, recon.width):
        raise ShapeError(
            f"image sizes differ: {orig.height}x{orig.width} vs "
            f"{recon.height}x{recon.width}"
        )
    diff = orig.data.astype(np.float64) - recon.data.astype(np.float64)
    mse = float((diff * diff).mean())
    psnr = float("inf") if mse == 0.0 else 10.0 * np.log10(1.0 / mse)
    return mse, psnr
