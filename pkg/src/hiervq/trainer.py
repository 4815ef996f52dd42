"""Two-stage codebook training.

Stage 1 learns the semantic codebook with exponential-moving-average updates
and returns it frozen.  Stage 2 routes paired pixel features through the
frozen semantic assignments and EMA-trains one pixel sub-codebook per
semantic code; the semantic codebook is never touched, so the stages cannot
interfere.

Per batch, each assigned code moves toward the mean of its assigned vectors:

    c_k <- momentum * c_k + (1 - momentum) * mean(assigned z_i)

Codes with no assignments in a batch are left completely unchanged
(vectors and EMA accumulators alike); persistently unassigned codes are
revived by the dead-code rule instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import FeatureGrid, HierarchicalCodebook, PixelSubCodebook, SemanticCodebook
from .errors import (
    ArgumentError,
    ContractError,
    DataError,
    FrozenCodebookError,
    InitError,
    RangeError,
    ShapeError,
)
from .quantizer import nearest_codes

__all__ = [
    "TrainConfig",
    "UsageStats",
    "EpochMetrics",
    "init_codebook",
    "ema_update",
    "train_semantic_codebook",
    "train_pixel_subcodebooks",
    "reinit_dead_codes",
    "compute_usage",
]


@dataclass
class TrainConfig:
    """Knobs for either training stage."""

    k: int = 16384
    m: int = 12
    momentum: float = 0.99
    epochs: int = 10
    batch_size: int = 1024
    seed: int = 0
    dead_code_epochs: int = 2
    init: str = "kmeanspp"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ArgumentError(f"k must be >= 1, got {self.k}")
        if self.m < 1:
            raise ArgumentError(f"m must be >= 1, got {self.m}")
        if not (0.0 < self.momentum < 1.0):
            raise ArgumentError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dead_code_epochs < 1:
            raise ArgumentError(
                f"dead_code_epochs must be >= 1, got {self.dead_code_epochs}"
            )
        if self.init not in ("kmeanspp", "random_sample"):
            raise ArgumentError(f"unknown init method {self.init!r}")


@dataclass
class UsageStats:
    """Per-code assignment counts and the derived usage percentage."""

    assigned_counts: np.ndarray
    usage_percent: float

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "UsageStats":
        counts = np.asarray(counts, dtype=np.int64)
        k = counts.size
        pct = 100.0 * int((counts > 0).sum()) / k if k else 0.0
        return cls(assigned_counts=counts, usage_percent=pct)


@dataclass
class EpochMetrics:
    """One line-delimited training record."""

    epoch: int
    distortion: float
    usage_percent: float
    revived_count: int

    def record(self) -> str:
        return (
            f"epoch={self.epoch} distortion={self.distortion:.6e} "
            f"usage_percent={self.usage_percent:.2f} revived_count={self.revived_count}"
        )


def compute_usage(assignments, k: int) -> UsageStats:
    """Exact per-code counts over a dataset and the percent of codes hit."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    idx = np.asarray(assignments, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise RangeError(f"assignments must lie in [0, {k})")
    return UsageStats.from_counts(np.bincount(idx, minlength=k))


def init_codebook(samples, k: int, method: str = "kmeanspp", seed=0) -> np.ndarray:
    """Draw k initial code vectors from the sample set.

    ``kmeanspp`` uses D^2 sampling (first center uniform, subsequent centers
    proportional to squared distance from the nearest chosen center) and
    requires at least k distinct samples.  ``random_sample`` draws uniformly,
    without replacement whenever the sample set is large enough.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"samples must be a non-empty 2-D matrix, got {X.shape}")
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    n = X.shape[0]

    if method == "random_sample":
        chosen = rng.choice(n, size=k, replace=n < k)
        return X[chosen].astype(np.float32)
    if method != "kmeanspp":
        raise ArgumentError(f"unknown init method {method!r}")

    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            raise InitError(
                f"kmeans++ needs at least {k} distinct samples, exhausted after {i}"
            )
        # Inverse-CDF draw keeps the procedure reproducible for a given seed.
        target = rng.random() * total
        pick = int(np.searchsorted(np.cumsum(d2), target, side="right"))
        pick = min(pick, n - 1)
        chosen[i] = pick
        d2 = np.minimum(d2, ((X - X[pick]) ** 2).sum(axis=1))
    return X[chosen].astype(np.float32)


def _ema_step(
    vectors: np.ndarray,
    sizes: np.ndarray,
    sums: np.ndarray,
    momentum: float,
    batch: np.ndarray,
    assignments: np.ndarray,
) -> None:
    k = vectors.shape[0]
    counts = np.bincount(assignments, minlength=k).astype(np.float64)
    batch_sums = np.zeros((k, vectors.shape[1]), dtype=np.float64)
    np.add.at(batch_sums, assignments, batch)
    hit = counts > 0
    means = batch_sums[hit] / counts[hit, None]
    old = vectors[hit].astype(np.float64)
    vectors[hit] = (momentum * old + (1.0 - momentum) * means).astype(np.float32)
    sizes[hit] = (
        momentum * sizes[hit].astype(np.float64) + (1.0 - momentum) * counts[hit]
    ).astype(np.float32)
    sums[hit] = (
        momentum * sums[hit].astype(np.float64) + (1.0 - momentum) * batch_sums[hit]
    ).astype(np.float32)


def ema_update(cb, batch, assignments, *, momentum: float | None = None) -> None:
    """Apply one EMA batch update to a semantic or pixel (sub-)codebook.

    ``momentum`` defaults to the codebook's own momentum and must be supplied
    for sub-codebooks, which do not carry one.
    """
    if getattr(cb, "frozen", False):
        raise FrozenCodebookError("cannot update a frozen codebook")
    if momentum is None:
        momentum = getattr(cb, "momentum", None)
        if momentum is None:
            raise ArgumentError("momentum is required for codebooks that carry none")
    if not (0.0 < momentum < 1.0):
        raise ArgumentError(f"momentum must lie in (0, 1), got {momentum}")
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError(f"batch must be a non-empty 2-D matrix, got {X.shape}")
    if X.shape[1] != cb.vectors.shape[1]:
        raise ShapeError(
            f"batch dim {X.shape[1]} != codebook dim {cb.vectors.shape[1]}"
        )
    idx = np.asarray(assignments, dtype=np.int64).ravel()
    if idx.size != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} batch vectors but {idx.size} assignments")
    if idx.min() < 0 or idx.max() >= cb.vectors.shape[0]:
        raise RangeError(f"assignments must lie in [0, {cb.vectors.shape[0]})")
    _ema_step(cb.vectors, cb.ema_cluster_size, cb.ema_sum, float(momentum), X, idx)


def reinit_dead_codes(cb, usage: UsageStats, reservoir, seed: int = 0) -> int:
    """Revive every code with zero assignments in ``usage``.

    Each dead code is reset, in index order, to the reservoir vector whose
    squared distance to its current nearest code is largest (recomputed after
    every revival, so no reservoir vector is claimed twice while alternatives
    remain).  EMA state for revived codes is cleared.  Ties take the lowest
    reservoir index; ``seed`` is accepted for interface uniformity but the
    rule is deterministic.
    """
    del seed
    if getattr(cb, "frozen", False):
        raise FrozenCodebookError("cannot revive codes in a frozen codebook")
    R = np.asarray(reservoir, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 1:
        raise DataError(f"reservoir must be a non-empty 2-D matrix, got {R.shape}")
    counts = np.asarray(usage.assigned_counts)
    if counts.size != cb.vectors.shape[0]:
        raise ShapeError(
            f"usage covers {counts.size} codes, codebook has {cb.vectors.shape[0]}"
        )
    dead = np.nonzero(counts == 0)[0]
    for code in dead:
        _, d2 = nearest_codes(R, cb.vectors)
        pick = int(np.argmax(d2))
        cb.vectors[code] = R[pick].astype(np.float32)
        cb.ema_cluster_size[code] = 0.0
        cb.ema_sum[code] = 0.0
    return int(dead.size)


def _collect_cells(features: Iterable[FeatureGrid], what: str) -> np.ndarray:
    grids = list(features)
    if not grids:
        raise DataError(f"no {what} grids provided")
    dim = grids[0].dim
    for g in grids:
        if g.dim != dim:
            raise ShapeError(f"{what} dims differ across the stream: {g.dim} vs {dim}")
    return np.concatenate([g.cells() for g in grids], axis=0)


def _batches(n: int, batch_size: int):
    for s in range(0, n, batch_size):
        yield s, min(s + batch_size, n)


def train_semantic_codebook(
    features: Iterable[FeatureGrid],
    cfg: TrainConfig,
    *,
    threads: int | None = None,
) -> tuple[SemanticCodebook, list[EpochMetrics]]:
    """Stage 1: EMA-train the semantic codebook and return it frozen.

    Each epoch is one pass over all cells in stream order; batches are
    contiguous slices.  Assignment uses the exact nearest-code kernel, the
    update phase merges per-code batch means deterministically, and codes
    unassigned for ``cfg.dead_code_epochs`` consecutive epochs are revived
    from the most recent batch.
    """
    X = _collect_cells(features, "feature")
    if X.shape[0] < 1:
        raise DataError("feature stream contains no cells")
    vectors = init_codebook(
        X, cfg.k, cfg.init, seed=np.random.SeedSequence(cfg.seed).spawn(1)[0]
    )
    cb = SemanticCodebook(vectors, momentum=cfg.momentum, frozen=False)
    metrics = _train_loop(cb, X, cfg, momentum=cfg.momentum, threads=threads)
    cb.freeze()
    return cb, metrics


def _train_loop(
    cb,
    X: np.ndarray,
    cfg: TrainConfig,
    *,
    momentum: float,
    threads: int | None,
) -> list[EpochMetrics]:
    n = X.shape[0]
    k = cb.vectors.shape[0]
    metrics: list[EpochMetrics] = []
    zero_epochs = np.zeros(k, dtype=np.int64)
    for epoch in range(1, cfg.epochs + 1):
        sq_sum = 0.0
        epoch_counts = np.zeros(k, dtype=np.int64)
        reservoir = X[:1]
        for s, e in _batches(n, cfg.batch_size):
            batch = X[s:e]
            idx, d2 = nearest_codes(batch, cb.vectors, threads=threads)
            sq_sum += float(d2.sum())
            epoch_counts += np.bincount(idx, minlength=k)
            ema_update(cb, batch, idx, momentum=momentum)
            reservoir = batch
        zero_epochs = np.where(epoch_counts > 0, 0, zero_epochs + 1)
        revived = 0
        dead = zero_epochs >= cfg.dead_code_epochs
        if dead.any():
            # Synthesize a usage window that is zero exactly for the codes
            # idle over the whole dead_code_epochs span.
            window = UsageStats.from_counts(np.where(dead, 0, 1))
            revived = reinit_dead_codes(cb, window, reservoir, seed=cfg.seed)
            zero_epochs[dead] = 0
        usage = UsageStats.from_counts(epoch_counts)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                distortion=sq_sum / n,
                usage_percent=usage.usage_percent,
                revived_count=revived,
            )
        )
    return metrics


def _init_sub_vectors(
    routed: np.ndarray, m: int, method: str, seed, dim: int
) -> np.ndarray:
    """Initial vectors for one sub-codebook given its routed pixel vectors.

    Falls back gracefully when a code attracts fewer vectors than m: sampling
    with replacement when any vectors exist, zeros when none do.
    """
    if routed.shape[0] == 0:
        return np.zeros((m, dim), dtype=np.float32)
    if routed.shape[0] >= m and method == "kmeanspp":
        try:
            return init_codebook(routed, m, "kmeanspp", seed=seed)
        except InitError:
            pass
    rng = np.random.default_rng(seed)
    chosen = rng.choice(routed.shape[0], size=m, replace=routed.shape[0] < m)
    return routed[chosen].astype(np.float32)


def train_pixel_subcodebooks(
    sem_features: Iterable[FeatureGrid],
    pix_features: Iterable[FeatureGrid],
    sem_cb: SemanticCodebook,
    cfg: TrainConfig,
    *,
    threads: int | None = None,
) -> tuple[HierarchicalCodebook, list[EpochMetrics]]:
    """Stage 2: train pixel sub-codebooks against a frozen semantic codebook.

    Every cell is routed once by its semantic assignment (the semantic
    codebook is frozen, so routing cannot drift), then each sub-codebook is
    EMA-trained on its routed pixel vectors only.  The semantic codebook is
    read, never written.
    """
    if not sem_cb.frozen:
        raise ContractError(
            "semantic codebook must be frozen before pixel training"
        )
    sem_grids = list(sem_features)
    pix_grids = list(pix_features)
    if not sem_grids or not pix_grids:
        raise DataError("both feature streams must be non-empty")
    if len(sem_grids) != len(pix_grids):
        raise ShapeError(
            f"{len(sem_grids)} semantic grids vs {len(pix_grids)} pixel grids"
        )
    for gs, gp in zip(sem_grids, pix_grids):
        if (gs.height, gs.width) != (gp.height, gp.width):
            raise ShapeError(
                f"paired grids must share height/width: {gs.height}x{gs.width} vs "
                f"{gp.height}x{gp.width}"
            )
    X_sem = _collect_cells(sem_grids, "semantic feature")
    X_pix = _collect_cells(pix_grids, "pixel feature")
    if X_sem.shape[1] != sem_cb.dim_sem:
        raise ShapeError(
            f"semantic feature dim {X_sem.shape[1]} != codebook dim {sem_cb.dim_sem}"
        )

    route, _ = nearest_codes(X_sem, sem_cb.vectors, threads=threads)
    order = np.argsort(route, kind="stable")
    bounds = np.searchsorted(route[order], np.arange(sem_cb.k + 1))
    seeds = np.random.SeedSequence(cfg.seed).spawn(sem_cb.k)

    dim_pix = X_pix.shape[1]
    subs = []
    for k in range(sem_cb.k):
        routed = X_pix[order[bounds[k] : bounds[k + 1]]]
        subs.append(
            PixelSubCodebook(_init_sub_vectors(routed, cfg.m, cfg.init, seeds[k], dim_pix))
        )

    n = X_pix.shape[0]
    metrics: list[EpochMetrics] = []
    zero_epochs = [np.zeros(cfg.m, dtype=np.int64) for _ in range(sem_cb.k)]
    for epoch in range(1, cfg.epochs + 1):
        sq_sum = 0.0
        flat_counts = np.zeros(sem_cb.k * cfg.m, dtype=np.int64)
        revived = 0
        for k in range(sem_cb.k):
            members = order[bounds[k] : bounds[k + 1]]
            if members.size == 0:
                continue
            sub = subs[k]
            epoch_counts = np.zeros(cfg.m, dtype=np.int64)
            reservoir = X_pix[members[:1]]
            for s, e in _batches(members.size, cfg.batch_size):
                batch = X_pix[members[s:e]]
                idx, d2 = nearest_codes(batch, sub.vectors, threads=threads)
                sq_sum += float(d2.sum())
                epoch_counts += np.bincount(idx, minlength=cfg.m)
                ema_update(sub, batch, idx, momentum=cfg.momentum)
                reservoir = batch
            zero_epochs[k] = np.where(epoch_counts > 0, 0, zero_epochs[k] + 1)
            dead = zero_epochs[k] >= cfg.dead_code_epochs
            if dead.any():
                window = UsageStats.from_counts(np.where(dead, 0, 1))
                revived += reinit_dead_codes(sub, window, reservoir, seed=cfg.seed)
                zero_epochs[k][dead] = 0
            flat_counts[k * cfg.m : (k + 1) * cfg.m] = epoch_counts
        usage = UsageStats.from_counts(flat_counts)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                distortion=sq_sum / n,
                usage_percent=usage.usage_percent,
                revived_count=revived,
            )
        )
    hier = HierarchicalCodebook(sem_cb, subs, momentum=cfg.momentum)
    return hier, metrics
