from __future__ import annotations

import numpy as np
import pytest

from hiervq import (
    GrayImage,
    HierarchicalCodebook,
    PatchSpec,
    PixelSubCodebook,
    SemanticCodebook,
    TrainConfig,
    pixel_features,
    semantic_proxy_features,
    train_pixel_subcodebooks,
    train_semantic_codebook,
)


def make_hier(k, m, d_sem, d_pix, seed=0, momentum=0.9, frozen=True):
    """Random hierarchical codebook for quantizer/vocab tests."""
    rng = np.random.default_rng(seed)
    sem = SemanticCodebook(
        rng.standard_normal((k, d_sem)), momentum=momentum, frozen=frozen
    )
    subs = [PixelSubCodebook(rng.standard_normal((m, d_pix))) for _ in range(k)]
    return HierarchicalCodebook(sem, subs, momentum=momentum)


def make_image(size, seed):
    """One synthetic grayscale image: smooth background, textured shapes,
    and fine grain everywhere so every patch carries high-band energy."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    gx, gy = rng.uniform(-1, 1, 2)
    img = 0.5 + 0.25 * (gx * x + gy * y)
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        radius = rng.uniform(0.08, 0.3)
        mask = (x - cx) ** 2 + (y - cy) ** 2 < radius**2
        kind = rng.integers(0, 3)
        freq = rng.uniform(8, 32)
        angle = rng.uniform(0, np.pi)
        wave = np.cos(2 * np.pi * freq * (np.cos(angle) * x + np.sin(angle) * y))
        if kind == 0:
            patterned = 0.5 + 0.4 * wave
        elif kind == 1:
            patterned = 0.5 + 0.4 * np.sign(wave)
        else:
            patterned = rng.uniform(0.1, 0.9) + 0.15 * wave
        img = np.where(mask, patterned, img)
    img += 0.04 * rng.standard_normal((size, size))
    img += 0.05 * np.cos(2 * np.pi * rng.uniform(20, 40) * x) * np.cos(
        2 * np.pi * rng.uniform(20, 40) * y
    )
    return GrayImage(np.clip(img, 0.0, 1.0))


def make_corpus(count, size, seed):
    return [make_image(size, seed * 1000 + i) for i in range(count)]


@pytest.fixture(scope="session")
def corpus():
    """Fixture corpus for the variance and reconstruction criteria."""
    return make_corpus(60, 128, seed=7)


@pytest.fixture(scope="session")
def corpus_spec():
    return PatchSpec(8)


@pytest.fixture(scope="session")
def trained(corpus, corpus_spec):
    """Both training stages run on the fixture corpus (K=256, m=8, L=4)."""
    sem_grids = [semantic_proxy_features(img, corpus_spec, low=4) for img in corpus]
    pix_grids = [pixel_features(img, corpus_spec) for img in corpus]
    cfg = TrainConfig(k=256, m=8, momentum=0.9, epochs=8, batch_size=4096, seed=11)
    sem_cb, sem_metrics = train_semantic_codebook(sem_grids, cfg)
    hier, pix_metrics = train_pixel_subcodebooks(sem_grids, pix_grids, sem_cb, cfg)
    return {
        "sem_cb": sem_cb,
        "hier": hier,
        "sem_metrics": sem_metrics,
        "pix_metrics": pix_metrics,
        "sem_grids": sem_grids,
        "pix_grids": pix_grids,
    }
