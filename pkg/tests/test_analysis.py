from __future__ import annotations

import numpy as np
import pytest

from hiervq import (
    GrayImage,
    reconstruction_metrics,
    semantic_distill_loss,
    vrr,
    vrr_experiment,
)
from hiervq.errors import DataError, DegenerateInputError, DomainError, ShapeError


class TestVrr:
    def test_identical_patches_per_code_gives_one(self):
        # Codes differ from each other but are internally constant.
        features = np.array(
            [[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [9.0, 1.0], [9.0, 1.0]]
        )
        assignments = [0, 0, 1, 1, 2, 2]
        report = vrr(assignments, features)
        assert report.v_mean == 0.0
        assert report.vrr == 1.0
        assert report.codes_counted == 3

    def test_single_code_gives_zero(self):
        rng = np.random.default_rng(0)
        features = rng.standard_normal((50, 4))
        report = vrr(np.zeros(50, dtype=int), features)
        assert report.v_mean == pytest.approx(report.v_global, rel=1e-12)
        assert report.vrr == pytest.approx(0.0, abs=1e-12)

    def test_random_assignment_near_zero(self):
        # Monte-Carlo oracle: uniform assignment carries no information, so
        # the unbiased within-code variance matches the global variance.
        rng_data = np.random.default_rng(1)
        features = rng_data.standard_normal((10_000, 8))
        for seed in range(5):
            rng = np.random.default_rng(seed)
            report = vrr(rng.integers(0, 256, size=10_000), features)
            assert abs(report.vrr) < 0.01

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(2)
        features = rng.standard_normal((200, 3))
        assignments = rng.integers(0, 10, size=200)
        perm = rng.permutation(10)
        base = vrr(assignments, features)
        relabeled = vrr(perm[assignments], features)
        assert relabeled.vrr == pytest.approx(base.vrr, rel=1e-12)
        assert relabeled.v_mean == pytest.approx(base.v_mean, rel=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        features = rng.standard_normal((150, 4))
        assignments = rng.integers(0, 12, size=150)
        base = vrr(assignments, features)
        shifted = vrr(assignments, features + np.float64([100.0, -7.0, 3.5, 0.25]))
        assert shifted.vrr == pytest.approx(base.vrr, rel=1e-9)

    def test_vrr_at_most_one(self):
        rng = np.random.default_rng(4)
        for seed in range(10):
            r = np.random.default_rng(seed)
            features = r.standard_normal((100, 2))
            report = vrr(r.integers(0, 7, size=100), features)
            assert report.vrr <= 1.0

    def test_degenerate_identical_patches(self):
        features = np.ones((10, 3))
        with pytest.raises(DegenerateInputError):
            vrr(np.arange(10) % 2, features)

    def test_misaligned_inputs(self):
        with pytest.raises(ShapeError):
            vrr([0, 1], np.zeros((3, 2)))

    def test_pooled_mode_monotone_under_refinement(self):
        # Splitting every code by a sub-label can only shrink the pooled
        # within-code variance.
        rng = np.random.default_rng(5)
        features = rng.standard_normal((400, 6))
        coarse = rng.integers(0, 8, size=400)
        sub = rng.integers(0, 4, size=400)
        fine = coarse * 4 + sub
        coarse_rep = vrr(coarse, features, pooled=True)
        fine_rep = vrr(fine, features, pooled=True)
        assert fine_rep.v_mean <= coarse_rep.v_mean + 1e-12
        assert fine_rep.vrr >= coarse_rep.vrr - 1e-12


class TestVrrExperiment:
    def test_orderings_and_determinism(self, corpus, corpus_spec, trained):
        small = corpus[:12]
        seeds = [0, 1, 2]
        rep1 = vrr_experiment(
            small, trained["sem_cb"], trained["hier"], corpus_spec, seeds, flat_epochs=2
        )
        for run in rep1.random_runs:
            assert run.vrr < rep1.semantic.vrr
        assert rep1.semantic.vrr < rep1.hierarchical.vrr
        rep2 = vrr_experiment(
            small, trained["sem_cb"], trained["hier"], corpus_spec, seeds, flat_epochs=2
        )
        assert rep1.records() == rep2.records()

    def test_exclude_dc_changes_features_not_contract(self, corpus, corpus_spec, trained):
        small = corpus[:6]
        rep = vrr_experiment(
            small,
            trained["sem_cb"],
            trained["hier"],
            corpus_spec,
            [0],
            flat_epochs=1,
            exclude_dc=True,
        )
        assert rep.semantic.total_patches == rep.hierarchical.total_patches

    def test_empty_corpus(self, corpus_spec, trained):
        with pytest.raises(DataError):
            vrr_experiment([], trained["sem_cb"], trained["hier"], corpus_spec, [0])


class TestSemanticDistillLoss:
    def test_identical_sets(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((10, 5))
        assert semantic_distill_loss(A, A) == 0.0

    def test_orthogonal_unit_vectors(self):
        assert semantic_distill_loss([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)

    def test_collinear_case(self):
        assert semantic_distill_loss([2.0, 0.0], [1.0, 0.0]) == pytest.approx(0.5)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((20, 4))
        B = rng.standard_normal((20, 4))
        assert semantic_distill_loss(A, B) == pytest.approx(
            semantic_distill_loss(B, A), rel=1e-12
        )

    def test_zero_vector_rejected(self):
        with pytest.raises(DomainError):
            semantic_distill_loss([0.0, 0.0], [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            semantic_distill_loss(np.zeros((2, 2)) + 1, np.zeros((3, 2)) + 1)


class TestReconstructionMetrics:
    def test_identical_images(self):
        img = GrayImage(np.full((4, 4), 0.25))
        mse, psnr = reconstruction_metrics(img, img)
        assert mse == 0.0
        assert psnr == float("inf")

    def test_black_vs_white(self):
        black = GrayImage(np.zeros((3, 3)))
        white = GrayImage(np.ones((3, 3)))
        mse, psnr = reconstruction_metrics(black, white)
        assert mse == pytest.approx(1.0)
        assert psnr == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_metrics(GrayImage(np.zeros((2, 2))), GrayImage(np.zeros((3, 3))))
