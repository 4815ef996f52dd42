from __future__ import annotations

import numpy as np
import pytest

from hiervq import (
    FeatureGrid,
    GrayImage,
    PatchSpec,
    dct2,
    embed_low_band,
    idct2,
    load_image,
    pixel_features,
    reconstruct_image,
    save_image_pgm,
    semantic_proxy_features,
)
from hiervq.errors import ArgumentError, DataError, DomainError, FormatError, ParseError, ShapeError
from hiervq.features import _dct_matrix

from conftest import make_image
from oracles import direct_dct2


class TestLoadImage:
    def test_p5_grayscale(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
        img = load_image(path)
        np.testing.assert_array_equal(img.data, [[0.0, 1.0], [0.0, 1.0]])

    def test_p6_white_point(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 255, 255]))
        assert load_image(path).data[0, 0] == pytest.approx(1.0)

    def test_p6_pure_red_luma(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        assert load_image(path).data[0, 0] == pytest.approx(0.299, abs=1e-6)

    def test_p2_ascii(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_text("P2\n# a comment\n3 1\n255\n0 128 255\n")
        np.testing.assert_allclose(
            load_image(path).data, [[0.0, 128 / 255, 1.0]], atol=1e-7
        )

    def test_p3_ascii_luma(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_text("P3\n1 1\n255\n0 255 0\n")
        assert load_image(path).data[0, 0] == pytest.approx(0.587, abs=1e-6)

    def test_unsupported_magic(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P7\n1 1\n255\n\x00")
        with pytest.raises(FormatError):
            load_image(path)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError):
            load_image(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(ParseError, match="truncated"):
            load_image(path)

    def test_save_load_round_trip(self, tmp_path):
        img = make_image(32, seed=0)
        path = tmp_path / "img.pgm"
        save_image_pgm(img, path)
        loaded = load_image(path)
        # 8-bit quantization rounds to the nearest level.
        assert np.abs(loaded.data - img.data).max() <= 0.5 / 255 + 1e-7


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(DomainError):
            GrayImage(np.array([[1.5]]))

    def test_rejects_nan(self):
        with pytest.raises(DomainError):
            GrayImage(np.array([[np.nan]]))


class TestDct:
    def test_orthonormal_matrix(self):
        for p in (1, 2, 4, 8, 16):
            mat = _dct_matrix(p)
            np.testing.assert_allclose(mat @ mat.T, np.eye(p), atol=1e-12)

    def test_full_2d_transform_orthonormal(self):
        # The P^2 x P^2 separable transform is the Kronecker square of the
        # 1-D matrix.
        mat = _dct_matrix(8)
        full = np.kron(mat, mat)
        np.testing.assert_allclose(full @ full.T, np.eye(64), atol=1e-6)

    def test_constant_patch_closed_form(self):
        c = 0.37
        coeffs = dct2(np.full((8, 8), c))
        assert coeffs[0, 0] == pytest.approx(8.0 * c, abs=1e-9)
        rest = coeffs.copy()
        rest[0, 0] = 0.0
        np.testing.assert_allclose(rest, 0.0, atol=1e-12)

    def test_zero_patch(self):
        np.testing.assert_array_equal(dct2(np.zeros((4, 4))), np.zeros((4, 4)))

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            patch = rng.standard_normal((8, 8))
            np.testing.assert_allclose(dct2(patch), direct_dct2(patch), atol=1e-6)

    def test_round_trip_and_parseval(self):
        rng = np.random.default_rng(1)
        for p in (1, 3, 8):
            patch = rng.standard_normal((p, p))
            coeffs = dct2(patch)
            np.testing.assert_allclose(idct2(coeffs), patch, atol=1e-6)
            energy_in = (patch**2).sum()
            energy_out = (coeffs**2).sum()
            assert abs(energy_in - energy_out) <= 1e-6 * max(energy_in, 1e-30)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            dct2(np.zeros((2, 3)))


class TestPixelFeatures:
    def test_shape(self):
        img = GrayImage(np.zeros((16, 16)))
        grid = pixel_features(img, PatchSpec(8))
        assert (grid.height, grid.width, grid.dim) == (2, 2, 64)

    def test_uniform_image_dc_only(self):
        img = GrayImage(np.full((16, 16), 0.5))
        grid = pixel_features(img, PatchSpec(8))
        cells = grid.cells()
        np.testing.assert_allclose(cells[:, 0], 8 * 0.5, atol=1e-6)
        np.testing.assert_allclose(cells[:, 1:], 0.0, atol=1e-6)

    def test_first_cell_equals_dct_of_top_left_patch(self):
        img = make_image(24, seed=1)
        grid = pixel_features(img, PatchSpec(8))
        expected = dct2(img.data[:8, :8].astype(np.float64))
        np.testing.assert_allclose(
            grid.data[0, 0].reshape(8, 8), expected, atol=1e-6
        )

    def test_center_crop_on_odd_sizes(self):
        img = GrayImage(np.random.default_rng(2).uniform(0, 1, (19, 21)))
        grid = pixel_features(img, PatchSpec(8))
        assert (grid.height, grid.width) == (2, 2)

    def test_too_small_image(self):
        img = GrayImage(np.zeros((4, 4)))
        with pytest.raises(DataError):
            pixel_features(img, PatchSpec(8))


class TestSemanticProxyFeatures:
    def test_low_equals_patch_degenerates_to_pixel_features(self):
        img = make_image(16, seed=3)
        spec = PatchSpec(8)
        full = pixel_features(img, spec)
        proxy = semantic_proxy_features(img, spec, low=8)
        np.testing.assert_array_equal(proxy.data, full.data)

    def test_low_one_is_dc_only(self):
        img = make_image(16, seed=4)
        spec = PatchSpec(8)
        proxy = semantic_proxy_features(img, spec, low=1)
        full = pixel_features(img, spec)
        np.testing.assert_allclose(proxy.cells()[:, 0], full.cells()[:, 0], atol=1e-6)
        assert proxy.dim == 1

    def test_high_band_invisible(self):
        # Two patches that differ only outside the LxL block give identical
        # proxy vectors.
        rng = np.random.default_rng(5)
        coeffs = rng.standard_normal((8, 8))
        variant = coeffs.copy()
        variant[5:, 5:] += 3.0
        patch_a = idct2(coeffs)
        patch_b = idct2(variant)
        shift = min(patch_a.min(), patch_b.min())
        scale = max(patch_a.max(), patch_b.max()) - shift + 1e-9
        img_a = GrayImage((patch_a - shift) / scale)
        img_b = GrayImage((patch_b - shift) / scale)
        pa = semantic_proxy_features(img_a, PatchSpec(8), low=4)
        pb = semantic_proxy_features(img_b, PatchSpec(8), low=4)
        np.testing.assert_allclose(pa.data, pb.data, atol=1e-5)

    def test_low_exceeds_patch(self):
        img = GrayImage(np.zeros((8, 8)))
        with pytest.raises(ArgumentError):
            semantic_proxy_features(img, PatchSpec(8), low=9)


class TestReconstruction:
    def test_unquantized_round_trip(self):
        img = make_image(40, seed=6)
        spec = PatchSpec(8)
        recon = reconstruct_image(pixel_features(img, spec), spec)
        assert np.abs(recon.data - img.data[:40, :40]).max() < 1e-6
        from hiervq import reconstruction_metrics

        _, psnr = reconstruction_metrics(img, recon)
        assert psnr > 60.0

    def test_zero_features_black_image(self):
        grid = FeatureGrid(np.zeros((2, 3, 16)))
        recon = reconstruct_image(grid, PatchSpec(4))
        assert (recon.height, recon.width) == (8, 12)
        np.testing.assert_array_equal(recon.data, 0.0)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruct_image(FeatureGrid(np.zeros((1, 1, 10))), PatchSpec(4))

    def test_embed_low_band_zero_pads(self):
        rng = np.random.default_rng(7)
        low_grid = FeatureGrid(rng.standard_normal((2, 2, 4)))
        full = embed_low_band(low_grid, PatchSpec(4))
        assert full.dim == 16
        blocks = full.data.reshape(2, 2, 4, 4)
        np.testing.assert_array_equal(
            blocks[:, :, :2, :2].reshape(2, 2, 4), low_grid.data
        )
        np.testing.assert_array_equal(blocks[:, :, 2:, :], 0.0)
        np.testing.assert_array_equal(blocks[:, :, :2, 2:], 0.0)

    def test_embed_low_band_rejects_non_square(self):
        with pytest.raises(ArgumentError):
            embed_low_band(FeatureGrid(np.zeros((1, 1, 5))), PatchSpec(4))

    def test_quantized_beats_low_band_only(self, corpus, corpus_spec, trained):
        # Pixel-quantized reconstruction keeps some high-frequency energy
        # that the low-band-only path zeroes out entirely.
        from hiervq import (
            quantize_hierarchical,
            quantize_semantic,
            reconstruction_metrics,
            semantic_proxy_features as proxy,
        )

        img = corpus[0]
        hier = trained["hier"]
        sem = proxy(img, corpus_spec, low=4)
        pix = pixel_features(img, corpus_spec)
        result = quantize_hierarchical(sem, pix, hier)
        recon_h = reconstruct_image(result.quantized_pix, corpus_spec)
        _, q_sem = quantize_semantic(sem, trained["sem_cb"])
        recon_s = reconstruct_image(embed_low_band(q_sem, corpus_spec), corpus_spec)
        ref = GrayImage(img.data[: recon_h.height, : recon_h.width])
        mse_h, _ = reconstruction_metrics(ref, recon_h)
        mse_s, _ = reconstruction_metrics(ref, recon_s)
        assert mse_h < mse_s
