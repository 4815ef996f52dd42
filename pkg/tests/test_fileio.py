from __future__ import annotations

import struct

import numpy as np
import pytest

from hiervq import (
    FeatureGrid,
    load_codebook,
    load_feature_grid,
    save_codebook,
    save_feature_grid,
)
from hiervq.errors import FormatError, ParseError
from hiervq.fileio import CODEBOOK_MAGIC, FEATURE_MAGIC

from conftest import make_hier


def _codebook_fields(hier):
    yield hier.semantic.vectors
    yield hier.semantic.ema_cluster_size
    yield hier.semantic.ema_sum
    for sub in hier.subs:
        yield sub.vectors
        yield sub.ema_cluster_size
        yield sub.ema_sum


class TestCodebookRoundTrip:
    def test_bytes_identical_on_resave(self, tmp_path):
        hier = make_hier(k=4, m=2, d_sem=3, d_pix=2, seed=5)
        hier.semantic.ema_cluster_size[:] = [1.5, 0.0, 2.25, 3.0]
        hier.subs[1].ema_sum[:] = 0.125
        p1 = tmp_path / "a.sghc"
        p2 = tmp_path / "b.sghc"
        save_codebook(hier, p1)
        save_codebook(load_codebook(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_fields_reproduced(self, tmp_path):
        hier = make_hier(k=3, m=4, d_sem=2, d_pix=5, seed=9, momentum=0.75)
        path = tmp_path / "cb.sghc"
        save_codebook(hier, path)
        loaded = load_codebook(path)
        assert (loaded.k, loaded.m) == (3, 4)
        assert (loaded.dim_sem, loaded.dim_pix) == (2, 5)
        assert loaded.semantic.frozen is True
        assert loaded.momentum == pytest.approx(0.75, abs=1e-7)
        for got, want in zip(_codebook_fields(loaded), _codebook_fields(hier)):
            np.testing.assert_array_equal(got, want)

    def test_unfrozen_flag_round_trips(self, tmp_path):
        hier = make_hier(k=2, m=2, d_sem=2, d_pix=2, frozen=False)
        path = tmp_path / "cb.sghc"
        save_codebook(hier, path)
        assert load_codebook(path).semantic.frozen is False


class TestCodebookParseErrors:
    def _valid_bytes(self, tmp_path):
        hier = make_hier(k=4, m=2, d_sem=3, d_pix=2, seed=5)
        path = tmp_path / "cb.sghc"
        save_codebook(hier, path)
        return bytearray(path.read_bytes())

    def test_bad_magic(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        buf[:4] = b"XXXX"
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf))
        with pytest.raises(FormatError, match="bad magic"):
            load_codebook(bad)

    def test_version_mismatch(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        buf[4:8] = struct.pack("<I", 9)
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf))
        with pytest.raises(FormatError, match="version"):
            load_codebook(bad)

    def test_truncated_payload(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf[:-7]))
        with pytest.raises(ParseError, match="truncated"):
            load_codebook(bad)

    def test_declared_k_exceeds_sub_blocks(self, tmp_path):
        # File claims k=4 but carries only 3 sub-codebook blocks.
        hier = make_hier(k=4, m=2, d_sem=3, d_pix=2, seed=5)
        path = tmp_path / "cb.sghc"
        save_codebook(hier, path)
        buf = path.read_bytes()
        block = 4 * (2 * 2 + 2 + 2 * 2)
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(buf[: len(buf) - block])
        with pytest.raises(ParseError):
            load_codebook(bad)

    def test_trailing_garbage(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf) + b"\x00\x00\x00\x00")
        with pytest.raises(ParseError, match="trailing"):
            load_codebook(bad)

    def test_zero_dimension_header(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        buf[8:12] = struct.pack("<I", 0)  # k = 0
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf))
        with pytest.raises(ParseError, match="inconsistent"):
            load_codebook(bad)

    def test_momentum_out_of_range(self, tmp_path):
        buf = self._valid_bytes(tmp_path)
        buf[24:28] = struct.pack("<f", 1.5)
        bad = tmp_path / "bad.sghc"
        bad.write_bytes(bytes(buf))
        with pytest.raises(ParseError, match="momentum"):
            load_codebook(bad)


class TestFeatureGridFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        grid = FeatureGrid(rng.standard_normal((3, 5, 7)).astype(np.float32))
        path = tmp_path / "g.sghf"
        save_feature_grid(grid, path)
        loaded = load_feature_grid(path)
        np.testing.assert_array_equal(loaded.data, grid.data)

    def test_magic_and_layout(self, tmp_path):
        grid = FeatureGrid(np.zeros((1, 2, 3), dtype=np.float32))
        path = tmp_path / "g.sghf"
        save_feature_grid(grid, path)
        raw = path.read_bytes()
        assert raw[:4] == FEATURE_MAGIC
        assert struct.unpack("<IIII", raw[4:20]) == (1, 1, 2, 3)
        assert len(raw) == 20 + 4 * 6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "g.sghf"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError, match="bad magic"):
            load_feature_grid(path)

    def test_truncated(self, tmp_path):
        grid = FeatureGrid(np.zeros((2, 2, 2), dtype=np.float32))
        path = tmp_path / "g.sghf"
        save_feature_grid(grid, path)
        (tmp_path / "t.sghf").write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ParseError, match="truncated"):
            load_feature_grid(tmp_path / "t.sghf")

    def test_codebook_magic_differs(self):
        assert CODEBOOK_MAGIC != FEATURE_MAGIC
