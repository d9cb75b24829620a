"""Tokenization: shape arithmetic under the reference geometry, partition
locality, center-crop indexing, and the positional tables."""

import numpy as np
import pytest

from ssmamba.autodiff import ShapeError, Tensor
from ssmamba.tokens import (
    TokenSeq,
    add_positional,
    band_group_index,
    center_crop,
    init_tokenizer,
    sinusoidal_table_1d,
    sinusoidal_table_2d,
    spatial_patch_index,
    spatial_tokenize,
    spectral_map,
    spectral_tokenize,
)


def paper_tokenizer(rng=None):
    rng = rng or np.random.default_rng(0)
    return init_tokenizer(rng, h=27, w=27, bands=200, p_spa=3, p_spe=2,
                          s_center=3, d=64, d_prime=32)


class TestSpectralMap:
    def test_reference_shape(self):
        tok = paper_tokenizer()
        sample = np.random.default_rng(1).uniform(0, 1, (27, 27, 200)).astype(np.float32)
        assert spectral_map(sample, tok).shape == (729, 32)

    def test_constant_input_gives_constant_rows(self):
        tok = paper_tokenizer()
        mapped = spectral_map(np.full((27, 27, 200), 0.25, dtype=np.float32), tok).data
        assert np.allclose(mapped, mapped[0], atol=1e-12)

    def test_per_pixel_locality(self):
        tok = paper_tokenizer()
        rng = np.random.default_rng(2)
        sample = rng.uniform(0, 1, (27, 27, 200)).astype(np.float32)
        base = spectral_map(sample, tok).data
        bumped = sample.copy()
        bumped[5, 7] += 0.5
        out = spectral_map(bumped, tok).data
        changed = np.flatnonzero(np.abs(out - base).max(axis=1) > 0)
        assert changed.tolist() == [5 * 27 + 7]

    def test_geometry_mismatch(self):
        tok = paper_tokenizer()
        with pytest.raises(ShapeError):
            spectral_map(np.zeros((27, 27, 100), dtype=np.float32), tok)


class TestSpatialTokenize:
    def test_patch_count(self):
        tok = paper_tokenizer()
        mapped = Tensor(np.random.default_rng(0).standard_normal((729, 32)).astype(np.float32))
        assert spatial_tokenize(mapped, tok).shape == (81, 64)

    def test_single_patch_when_window_equals_patch(self):
        rng = np.random.default_rng(1)
        tok = init_tokenizer(rng, h=3, w=3, bands=4, p_spa=3, p_spe=2,
                             s_center=3, d=8, d_prime=4, spectral=False)
        mapped = rng.standard_normal((9, 4)).astype(np.float32)
        out = spatial_tokenize(Tensor(mapped), tok)
        assert out.shape == (1, 8)
        assert np.allclose(out.data, mapped.reshape(1, -1) @ tok.e_spa.data, atol=1e-6)

    def test_patch_locality(self):
        tok = paper_tokenizer()
        rng = np.random.default_rng(2)
        mapped = rng.standard_normal((729, 32)).astype(np.float32)
        base = spatial_tokenize(Tensor(mapped), tok).data
        # pixel (4, 7) lives in patch (1, 2) = token 1*9 + 2
        bumped = mapped.copy()
        bumped[4 * 27 + 7] += 1.0
        out = spatial_tokenize(Tensor(bumped), tok).data
        changed = np.flatnonzero(np.abs(out - base).max(axis=1) > 0)
        assert changed.tolist() == [11]

    def test_index_grid_row_major(self):
        idx = spatial_patch_index(6, 6, 3)
        assert idx.shape == (4, 9)
        assert idx[0].tolist() == [0, 1, 2, 6, 7, 8, 12, 13, 14]
        assert idx[3].tolist() == [21, 22, 23, 27, 28, 29, 33, 34, 35]

    def test_non_divisible_rejected(self):
        with pytest.raises(ShapeError):
            spatial_patch_index(7, 7, 3)


class TestCenterCrop:
    def test_reference_window(self):
        sample = np.arange(27 * 27 * 2).reshape(27, 27, 2)
        crop = center_crop(sample, 3)
        assert np.array_equal(crop, sample[12:15, 12:15])

    def test_single_pixel(self):
        sample = np.arange(5 * 5 * 3).reshape(5, 5, 3)
        assert np.array_equal(center_crop(sample, 1), sample[2:3, 2:3])

    def test_constant_stays_constant(self):
        crop = center_crop(np.full((9, 9, 4), 3.5), 3)
        assert np.all(crop == 3.5)

    def test_contract_errors(self):
        sample = np.zeros((9, 9, 4))
        with pytest.raises(ShapeError):
            center_crop(sample, 4)  # even
        with pytest.raises(ShapeError):
            center_crop(sample, 11)  # larger than the scene


class TestSpectralTokenize:
    def test_reference_shape(self):
        tok = paper_tokenizer()
        crop = np.random.default_rng(0).uniform(0, 1, (3, 3, 200)).astype(np.float32)
        assert spectral_tokenize(crop, tok).shape == (100, 64)

    def test_single_token_when_bands_equal_group(self):
        rng = np.random.default_rng(1)
        tok = init_tokenizer(rng, h=9, w=9, bands=2, p_spa=3, p_spe=2,
                             s_center=3, d=8, d_prime=4, spatial=False)
        out = spectral_tokenize(rng.uniform(0, 1, (3, 3, 2)).astype(np.float32), tok)
        assert out.shape == (1, 8)

    def test_band_locality(self):
        tok = paper_tokenizer()
        rng = np.random.default_rng(2)
        crop = rng.uniform(0, 1, (3, 3, 200)).astype(np.float32)
        base = spectral_tokenize(crop, tok).data
        bumped = crop.copy()
        bumped[:, :, 7] += 0.5  # band 7 -> token 3 (bands 6, 7)
        out = spectral_tokenize(bumped, tok).data
        changed = np.flatnonzero(np.abs(out - base).max(axis=1) > 0)
        assert changed.tolist() == [3]

    def test_band_groups_ascending(self):
        idx = band_group_index(8, 2)
        assert idx.tolist() == [[0, 1], [2, 3], [4, 5], [6, 7]]
        with pytest.raises(ShapeError):
            band_group_index(7, 2)


class TestPositional:
    def test_tables_bounded(self):
        assert np.abs(sinusoidal_table_1d(100, 64)).max() <= 1.0 + 1e-12
        assert np.abs(sinusoidal_table_2d(9, 9, 64)).max() <= 1.0 + 1e-12

    def test_distinct_grid_positions_distinct_rows(self):
        table = sinusoidal_table_2d(9, 9, 64)
        assert len({tuple(np.round(r, 12)) for r in table}) == 81

    def test_addition_is_invertible(self):
        tok = paper_tokenizer()
        # exact cases: zero tokens, and tokens equal to the table (doubling
        # is exact in binary floating point)
        zero = TokenSeq(tokens=Tensor(np.zeros((81, 64), dtype=np.float32)), kind="spatial")
        assert np.array_equal(add_positional(zero, tok).tokens.data - tok.pos_spa,
                              np.zeros((81, 64), dtype=np.float32))
        same = TokenSeq(tokens=Tensor(tok.pos_spa.copy()), kind="spatial")
        assert np.array_equal(add_positional(same, tok).tokens.data - tok.pos_spa,
                              tok.pos_spa)
        # general case recovers to rounding precision
        rng = np.random.default_rng(3)
        tokens = rng.standard_normal((81, 64)).astype(np.float32)
        seq = add_positional(TokenSeq(tokens=Tensor(tokens), kind="spatial"), tok)
        assert np.allclose(seq.tokens.data - tok.pos_spa, tokens, atol=1e-6)

    def test_double_application_guarded(self):
        tok = paper_tokenizer()
        seq = TokenSeq(tokens=Tensor(np.zeros((81, 64), dtype=np.float32)), kind="spatial")
        once = add_positional(seq, tok)
        with pytest.raises(ValueError):
            add_positional(once, tok)

    def test_odd_dimension_rejected_for_2d(self):
        with pytest.raises(ShapeError):
            sinusoidal_table_2d(3, 3, 7)


class TestEndToEndShapes:
    def test_reference_configuration(self):
        tok = paper_tokenizer()
        sample = np.random.default_rng(5).uniform(0, 1, (27, 27, 200)).astype(np.float32)
        z_spa = spatial_tokenize(spectral_map(sample, tok), tok)
        z_spe = spectral_tokenize(center_crop(sample, 3), tok)
        assert z_spa.shape == (81, 64)
        assert z_spe.shape == (100, 64)

    def test_tokenization_deterministic(self):
        tok = paper_tokenizer()
        sample = np.random.default_rng(6).uniform(0, 1, (27, 27, 200)).astype(np.float32)
        a = spatial_tokenize(spectral_map(sample, tok), tok).data
        b = spatial_tokenize(spectral_map(sample, tok), tok).data
        assert np.array_equal(a, b)
