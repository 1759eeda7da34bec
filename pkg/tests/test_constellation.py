import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.constellation import (CLASSES, ModScheme, constellation, demap_symbols, map_bits, min_distance)
from src.errors import ConfigError, ShapeError


class TestModScheme:

    def test_bits_match_order(self):
        for scheme in CLASSES:
            assert 2 ** scheme.bits_per_symbol == scheme.order
            assert len(constellation(scheme)) == scheme.order

    def test_labels_round_trip(self):
        assert [s.label for s in CLASSES] == [0, 1, 2, 3, 4]
        for scheme in CLASSES:
            assert ModScheme.from_label(scheme.label) is scheme

    def test_from_bits(self):
        assert ModScheme.from_bits(0) is ModScheme.NULL
        assert ModScheme.from_bits(1) is ModScheme.NULL
        assert ModScheme.from_bits(4) is ModScheme.QAM16
        with pytest.raises(ConfigError):
            ModScheme.from_bits(7)

    def test_null_has_no_label(self):
        with pytest.raises(ConfigError):
            _ = ModScheme.NULL.label
        with pytest.raises(ConfigError):
            constellation(ModScheme.NULL)


class TestConstellation:

    @pytest.mark.parametrize('scheme', CLASSES)
    def test_unit_energy(self, scheme):
        assert abs(np.mean(np.abs(constellation(scheme)) ** 2) - 1) < 1e-12

    @pytest.mark.parametrize('scheme', CLASSES)
    def test_points_distinct(self, scheme):
        assert len(np.unique(np.round(constellation(scheme), 9))) == scheme.order

    def test_min_distance_decreases_with_order(self):
        d = [min_distance(s) for s in CLASSES]
        assert all(a > b for a, b in zip(d, d[1:]))

    def test_qam32_is_a_cross(self):
        pts = constellation(ModScheme.QAM32)
        grid = np.round(pts * np.sqrt(20)).astype(complex)
        assert np.max(np.abs(grid.real)) == 5
        assert np.max(np.abs(grid.imag)) == 5
        # The 6x6 grid without its corners.
        assert not np.any((np.abs(grid.real) == 5) & (np.abs(grid.imag) == 5))

    @pytest.mark.parametrize('scheme', [ModScheme.QAM4, ModScheme.QAM8, ModScheme.QAM16, ModScheme.QAM64])
    def test_neighbours_differ_in_one_bit(self, scheme):
        pts = constellation(scheme)
        d_min = min_distance(scheme)
        for i in range(scheme.order):
            for j in range(i + 1, scheme.order):
                if abs(pts[i] - pts[j]) < d_min * (1 + 1e-9):
                    assert bin(i ^ j).count('1') == 1


class TestMapping:

    def test_qam4_zero_bits(self):
        assert_allclose(map_bits([0, 0], ModScheme.QAM4), [(1 + 1j) / np.sqrt(2)], atol=1e-12)

    def test_qam16_all_ones(self):
        assert_allclose(map_bits([1, 1, 1, 1], ModScheme.QAM16), [(-3 - 3j) / np.sqrt(10)], atol=1e-12)

    def test_indivisible_length(self):
        with pytest.raises(ShapeError):
            map_bits([0, 1, 1], ModScheme.QAM4)

    @pytest.mark.parametrize('bits', [[2, 0], [0, -1]])
    def test_non_binary_entries(self, bits):
        with pytest.raises(ShapeError):
            map_bits(bits, ModScheme.QAM4)

    @pytest.mark.parametrize('scheme', CLASSES)
    def test_round_trip(self, scheme, rng):
        bits = rng.integers(0, 2, 10_000 * scheme.bits_per_symbol)
        assert_array_equal(demap_symbols(map_bits(bits, scheme), scheme), bits)

    @pytest.mark.parametrize('scheme', CLASSES)
    def test_exact_points(self, scheme):
        words = np.arange(scheme.order)
        bits = ((words[:, None] >> np.arange(scheme.bits_per_symbol - 1, -1, -1)) & 1).ravel()
        assert_array_equal(demap_symbols(constellation(scheme), scheme), bits)

    @pytest.mark.parametrize('scheme', CLASSES)
    def test_small_noise_stays_in_cell(self, scheme, rng):
        bits = rng.integers(0, 2, 2000 * scheme.bits_per_symbol)
        sym = map_bits(bits, scheme)
        radius = 0.49 * min_distance(scheme) * rng.uniform(0, 1, sym.size)
        noisy = sym + radius * np.exp(2j * np.pi * rng.uniform(0, 1, sym.size))
        assert_array_equal(demap_symbols(noisy, scheme), bits)

    def test_tie_goes_to_lowest_index(self):
        pts = constellation(ModScheme.QAM4)
        midpoint = (pts[0] + pts[1]) / 2
        assert_array_equal(demap_symbols([midpoint], ModScheme.QAM4), [0, 0])

    def test_qam64_error_rate_at_30db(self, rng):
        n = 100_000
        bits = rng.integers(0, 2, n * 6)
        sym = map_bits(bits, ModScheme.QAM64)
        noise_var = 10 ** (-30 / 10)
        noisy = sym + np.sqrt(noise_var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        errors = np.any(demap_symbols(noisy, ModScheme.QAM64).reshape(n, 6) != bits.reshape(n, 6), axis=1)
        assert errors.mean() < 1e-3
