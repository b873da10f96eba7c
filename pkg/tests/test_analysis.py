import numpy as np
import pytest

from evex.analysis import HeatMapStack, pixel_rsd, pixel_sd, threshold_sweep
from evex.imaging import FloatGrid, render_grayscale


def stack_of(*arrays, labels=None):
    grids = tuple(FloatGrid(np.asarray(a, dtype=np.float64)) for a in arrays)
    labels = labels or tuple(str(i) for i in range(len(grids)))
    return HeatMapStack(grids, tuple(labels))


class TestStack:
    def test_needs_two_grids(self):
        with pytest.raises(ValueError):
            stack_of(np.zeros((2, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            stack_of(np.zeros((2, 2)), np.zeros((3, 2)))


class TestPixelSD:
    def test_identical_grids_zero(self):
        g = np.random.default_rng(0).normal(size=(6, 6))
        assert np.all(pixel_sd(stack_of(g, g, g)).values == 0.0)

    def test_two_point_sd_is_half_gap(self):
        sd = pixel_sd(stack_of([[0.4]], [[0.6]]))
        assert sd.values[0, 0] == pytest.approx(0.1, abs=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(1)
        arrays = [rng.normal(size=(8, 7)) for _ in range(4)]
        sd = pixel_sd(stack_of(*arrays)).values
        data = np.stack(arrays)
        mean = data.sum(axis=0) / 4.0
        var = ((data - mean) ** 2).sum(axis=0) / 4.0  # population: divide by S
        assert np.abs(sd - np.sqrt(var)).max() < 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        arrays = [rng.normal(size=(5, 5)) for _ in range(4)]
        a = pixel_sd(stack_of(*arrays)).values
        b = pixel_sd(stack_of(arrays[2], arrays[0], arrays[3], arrays[1])).values
        assert np.array_equal(a, b)

    def test_appending_the_mean_never_increases_sd(self):
        rng = np.random.default_rng(3)
        arrays = [rng.normal(size=(6, 4)) for _ in range(3)]
        before = pixel_sd(stack_of(*arrays)).values
        mean = np.mean(np.stack(arrays), axis=0)
        after = pixel_sd(stack_of(*arrays, mean)).values
        assert np.all(after <= before + 1e-12)


class TestPixelRSD:
    def test_identical_nonzero_grids(self):
        g = np.full((4, 4), 0.8)
        report = pixel_rsd(stack_of(g, g), threshold=0.5)
        assert np.all(report.rsd_grid.values == 0.0)
        assert report.max_rsd == 0.0
        assert report.excluded_fraction == 0.0

    def test_arithmetic_fixture(self):
        report = pixel_rsd(stack_of([[0.4]], [[0.6]]), threshold=0.5)
        assert not report.excluded[0, 0]  # mean 0.5 >= threshold
        assert report.rsd_grid.values[0, 0] == pytest.approx(0.2, abs=1e-12)
        assert report.max_rsd == pytest.approx(0.2, abs=1e-12)

    def test_threshold_above_all_means(self):
        report = pixel_rsd(stack_of([[0.1, 0.2]], [[0.2, 0.1]]), threshold=5.0)
        assert report.excluded.all()
        assert report.max_rsd == 0.0
        assert report.excluded_fraction == 1.0

    def test_threshold_zero_includes_nonzero_means_only(self):
        report = pixel_rsd(stack_of([[0.0, 0.5]], [[0.0, 0.7]]), threshold=0.0)
        assert report.excluded[0, 0]  # zero mean cannot be divided
        assert not report.excluded[0, 1]

    def test_negative_means_use_absolute_value(self):
        report = pixel_rsd(stack_of([[-0.4]], [[-0.6]]), threshold=0.5)
        assert not report.excluded[0, 0]
        assert report.rsd_grid.values[0, 0] == pytest.approx(0.2, abs=1e-12)

    def test_excluded_flags_match_green_sentinel_pixels(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, size=(9, 9))
        b = rng.uniform(0, 1, size=(9, 9))
        report = pixel_rsd(stack_of(a, b), threshold=0.5)
        img = render_grayscale(report.rsd_grid, cap=1.0, excluded=report.excluded)
        green = np.all(img.pixels == (0, 255, 0), axis=-1)
        assert np.array_equal(green, report.excluded)


class TestThresholdSweep:
    def test_non_increasing_maxima(self):
        rng = np.random.default_rng(5)
        arrays = [rng.uniform(0, 1, size=(12, 12)) for _ in range(4)]
        reports = threshold_sweep(stack_of(*arrays), [0.1, 0.3, 0.5, 0.8])
        maxima = [r.max_rsd for r in reports]
        assert all(b <= a for a, b in zip(maxima, maxima[1:]))

    def test_rejects_descending(self):
        with pytest.raises(ValueError):
            threshold_sweep(stack_of([[1.0]], [[1.0]]), [0.8, 0.5])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            threshold_sweep(stack_of([[1.0]], [[1.0]]), [])
