"""Gaussian regression targets laid out with the peak at the origin."""

import numpy as np
import pytest

from mrcf.labels import gaussian_labels


class TestShapeAndPeak:
    def test_shape_matches_request(self):
        lm = gaussian_labels(12, 20, target_size_cells=(6, 4))
        assert lm.data.shape == (12, 20)

    def test_peak_is_one_at_origin(self):
        lm = gaussian_labels(16, 16, target_size_cells=(8, 8))
        assert lm.data[0, 0] == 1.0
        assert np.argmax(lm.data) == 0

    def test_values_in_unit_interval(self):
        lm = gaussian_labels(9, 13, target_size_cells=(5, 3))
        assert np.all(lm.data > 0.0)
        assert np.all(lm.data <= 1.0)


class TestBandwidth:
    def test_sigma_scales_with_target_size(self):
        # bandwidth as a fraction of the target's own cell extent: the
        # horizontal sigma follows width, the vertical sigma follows height
        lm = gaussian_labels(32, 32, target_size_cells=(20, 10), bandwidth_factor=0.1)
        assert lm.sigma_col == pytest.approx(2.0)
        assert lm.sigma_row == pytest.approx(1.0)

    def test_unit_sigma_value_one_cell_out(self):
        lm = gaussian_labels(8, 8, target_size_cells=(10, 10), bandwidth_factor=0.1)
        assert lm.sigma_row == pytest.approx(1.0)
        assert lm.data[1, 0] == pytest.approx(np.exp(-0.5))
        assert lm.data[0, 1] == pytest.approx(np.exp(-0.5))

    def test_wider_bandwidth_decays_slower(self):
        narrow = gaussian_labels(16, 16, target_size_cells=(8, 8), bandwidth_factor=0.05)
        wide = gaussian_labels(16, 16, target_size_cells=(8, 8), bandwidth_factor=0.2)
        assert wide.data[3, 0] > narrow.data[3, 0]


class TestCircularLayout:
    def test_wraparound_symmetry(self):
        lm = gaussian_labels(10, 14, target_size_cells=(7, 5))
        np.testing.assert_allclose(lm.data[1, :], lm.data[9, :])
        np.testing.assert_allclose(lm.data[:, 1], lm.data[:, 13])

    def test_row_zero_decays_toward_the_middle(self):
        lm = gaussian_labels(16, 16, target_size_cells=(8, 8))
        first_half = lm.data[0, : 16 // 2 + 1]
        assert np.all(np.diff(first_half) < 0)

    def test_farthest_cell_is_the_minimum(self):
        lm = gaussian_labels(8, 8, target_size_cells=(6, 6))
        assert np.argmin(lm.data) == 4 * 8 + 4


class TestValidation:
    @pytest.mark.parametrize("rows,cols", [(0, 8), (8, 0), (-1, 4)])
    def test_rejects_empty_grid(self, rows, cols):
        with pytest.raises(ValueError):
            gaussian_labels(rows, cols, target_size_cells=(4, 4))

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            gaussian_labels(8, 8, target_size_cells=(0, 4))

    def test_rejects_nonpositive_bandwidth(self):
        with pytest.raises(ValueError):
            gaussian_labels(8, 8, target_size_cells=(4, 4), bandwidth_factor=0.0)
