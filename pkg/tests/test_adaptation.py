"""Stability-scored learning rates and per-layer model interpolation."""

import numpy as np
import pytest

from mrcf.adaptation import layer_loss, make_layer_stats, update_model, update_stability
from mrcf.correlation import ResponseMap, make_dual_model
from mrcf.errors import InvalidRateError, ShapeError
from mrcf.features import FeatureMap
from mrcf.labels import gaussian_labels


def push_all(stats, losses):
    for loss in losses:
        stats = update_stability(stats, loss)
    return stats


class TestLayerStatsConstruction:
    def test_defaults(self):
        stats = make_layer_stats(0.01)
        assert stats.eta_base == 0.01
        assert stats.eta_max == pytest.approx(0.1)
        assert stats.window_size == 5
        assert stats.eta_k == 0.01

    def test_rejects_rate_outside_unit_interval(self):
        with pytest.raises(InvalidRateError):
            make_layer_stats(-0.1)
        with pytest.raises(InvalidRateError):
            make_layer_stats(1.1)

    def test_rejects_empty_window(self):
        with pytest.raises(ValueError):
            make_layer_stats(0.01, window_size=0)


class TestStabilityScore:
    def test_warm_up_uses_neutral_score(self):
        # with fewer than two prior losses the deviation defaults to 1,
        # so the rate starts at its base value
        stats = make_layer_stats(0.02)
        stats = update_stability(stats, 5.0)
        assert stats.eta_k == pytest.approx(0.02)
        stats = update_stability(stats, 9.0)
        assert stats.eta_k == pytest.approx(0.02)

    def test_hand_computed_deviation(self):
        # window [2, 4, 2, 4]: mean 3, population std 1; a loss of 6 sits
        # three deviations out, so the rate triples
        stats = push_all(make_layer_stats(0.01), [2.0, 4.0, 2.0, 4.0])
        stats = update_stability(stats, 6.0)
        assert stats.eta_k == pytest.approx(0.03)

    def test_constant_losses_freeze_updates(self):
        stats = push_all(make_layer_stats(0.01), [0.7] * 6)
        assert stats.eta_k == 0.0

    def test_rate_clamped_to_eta_max(self):
        stats = push_all(make_layer_stats(0.01, eta_max=0.02), [2.0, 4.0, 2.0, 4.0])
        stats = update_stability(stats, 60.0)
        assert stats.eta_k == pytest.approx(0.02)

    def test_default_cap_is_ten_times_base(self):
        stats = push_all(make_layer_stats(0.01), [2.0, 4.0, 2.0, 4.0])
        stats = update_stability(stats, 300.0)
        assert stats.eta_k == pytest.approx(0.1)

    def test_inverse_mode_slows_on_outliers(self):
        stats = push_all(make_layer_stats(0.01, inverse_stability=True),
                         [2.0, 4.0, 2.0, 4.0])
        stats = update_stability(stats, 6.0)
        assert stats.eta_k == pytest.approx(0.01 / 4.0)

    def test_inverse_mode_full_rate_when_stable(self):
        stats = push_all(make_layer_stats(0.01, inverse_stability=True), [0.5] * 6)
        assert stats.eta_k == pytest.approx(0.01)

    def test_window_drops_oldest_losses(self):
        stats = push_all(make_layer_stats(0.01, window_size=3), [100.0, 1.0, 2.0, 3.0])
        assert list(stats.losses) == [1.0, 2.0, 3.0]
        assert stats.mean == pytest.approx(2.0)

    def test_update_is_pure(self):
        stats = make_layer_stats(0.01)
        update_stability(stats, 1.0)
        assert len(stats.losses) == 0

    def test_std_never_reported_below_floor(self):
        stats = push_all(make_layer_stats(0.01), [0.3, 0.3, 0.3])
        assert stats.std == 1e-6


class TestLayerLoss:
    def _resp(self, data):
        return ResponseMap(data=np.asarray(data, dtype=np.float64),
                           layer_id=1, cell_size=1)

    def test_gap_between_peak_and_chosen_cell(self):
        resp = self._resp([[0.1, 0.5, 0.2],
                           [0.3, 0.9, 0.0],
                           [0.4, 0.4, 0.4]])
        assert layer_loss(resp, (2, 0)) == pytest.approx(0.7)

    def test_zero_exactly_at_the_peak(self):
        resp = self._resp([[0.1, 0.5], [0.3, 0.9]])
        assert layer_loss(resp, (1, 1)) == 0.0

    def test_never_negative(self):
        rng = np.random.default_rng(0)
        resp = self._resp(rng.normal(size=(5, 7)))
        for y in range(5):
            for x in range(7):
                assert layer_loss(resp, (x, y)) >= 0.0

    def test_rejects_positions_off_the_grid(self):
        resp = self._resp(np.zeros((3, 3)))
        with pytest.raises(IndexError):
            layer_loss(resp, (3, 0))
        with pytest.raises(IndexError):
            layer_loss(resp, (0, -1))


def _model(seed, sigma=0.5):
    rng = np.random.default_rng(seed)
    x = FeatureMap(data=0.1 * rng.normal(size=(1, 6, 6)), layer_id=1, cell_size=1)
    y = gaussian_labels(6, 6, target_size_cells=(3, 3))
    return make_dual_model(x, y, lambda_=1e-4, sigma=sigma)


class TestModelInterpolation:
    def test_convex_combination_of_coefficients_and_template(self):
        prev, new = _model(1), _model(2)
        out = update_model(prev, new, 0.25)
        np.testing.assert_allclose(out.alpha_hat,
                                   0.75 * prev.alpha_hat + 0.25 * new.alpha_hat)
        np.testing.assert_allclose(out.template.data,
                                   0.75 * prev.template.data + 0.25 * new.template.data)

    def test_zero_rate_keeps_previous(self):
        prev, new = _model(3), _model(4)
        out = update_model(prev, new, 0.0)
        np.testing.assert_array_equal(out.alpha_hat, prev.alpha_hat)

    def test_unit_rate_adopts_new(self):
        prev, new = _model(5), _model(6)
        out = update_model(prev, new, 1.0)
        np.testing.assert_array_equal(out.alpha_hat, new.alpha_hat)

    def test_rejects_rate_outside_unit_interval(self):
        prev, new = _model(7), _model(8)
        with pytest.raises(InvalidRateError):
            update_model(prev, new, 1.5)

    def test_rejects_mismatched_grids(self):
        rng = np.random.default_rng(9)
        x = FeatureMap(data=0.1 * rng.normal(size=(1, 8, 8)), layer_id=1, cell_size=1)
        y = gaussian_labels(8, 8, target_size_cells=(3, 3))
        other = make_dual_model(x, y, 1e-4, 0.5)
        with pytest.raises(ShapeError):
            update_model(_model(10), other, 0.5)
