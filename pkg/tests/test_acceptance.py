"""End-to-end guarantees of the package, one test per guarantee.

Each test states its tolerance inline and checks a property against an
independent oracle (dense solves, explicit shift enumeration, finite
differences, hand-computed closed forms) or a hard behavioral bound.
"""

import time

import numpy as np
import pytest

import support
from mrcf.adaptation import make_layer_stats, update_stability
from mrcf.cli import EX_OK, main
from mrcf.config import TrackerConfig
from mrcf.correlation import (
    brute_force_ridge,
    circulant_2d,
    detect_response,
    idft2,
    make_dual_model,
    rbf_kernel_correlation,
    to_real,
    train_linear,
)
from mrcf.decoder import (
    TrainConfig,
    decoder_backward,
    evaluate_rms,
    generate_synthetic_samples,
    init_decoder,
    maxres_rms,
    train_decoder,
)
from mrcf.evaluation import iou, precision_curve, success_curve
from mrcf.features import FeatureMap
from mrcf.labels import gaussian_labels
from mrcf.tracker import init_tracker, run_sequence, track_step


def fmap(data, layer_id=1, cell_size=1):
    return FeatureMap(data=np.asarray(data, dtype=np.float64),
                      layer_id=layer_id, cell_size=cell_size)


def test_spectral_ridge_matches_dense_circulant_solve():
    # 50 random single-channel 8x8 instances: the FFT closed form must agree
    # with an explicit ridge regression over the dense circulant data matrix
    # to 1e-6, and the whole batch must finish in under 5 seconds.
    rng = np.random.default_rng(100)
    y = gaussian_labels(8, 8, target_size_cells=(4, 4))
    started = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        x = fmap(rng.normal(size=(1, 8, 8)))
        fast = to_real(idft2(train_linear(x, y, lambda_=1e-4)))[0]
        dense = brute_force_ridge(x, y, lambda_=1e-4)
        worst = max(worst, float(np.abs(fast - dense).max()))
    elapsed = time.perf_counter() - started
    assert worst <= 1e-6
    assert elapsed < 5.0


def test_kernel_correlation_matches_all_cyclic_shifts():
    # 50 random 8x8 instances with 1..3 channels: the spectral kernel
    # correlation must match the explicit sum over every cyclic shift to 1e-8.
    rng = np.random.default_rng(101)
    for trial in range(50):
        channels = 1 + trial % 3
        x1 = fmap(0.1 * rng.normal(size=(channels, 8, 8)))
        x2 = fmap(0.1 * rng.normal(size=(channels, 8, 8)))
        got = rbf_kernel_correlation(x1, x2, sigma=0.5)
        sq = (x1.data**2).sum() + (x2.data**2).sum()
        want = np.empty((8, 8))
        for i in range(8):
            for j in range(8):
                dot = float((np.roll(x1.data, (i, j), axis=(1, 2))
                             * x2.data).sum())
                want[i, j] = np.exp(-max(0.0, sq - 2.0 * dot) / 0.5)
        assert float(np.abs(got - want).max()) <= 1e-8


def test_detection_matches_dense_kernel_ridge():
    # the fast detection response must equal solving the kernel ridge system
    # with dense circulant kernel matrices, to 1e-6 on 6x6 instances
    y = gaussian_labels(6, 6, target_size_cells=(3, 3))
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        x = fmap(0.1 * rng.normal(size=(1, 6, 6)))
        z = fmap(0.1 * rng.normal(size=(1, 6, 6)))
        fast = detect_response(make_dual_model(x, y, lambda_=1e-4, sigma=0.5),
                               z).data

        k_xx = rbf_kernel_correlation(x, x, 0.5)
        k_xz = rbf_kernel_correlation(x, z, 0.5)
        alpha = np.linalg.solve(circulant_2d(k_xx) + 1e-4 * np.eye(36),
                                y.data.ravel())
        dense = (circulant_2d(k_xz) @ alpha).reshape(6, 6)
        assert float(np.abs(fast - dense).max()) <= 1e-6


def test_response_peak_recovers_every_cyclic_shift():
    # shifting the probe by any integer (a, b) on a 16x16 template must move
    # the response argmax to exactly (a, b) -- no off-by-one, no wraparound slip
    rng = np.random.default_rng(102)
    x = fmap(0.1 * rng.normal(size=(1, 16, 16)))
    y = gaussian_labels(16, 16, target_size_cells=(8, 8))
    model = make_dual_model(x, y, lambda_=1e-4, sigma=0.2)
    for a in range(16):
        for b in range(16):
            z = fmap(np.roll(x.data, (a, b), axis=(1, 2)))
            resp = detect_response(model, z).data
            assert np.unravel_index(np.argmax(resp), resp.shape) == (a, b)


def test_decoder_gradients_match_finite_differences():
    # analytic backprop vs central differences on every parameter of a random
    # double-precision instance, relative error at most 1e-4
    rng = np.random.default_rng(103)
    net = init_decoder(3, grid=(8, 12), seed=17)
    maps = rng.uniform(size=(3, 8, 12))
    target = np.array([0.21, -0.14])
    _, analytic, _ = decoder_backward(net, maps, target)
    numeric = support.numeric_gradients(net, maps, target)
    assert support.gradient_mismatches(analytic, numeric, rel_tol=1e-4) == []


def test_trained_decoder_beats_maxres_on_held_out_stacks():
    # on 1000 held-out noisy response stacks the trained decoder's mean
    # translation error must come out strictly below the MaxRes baseline;
    # training plus evaluation must stay under ten minutes
    started = time.perf_counter()
    train = generate_synthetic_samples(2500, seed=1)
    held_out = generate_synthetic_samples(1000, seed=2)
    result = train_decoder(train, TrainConfig(max_epochs=40))
    decoder_err = evaluate_rms(result.net, held_out)
    baseline_err = maxres_rms(held_out)
    elapsed = time.perf_counter() - started
    assert decoder_err < baseline_err
    assert elapsed < 600.0


def test_constant_velocity_tracking_precision_and_overlap():
    # 50-frame textured target moving at constant velocity: every center
    # error within 20 px and overlap AUC at least 0.7
    frames, boxes = support.make_linear_sequence(n_frames=50)
    config = TrackerConfig(decoder=False, scales=1)
    pred, _ = run_sequence(frames, boxes[0], config)
    gt = np.asarray(boxes)
    _, p20 = precision_curve(np.asarray(pred), gt)
    _, auc = success_curve(np.asarray(pred), gt)
    assert p20 == 1.0
    assert auc >= 0.7


def test_scale_follows_steady_zoom_within_one_pyramid_step():
    # per-frame 1.02 zoom: at every fifth frame the size estimate must sit
    # within one pyramid step of the true zoom factor
    frames, boxes = support.make_zoom_sequence(n_frames=21)
    config = TrackerConfig(decoder=False)
    state = init_tracker(frames[0], boxes[0], config)
    step = config.scale_factor
    for t, frame in enumerate(frames[1:], start=1):
        track_step(state, frame)
        if t % 5 == 0:
            true = step**t
            assert true / step - 1e-9 <= state.scale.current_scale
            assert state.scale.current_scale <= true * step + 1e-9


def test_adaptive_rate_unit_laws():
    # (a) a constant loss stream freezes the layer once the window has history
    stats = make_layer_stats(0.01)
    for _ in range(6):
        stats = update_stability(stats, 0.4)
    assert stats.eta_k == 0.0

    # (b) a loss exactly three deviations out triples the base rate ...
    stats = make_layer_stats(0.01)
    for loss in [2.0, 4.0, 2.0, 4.0]:
        stats = update_stability(stats, loss)
    stats = update_stability(stats, 6.0)
    assert stats.eta_k == pytest.approx(min(3 * 0.01, stats.eta_max))
    assert stats.eta_k == pytest.approx(0.03)

    # ... unless the cap is lower
    capped = make_layer_stats(0.01, eta_max=0.02)
    for loss in [2.0, 4.0, 2.0, 4.0]:
        capped = update_stability(capped, loss)
    capped = update_stability(capped, 6.0)
    assert capped.eta_k == pytest.approx(0.02)

    # (c) every update lands inside [0, eta_max], outliers included
    rng = np.random.default_rng(104)
    stats = make_layer_stats(0.01)
    for loss in rng.exponential(scale=5.0, size=200):
        stats = update_stability(stats, float(loss))
        assert 0.0 <= stats.eta_k <= stats.eta_max


def test_metric_golden_values():
    # hand-built prediction/annotation pairs must reproduce the three
    # precision levels and the closed-form one-third overlap exactly
    gt = np.tile([0.0, 0.0, 10.0, 10.0], (4, 1))
    assert precision_curve(gt.copy(), gt)[1] == 1.0

    half = gt.copy()
    half[2:, 0] += 100.0
    assert precision_curve(half, gt)[1] == 0.5

    off = gt + np.array([100.0, 0.0, 0.0, 0.0])
    assert precision_curve(off, gt)[1] == 0.0

    assert iou((0.0, 0.0, 1.0, 1.0), (0.5, 0.0, 1.0, 1.0)) == 1.0 / 3.0


def test_evaluation_command_is_byte_deterministic(tmp_path, capsys):
    # running the eval subcommand twice with the same seed must produce
    # byte-identical CSV reports
    root = tmp_path / "data"
    root.mkdir()
    for name, velocity in [("alpha", (2.0, 1.0)), ("beta", (1.0, 2.0))]:
        frames, boxes = support.make_linear_sequence(n_frames=5,
                                                     velocity=velocity)
        support.write_sequence_dir(root, frames, boxes, name=name)
    cfg = tmp_path / "fast.cfg"
    cfg.write_text("scales = 1\ndecoder = off\n")

    outs = [tmp_path / "run1", tmp_path / "run2"]
    for out in outs:
        code = main(["eval", "--data", str(root), "--out", str(out),
                     "--config", str(cfg), "--seed", "0"])
        assert code == EX_OK
    capsys.readouterr()

    for name in ("summary.csv", "precision_curve.csv", "success_curve.csv"):
        first = (outs[0] / name).read_bytes()
        second = (outs[1] / name).read_bytes()
        assert first == second
