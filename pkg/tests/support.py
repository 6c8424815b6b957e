"""Shared fixtures-in-code: synthetic sequences and the numeric gradient oracle."""

from __future__ import annotations

import numpy as np
import cv2

from mrcf.decoder import DecoderNet, _conv3x3, _pool2, forward_batch, loss_rms


# --------------------------------------------------------------------------
# Synthetic sequences
# --------------------------------------------------------------------------


def textured_target(size: tuple[int, int], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w, h = size
    tex = rng.uniform(0.55, 1.0, (h, w))
    return cv2.GaussianBlur(tex, (0, 0), 1.0) * 0.75 + 0.25


def textured_background(shape: tuple[int, int], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h, w = shape
    return cv2.GaussianBlur(rng.uniform(0.0, 0.35, (h, w)), (0, 0), 3.0)


def make_linear_sequence(
    n_frames: int = 50,
    start: tuple[float, float] = (20.0, 30.0),
    velocity: tuple[float, float] = (2.0, 1.0),
    target_size: tuple[int, int] = (20, 20),
    frame_shape: tuple[int, int] = (160, 240),
    seed: int = 7,
):
    """Constant-velocity target over a static textured background.

    Returns (frames, gt_boxes); boxes are (x, y, w, h) floats.
    """
    h, w = frame_shape
    tw, th = target_size
    bg = textured_background(frame_shape, seed)
    tex = textured_target(target_size, seed + 1)
    frames, boxes = [], []
    for t in range(n_frames):
        x = start[0] + velocity[0] * t
        y = start[1] + velocity[1] * t
        xi, yi = int(round(x)), int(round(y))
        assert 0 <= xi and xi + tw <= w and 0 <= yi and yi + th <= h, "target left the frame"
        frame = bg.copy()
        frame[yi:yi + th, xi:xi + tw] = tex
        frames.append(frame)
        boxes.append((float(xi), float(yi), float(tw), float(th)))
    return frames, boxes


def make_zoom_sequence(
    n_frames: int = 25,
    step: float = 1.02,
    base_size: int = 96,
    master_size: int = 480,
    seed: int = 11,
):
    """Static-center target whose apparent size grows by ``step`` per frame.

    Each frame is the master image scaled by step**t about the target center.
    The target texture is left unblurred: one 1.02 scale step moves the crop
    content by under 1 px, so the sequence must carry high-frequency detail
    (and a large enough target) for adjacent pyramid levels to be
    distinguishable at all.  Returns (frames, gt_boxes).
    """
    center = master_size / 2.0
    master = textured_background((master_size, master_size), seed)
    rng = np.random.default_rng(seed + 1)
    tex = rng.uniform(0.3, 1.0, (base_size, base_size))
    x0 = int(center - base_size / 2)
    master[x0:x0 + base_size, x0:x0 + base_size] = tex

    frames, boxes = [], []
    for t in range(n_frames):
        s = step**t
        mat = np.array([[s, 0.0, (1.0 - s) * center],
                        [0.0, s, (1.0 - s) * center]])
        frame = cv2.warpAffine(master, mat, (master_size, master_size),
                               flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        size = base_size * s
        frames.append(frame)
        boxes.append((center - size / 2.0, center - size / 2.0, size, size))
    return frames, boxes


def write_sequence_dir(tmp_path, frames, boxes, name: str = "seq"):
    """Materialize frames + annotations in the on-disk layout the loader expects."""
    seq_dir = tmp_path / name
    img_dir = seq_dir / "img"
    img_dir.mkdir(parents=True)
    for i, frame in enumerate(frames, start=1):
        img = np.clip(frame * 255.0, 0, 255).astype(np.uint8)
        cv2.imwrite(str(img_dir / f"{i:04d}.png"), img)
    lines = [f"{x:.2f},{y:.2f},{w:.2f},{h:.2f}" for x, y, w, h in boxes]
    (seq_dir / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return seq_dir


# --------------------------------------------------------------------------
# Numeric gradients (central differences on every parameter)
#
# A full forward per probe would be honest but slow; instead each probe
# recomputes the network from the stage its parameter feeds, reusing cached
# upstream activations that the perturbation cannot affect. The values are
# identical to a full recompute.
# --------------------------------------------------------------------------


def _head_loss(net: DecoderNet, z3: np.ndarray, target) -> float:
    a3 = np.maximum(z3, 0.0)
    z4 = a3 @ net.out_w.T + net.out_b
    return loss_rms((0.5 * np.tanh(z4))[0], target)


def _from_p1(net: DecoderNet, p1: np.ndarray, target) -> float:
    z2 = _conv3x3(p1, net.conv2_w, net.conv2_b)
    p2, _ = _pool2(np.maximum(z2, 0.0))
    f = p2.reshape(1, -1)
    return _head_loss(net, f @ net.fc1_w.T + net.fc1_b, target)


def _from_a3(net: DecoderNet, a3: np.ndarray, target) -> float:
    z4 = a3 @ net.out_w.T + net.out_b
    return loss_rms((0.5 * np.tanh(z4))[0], target)


def numeric_gradients(net: DecoderNet, maps: np.ndarray, target, eps: float = 1e-5) -> dict:
    """Central-difference gradients for every parameter tensor.

    The step must stay well below the smallest |pre-activation| (~1e-3 for
    He-initialized nets on unit inputs) or a probe can cross a ReLU kink and
    corrupt the difference quotient; 1e-5 clears that while double precision
    keeps the quotient itself accurate to ~1e-11.
    """
    x = maps[None]
    cache = forward_batch(net, x)
    p1, f, z3, a3 = cache["p1"], cache["f"], cache["z3"], cache["a3"]
    out: dict[str, np.ndarray] = {}

    def full(name: str, stage):
        arr = getattr(net, name)
        grad = np.empty_like(arr)
        flat_arr = arr.ravel()
        flat_grad = grad.ravel()
        for i in range(flat_arr.size):
            orig = flat_arr[i]
            flat_arr[i] = orig + eps
            lp = stage()
            flat_arr[i] = orig - eps
            lm = stage()
            flat_arr[i] = orig
            flat_grad[i] = (lp - lm) / (2.0 * eps)
        out[name] = grad

    full("conv1_w", lambda: loss_rms(forward_batch(net, x)["y"][0], target))
    full("conv1_b", lambda: loss_rms(forward_batch(net, x)["y"][0], target))
    full("conv2_w", lambda: _from_p1(net, p1, target))
    full("conv2_b", lambda: _from_p1(net, p1, target))

    # Dense rows: only z3[o] depends on fc1_w[o, :], so recompute that row's
    # dot product honestly and keep the cached values for every other row.
    fvec = f[0]
    grad = np.empty_like(net.fc1_w)
    for o in range(net.fc1_w.shape[0]):
        row = net.fc1_w[o]
        for i in range(row.size):
            orig = row[i]
            row[i] = orig + eps
            zp = z3.copy()
            zp[0, o] = row @ fvec + net.fc1_b[o]
            lp = _head_loss(net, zp, target)
            row[i] = orig - eps
            zm = z3.copy()
            zm[0, o] = row @ fvec + net.fc1_b[o]
            lm = _head_loss(net, zm, target)
            row[i] = orig
            grad[o, i] = (lp - lm) / (2.0 * eps)
    out["fc1_w"] = grad

    grad = np.empty_like(net.fc1_b)
    for o in range(net.fc1_b.size):
        zp = z3.copy()
        zp[0, o] += eps
        zm = z3.copy()
        zm[0, o] -= eps
        grad[o] = (_head_loss(net, zp, target) - _head_loss(net, zm, target)) / (2.0 * eps)
    out["fc1_b"] = grad

    full("out_w", lambda: _from_a3(net, a3, target))
    full("out_b", lambda: _from_a3(net, a3, target))
    return out


def gradient_mismatches(analytic: dict, numeric: dict,
                        rel_tol: float = 1e-4, abs_floor: float = 1e-8) -> list[str]:
    """Parameters whose analytic/numeric gradients disagree beyond tolerance."""
    bad = []
    for name, a in analytic.items():
        n = numeric[name]
        diff = np.abs(a - n)
        limit = np.maximum(rel_tol * np.maximum(np.abs(a), np.abs(n)), abs_floor)
        if np.any(diff > limit):
            worst = float((diff / np.maximum(limit, 1e-300)).max())
            bad.append(f"{name}: worst ratio {worst:.2f}")
    return bad
