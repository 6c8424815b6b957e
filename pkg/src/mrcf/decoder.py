"""Learned decoding of multi-layer response maps into a translation estimate.

Per-layer correlation responses are resampled onto a shared K x 32 x 48 grid
(zero shift at the grid center). A small convnet maps that stack to a
normalized (dx, dy) in (-0.5, 0.5)^2; the MaxRes baseline instead averages the
stack and reads off the argmax. Forward, backward, and SGD are implemented
directly in numpy so every gradient is checkable against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import ResponseMap
from .errors import EmptyDatasetError, FormatError, ShapeError
from .features import normalize_channels

GRID_ROWS = 32
GRID_COLS = 48

_PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                "fc1_w", "fc1_b", "out_w", "out_b")


@dataclass
class ResponseStack:
    """Response maps resampled to a common grid: ``maps`` is (K, rows, cols)."""

    maps: np.ndarray
    cell_sizes: tuple[int, ...] = ()
    layer_ids: tuple[int, ...] = ()


def _resample_to_grid(plane: np.ndarray, grid_rows: int, grid_cols: int) -> np.ndarray:
    """Bilinear resample centered so src (M//2, N//2) lands on (G//2, G//2)."""
    rows, cols = plane.shape
    r_src = (np.arange(grid_rows) - grid_rows // 2) * (rows / grid_rows) + rows // 2
    c_src = (np.arange(grid_cols) - grid_cols // 2) * (cols / grid_cols) + cols // 2
    r_src = np.clip(r_src, 0.0, rows - 1.0)
    c_src = np.clip(c_src, 0.0, cols - 1.0)
    r0 = np.floor(r_src).astype(np.intp)
    c0 = np.floor(c_src).astype(np.intp)
    r1 = np.minimum(r0 + 1, rows - 1)
    c1 = np.minimum(c0 + 1, cols - 1)
    fr = (r_src - r0)[:, None]
    fc = (c_src - c0)[None, :]
    return (plane[np.ix_(r0, c0)] * (1 - fr) * (1 - fc)
            + plane[np.ix_(r0, c1)] * (1 - fr) * fc
            + plane[np.ix_(r1, c0)] * fr * (1 - fc)
            + plane[np.ix_(r1, c1)] * fr * fc)


def stack_responses(
    responses: list[ResponseMap],
    grid: tuple[int, int] = (GRID_ROWS, GRID_COLS),
) -> ResponseStack:
    """Align layer responses on one grid and rescale each to [0, 1].

    Responses index translations circularly with the peak-at-origin
    convention, so each map is fftshifted first: after that, zero shift sits at
    (M//2, N//2) and maps onto the grid center. Constant maps become zeros.
    """
    if not responses:
        raise ValueError("need at least one response map")
    grid_rows, grid_cols = grid
    maps = np.empty((len(responses), grid_rows, grid_cols), dtype=np.float64)
    for i, resp in enumerate(responses):
        if resp.data.ndim != 2:
            raise ShapeError("response maps must be 2-D")
        shifted = np.fft.fftshift(resp.data)
        maps[i] = _resample_to_grid(shifted, grid_rows, grid_cols)
    maps = normalize_channels(maps)
    return ResponseStack(
        maps=maps,
        cell_sizes=tuple(r.cell_size for r in responses),
        layer_ids=tuple(r.layer_id for r in responses),
    )


def maxres_decode(
    stack: ResponseStack,
    patch_size: tuple[int, int] = (240, 160),
) -> tuple[float, float]:
    """Baseline decoding: average the stack, take the argmax, convert to px.

    Returns (dx, dy) in patch pixels; ties resolve to the lowest row-major
    index. One grid cell spans patch_w/grid_cols horizontal pixels.
    """
    mean_map = stack.maps.mean(axis=0)
    grid_rows, grid_cols = mean_map.shape
    flat = int(np.argmax(mean_map))
    row, col = divmod(flat, grid_cols)
    patch_w, patch_h = patch_size
    dx = (col - grid_cols // 2) * (patch_w / grid_cols)
    dy = (row - grid_rows // 2) * (patch_h / grid_rows)
    return float(dx), float(dy)


# --------------------------------------------------------------------------
# Network definition
# --------------------------------------------------------------------------


@dataclass
class DecoderNet:
    """conv(16) -> pool -> conv(32) -> pool -> dense(64) -> dense(2) -> tanh/2."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    grid: tuple[int, int] = (GRID_ROWS, GRID_COLS)

    @property
    def in_channels(self) -> int:
        return self.conv1_w.shape[1]

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in _PARAM_ORDER]

    def copy(self) -> "DecoderNet":
        return replace(self, **{name: arr.copy() for name, arr in self.params()})

    def astype(self, dtype) -> "DecoderNet":
        return replace(self, **{name: arr.astype(dtype) for name, arr in self.params()})


def init_decoder(
    in_channels: int,
    grid: tuple[int, int] = (GRID_ROWS, GRID_COLS),
    seed: int = 0,
) -> DecoderNet:
    """He-initialized decoder for stacks with ``in_channels`` layers."""
    if in_channels < 1:
        raise ValueError("in_channels must be >= 1")
    grid_rows, grid_cols = grid
    if grid_rows % 4 or grid_cols % 4:
        raise ValueError("grid dims must be divisible by 4 (two 2x2 pools)")
    rng = np.random.default_rng(seed)
    flat = 32 * (grid_rows // 4) * (grid_cols // 4)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return DecoderNet(
        conv1_w=he((16, in_channels, 3, 3), in_channels * 9),
        conv1_b=np.zeros(16),
        conv2_w=he((32, 16, 3, 3), 16 * 9),
        conv2_b=np.zeros(32),
        fc1_w=he((64, flat), flat),
        fc1_b=np.zeros(64),
        out_w=rng.normal(0.0, np.sqrt(1.0 / 64), size=(2, 64)),
        out_b=np.zeros(2),
        grid=(grid_rows, grid_cols),
    )


def _windows3x3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W, 3, 3) view of every padded 3x3 neighborhood (no copy)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution with zero padding, batched (B, C, H, W)."""
    out = np.tensordot(_windows3x3(x), w, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def _conv3x3_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                      need_dx: bool = True):
    dw = np.tensordot(dout, _windows3x3(x), axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        # Input gradient of a same-padded correlation is the same-padded
        # correlation of dout with the kernel transposed and rotated 180.
        w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = _conv3x3(dout, w_t, np.zeros(w.shape[1], dtype=w.dtype))
    return dw, db, dx


def _pool2(x: np.ndarray):
    """2x2 max pool; returns pooled maps and flat argmax indices per window.

    Window entries are ordered row-major (top-left, top-right, bottom-left,
    bottom-right); ties resolve to the lowest index.  Implemented with
    quadrant slices — no reshuffling copies of the full activation tensor.
    """
    q0 = x[:, :, 0::2, 0::2]
    q1 = x[:, :, 0::2, 1::2]
    q2 = x[:, :, 1::2, 0::2]
    q3 = x[:, :, 1::2, 1::2]
    out = np.maximum(np.maximum(q0, q1), np.maximum(q2, q3))
    idx = np.where(q0 == out, 0,
                   np.where(q1 == out, 1,
                            np.where(q2 == out, 2, 3)))
    return out, idx


def _pool2_backward(dout: np.ndarray, idx: np.ndarray, shape: tuple) -> np.ndarray:
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :, 0::2, 0::2] = np.where(idx == 0, dout, 0.0)
    dx[:, :, 0::2, 1::2] = np.where(idx == 1, dout, 0.0)
    dx[:, :, 1::2, 0::2] = np.where(idx == 2, dout, 0.0)
    dx[:, :, 1::2, 1::2] = np.where(idx == 3, dout, 0.0)
    return dx


def forward_batch(net: DecoderNet, x: np.ndarray) -> dict:
    """Run the net on a (B, K, rows, cols) batch; returns all activations."""
    if x.ndim != 4 or x.shape[1] != net.in_channels or x.shape[2:] != net.grid:
        raise ShapeError(
            f"input {x.shape} does not match net ({net.in_channels}, {net.grid})"
        )
    cache: dict = {"x": x}
    cache["z1"] = _conv3x3(x, net.conv1_w, net.conv1_b)
    cache["a1"] = np.maximum(cache["z1"], 0.0)
    cache["p1"], cache["i1"] = _pool2(cache["a1"])
    cache["z2"] = _conv3x3(cache["p1"], net.conv2_w, net.conv2_b)
    cache["a2"] = np.maximum(cache["z2"], 0.0)
    cache["p2"], cache["i2"] = _pool2(cache["a2"])
    cache["f"] = cache["p2"].reshape(x.shape[0], -1)
    cache["z3"] = cache["f"] @ net.fc1_w.T + net.fc1_b
    cache["a3"] = np.maximum(cache["z3"], 0.0)
    cache["z4"] = cache["a3"] @ net.out_w.T + net.out_b
    cache["t4"] = np.tanh(cache["z4"])
    cache["y"] = 0.5 * cache["t4"]
    return cache


def backward_batch(net: DecoderNet, cache: dict, dy: np.ndarray) -> dict:
    """Backpropagate an upstream gradient on the outputs through the net.

    The parameter gradients are linear in ``dy``: scaling the upstream
    gradient scales every entry of the result by the same constant.
    """
    dz4 = dy * 0.5 * (1.0 - cache["t4"] ** 2)
    grads = {
        "out_w": dz4.T @ cache["a3"],
        "out_b": dz4.sum(axis=0),
    }
    da3 = dz4 @ net.out_w
    dz3 = da3 * (cache["z3"] > 0.0)
    grads["fc1_w"] = dz3.T @ cache["f"]
    grads["fc1_b"] = dz3.sum(axis=0)
    df = dz3 @ net.fc1_w
    dp2 = df.reshape(cache["p2"].shape)
    da2 = _pool2_backward(dp2, cache["i2"], cache["a2"].shape)
    dz2 = da2 * (cache["z2"] > 0.0)
    grads["conv2_w"], grads["conv2_b"], dp1 = _conv3x3_backward(cache["p1"], net.conv2_w, dz2)
    da1 = _pool2_backward(dp1, cache["i1"], cache["a1"].shape)
    dz1 = da1 * (cache["z1"] > 0.0)
    grads["conv1_w"], grads["conv1_b"], _ = _conv3x3_backward(
        cache["x"], net.conv1_w, dz1, need_dx=False)
    return grads


def decoder_forward(net: DecoderNet, stack: ResponseStack | np.ndarray) -> np.ndarray:
    """Predict normalized (dx, dy) for one response stack."""
    maps = stack.maps if isinstance(stack, ResponseStack) else stack
    return forward_batch(net, maps[None])["y"][0]


def loss_rms(pred: np.ndarray, target: np.ndarray) -> float:
    """Root-mean-square of the two displacement errors.

    L = sqrt(0.5 * ((dx - dx')^2 + (dy - dy')^2)); zero at a perfect match.
    """
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.sqrt(0.5 * (err**2).sum()))


def _batch_loss_grad(y: np.ndarray, targets: np.ndarray):
    """Mean per-sample RMS loss and its gradient on the predictions.

    dL/dy_b = 0.5 * (y_b - t_b) / (B * L_b); a sample with L_b = 0 has a flat
    minimum there and contributes zero (subgradient choice).
    """
    err = y - targets
    per = np.sqrt(0.5 * (err**2).sum(axis=1))
    batch = y.shape[0]
    dy = np.zeros_like(y)
    nz = per > 0.0
    dy[nz] = 0.5 * err[nz] / (per[nz][:, None] * batch)
    return float(per.mean()), dy


def decoder_backward(net: DecoderNet, stack: ResponseStack | np.ndarray, target) -> tuple[float, dict, np.ndarray]:
    """Loss, parameter gradients, and prediction for one (stack, target) pair."""
    maps = stack.maps if isinstance(stack, ResponseStack) else stack
    cache = forward_batch(net, maps[None])
    targets = np.asarray(target, dtype=np.float64).reshape(1, 2)
    loss, dy = _batch_loss_grad(cache["y"], targets)
    grads = backward_batch(net, cache, dy)
    return loss, grads, cache["y"][0]


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class SampleSet:
    """Decoder training data: stacks (n, K, rows, cols) and targets (n, 2)."""

    stacks: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.stacks = np.asarray(self.stacks, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.stacks.ndim != 4 or self.targets.ndim != 2 or self.targets.shape[1] != 2:
            raise ShapeError("expected stacks (n, K, rows, cols) and targets (n, 2)")
        if self.stacks.shape[0] != self.targets.shape[0]:
            raise ShapeError("stack/target counts differ")

    def __len__(self) -> int:
        return self.stacks.shape[0]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.stacks[idx], self.targets[idx])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 1e-4
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_rms: float
    val_rms: float
    best_val_rms: float


@dataclass
class TrainResult:
    net: DecoderNet
    best_val_rms: float
    final_train_rms: float
    epochs_run: int
    history: list = field(default_factory=list)
    val_indices: np.ndarray | None = None   # into the original sample set


def _eval_rms_arrays(net: DecoderNet, stacks: np.ndarray, targets: np.ndarray,
                     batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(stacks), batch_size):
        y = forward_batch(net, stacks[start:start + batch_size])["y"]
        err = y - targets[start:start + batch_size]
        total += float(np.sqrt(0.5 * (err**2).sum(axis=1)).sum())
    return total / len(stacks)


def evaluate_rms(net: DecoderNet, samples: SampleSet, batch_size: int = 64) -> float:
    """Mean per-sample RMS loss over a sample set."""
    return _eval_rms_arrays(net, samples.stacks, samples.targets, batch_size)


def maxres_rms(samples: SampleSet) -> float:
    """Mean RMS loss of the MaxRes baseline in normalized units."""
    total = 0.0
    grid_rows, grid_cols = samples.stacks.shape[2:]
    for stack, target in zip(samples.stacks, samples.targets):
        mean_map = stack.mean(axis=0)
        row, col = divmod(int(np.argmax(mean_map)), grid_cols)
        pred = np.array([(col - grid_cols // 2) / grid_cols,
                         (row - grid_rows // 2) / grid_rows])
        total += loss_rms(pred, target)
    return float(total / len(samples))


def train_decoder(samples: SampleSet, config: TrainConfig | None = None) -> TrainResult:
    """Seeded SGD-with-momentum training with early stopping on validation RMS.

    The split is a seeded permutation (disjoint train/validation); the weights
    returned are the best-validation snapshot, not the last epoch.
    """
    config = config or TrainConfig()
    n = len(samples)
    if n == 0:
        raise EmptyDatasetError("no training samples")
    if n < 2:
        raise ValueError("need at least 2 samples for a disjoint split")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = min(max(1, int(round(config.val_fraction * n))), n - 1)
    val_indices = perm[:n_val]
    val = samples.subset(val_indices)
    train = samples.subset(perm[n_val:])

    k = samples.stacks.shape[1]
    grid = samples.stacks.shape[2:]
    # Weights are seeded in double precision for reproducibility, but the
    # optimization loop runs in float32: the batch work is memory-bound and
    # single precision roughly halves the wall time at no cost to the fit.
    net = init_decoder(k, grid=grid, seed=config.seed).astype(np.float32)
    train_stacks = train.stacks.astype(np.float32)
    train_targets = train.targets.astype(np.float32)
    val_stacks = val.stacks.astype(np.float32)
    val_targets = val.targets.astype(np.float32)
    velocity = {name: np.zeros_like(arr) for name, arr in net.params()}

    best = net.copy()
    best_val = np.inf
    patience_left = config.patience
    history: list[EpochStats] = []
    train_rms = np.inf
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            cache = forward_batch(net, train_stacks[idx])
            batch_loss, dy = _batch_loss_grad(cache["y"], train_targets[idx])
            loss_sum += batch_loss * len(idx)
            grads = backward_batch(net, cache, dy)
            for name, param in net.params():
                vel = velocity[name]
                vel *= config.momentum
                vel -= config.learning_rate * grads[name]
                param += vel

        # Training loss is the running mean over this epoch's batches (each
        # measured pre-update); only validation needs a dedicated pass.
        train_rms = loss_sum / len(train)
        val_rms = _eval_rms_arrays(net, val_stacks, val_targets)
        if val_rms < best_val - config.min_delta:
            best_val = val_rms
            best = net.copy()
            patience_left = config.patience
        else:
            patience_left -= 1
        history.append(EpochStats(epoch, train_rms, val_rms, float(best_val)))
        if patience_left <= 0:
            break

    if not np.isfinite(best_val):
        best, best_val = net.copy(), history[-1].val_rms if history else np.inf
    return TrainResult(net=best.astype(np.float64), best_val_rms=float(best_val),
                       final_train_rms=float(train_rms),
                       epochs_run=epochs_run, history=history,
                       val_indices=val_indices)


# --------------------------------------------------------------------------
# Synthetic training data
# --------------------------------------------------------------------------


@dataclass
class SyntheticNoise:
    """Corruption model for generated stacks; deeper layers degrade more.

    The distractor is a second object in the scene: one location per sample,
    painted into each layer with probability growing with depth and with an
    amplitude that can exceed the true peak's.  Averaging the layers then
    votes the distractor up while the precise shallow layer is outvoted —
    exactly the failure mode a learned per-layer weighting can avoid.
    """

    bump_sigma: float = 1.6         # Gaussian peak width in grid cells
    sigma_growth: float = 0.3       # width multiplier added per layer index
    jitter_base: float = 0.1        # peak jitter std (cells) at layer 0
    jitter_step: float = 1.0        # extra jitter std per layer index
    pixel_noise: float = 0.05
    distractor_prob: float = 0.6    # chance a sample contains a distractor
    distractor_amp: float = 1.3     # relative to the true peak height
    distractor_min_dist: float = 5.0
    amp_jitter: float = 0.15

    @classmethod
    def none(cls) -> "SyntheticNoise":
        return cls(jitter_base=0.0, jitter_step=0.0, pixel_noise=0.0,
                   distractor_prob=0.0, amp_jitter=0.0)


def generate_synthetic_samples(
    n: int,
    k_layers: int = 4,
    grid: tuple[int, int] = (GRID_ROWS, GRID_COLS),
    noise: SyntheticNoise | None = None,
    seed: int = 0,
    delta_range: float = 0.3,
) -> SampleSet:
    """Generate response stacks with a known displacement.

    Each stack holds one Gaussian peak per layer at the true offset; noise
    jitters deep-layer peaks, adds pixel noise, and occasionally plants a
    distractor peak far from the target — the regime where a learned decoder
    can beat plain response averaging.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    noise = noise if noise is not None else SyntheticNoise()
    rng = np.random.default_rng(seed)
    grid_rows, grid_cols = grid
    rr = np.arange(grid_rows, dtype=np.float64)[:, None]
    cc = np.arange(grid_cols, dtype=np.float64)[None, :]

    stacks = np.empty((n, k_layers, grid_rows, grid_cols), dtype=np.float64)
    targets = np.empty((n, 2), dtype=np.float64)

    def bump(r: float, c: float, sig: float) -> np.ndarray:
        return np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2.0 * sig**2))

    for i in range(n):
        dx, dy = rng.uniform(-delta_range, delta_range, size=2)
        targets[i] = (dx, dy)
        r_true = grid_rows // 2 + dy * grid_rows
        c_true = grid_cols // 2 + dx * grid_cols

        # One distractor location per sample, shared by whichever layers it
        # pollutes; a fresh location per layer would average itself away.
        r_d = c_d = amp_d = 0.0
        has_distractor = (noise.distractor_prob > 0
                          and rng.uniform() < noise.distractor_prob)
        if has_distractor:
            for _ in range(50):
                r_d = rng.uniform(0, grid_rows - 1)
                c_d = rng.uniform(0, grid_cols - 1)
                if np.hypot(r_d - r_true, c_d - c_true) >= noise.distractor_min_dist:
                    break
            amp_d = noise.distractor_amp * rng.uniform(0.8, 1.2)

        for k in range(k_layers):
            depth = k / (k_layers - 1) if k_layers > 1 else 0.0
            jitter = noise.jitter_base + noise.jitter_step * k
            r_k = r_true + rng.normal(0.0, jitter) if jitter > 0 else r_true
            c_k = c_true + rng.normal(0.0, jitter) if jitter > 0 else c_true
            sig = noise.bump_sigma * (1.0 + noise.sigma_growth * k)
            amp = 1.0 + (rng.normal(0.0, noise.amp_jitter) if noise.amp_jitter > 0 else 0.0)
            plane = max(amp, 0.2) * bump(r_k, c_k, sig)
            if has_distractor and rng.uniform() < depth:
                plane = plane + amp_d * bump(r_d, c_d, sig)
            if noise.pixel_noise > 0:
                plane = plane + rng.normal(0.0, noise.pixel_noise, size=plane.shape)
            stacks[i, k] = plane
        stacks[i] = normalize_channels(stacks[i])
    return SampleSet(stacks=stacks, targets=targets)


# --------------------------------------------------------------------------
# KMCD weight files / KMCS sample files
# --------------------------------------------------------------------------

_KMCD_MAGIC = b"KMCD"
_KMCD_VERSION = 1
_KMCD_HEAD = struct.Struct("<4sHHHHH")  # magic, version, K, rows, cols, tensor_count

_KMCS_MAGIC = b"KMCS"
_KMCS_HEAD = struct.Struct("<4sIHHH")   # magic, count, K, rows, cols


def save_decoder(net: DecoderNet, path: str) -> None:
    """Serialize weights as float32 in fixed declaration order."""
    params = net.params()
    with open(path, "wb") as fh:
        fh.write(_KMCD_HEAD.pack(_KMCD_MAGIC, _KMCD_VERSION, net.in_channels,
                                 net.grid[0], net.grid[1], len(params)))
        for _, arr in params:
            fh.write(struct.pack("<H", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}H", *arr.shape))
        for _, arr in params:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_decoder(path: str) -> DecoderNet:
    """Read a KMCD weight file; validates magic, version, and tensor shapes."""
    with open(path, "rb") as fh:
        head = fh.read(_KMCD_HEAD.size)
        if len(head) < _KMCD_HEAD.size:
            raise FormatError("KMCD file truncated before header end")
        magic, version, k, grid_rows, grid_cols, count = _KMCD_HEAD.unpack(head)
        if magic != _KMCD_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_KMCD_MAGIC!r}")
        if version != _KMCD_VERSION:
            raise FormatError(f"unsupported KMCD version {version}")
        if count != len(_PARAM_ORDER):
            raise FormatError(f"expected {len(_PARAM_ORDER)} tensors, header says {count}")
        shapes = []
        for _ in range(count):
            raw = fh.read(2)
            if len(raw) < 2:
                raise FormatError("KMCD file truncated inside shape table")
            (ndim,) = struct.unpack("<H", raw)
            raw = fh.read(2 * ndim)
            if len(raw) < 2 * ndim:
                raise FormatError("KMCD file truncated inside shape table")
            shapes.append(struct.unpack(f"<{ndim}H", raw))
        arrays = {}
        for name, shape in zip(_PARAM_ORDER, shapes):
            nvals = int(np.prod(shape))
            raw = fh.read(4 * nvals)
            if len(raw) < 4 * nvals:
                raise FormatError("KMCD payload truncated")
            arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    net = DecoderNet(grid=(grid_rows, grid_cols), **arrays)
    reference = init_decoder(k, grid=(grid_rows, grid_cols))
    for name, arr in reference.params():
        if arrays[name].shape != arr.shape:
            raise FormatError(
                f"tensor {name} has shape {arrays[name].shape}, expected {arr.shape}"
            )
    return net


def save_samples(samples: SampleSet, path: str) -> None:
    """Serialize a SampleSet: per sample, float32 target pair + stack tensor."""
    n, k, grid_rows, grid_cols = samples.stacks.shape
    with open(path, "wb") as fh:
        fh.write(_KMCS_HEAD.pack(_KMCS_MAGIC, n, k, grid_rows, grid_cols))
        for i in range(n):
            fh.write(np.ascontiguousarray(samples.targets[i], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(samples.stacks[i], dtype="<f4").tobytes())


def load_samples(path: str) -> SampleSet:
    with open(path, "rb") as fh:
        head = fh.read(_KMCS_HEAD.size)
        if len(head) < _KMCS_HEAD.size:
            raise FormatError("KMCS file truncated before header end")
        magic, count, k, grid_rows, grid_cols = _KMCS_HEAD.unpack(head)
        if magic != _KMCS_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_KMCS_MAGIC!r}")
        if count < 1 or k < 1 or grid_rows < 1 or grid_cols < 1:
            raise FormatError("KMCS header declares an empty dataset")
        per_stack = k * grid_rows * grid_cols
        payload = fh.read()
    need = count * 4 * (2 + per_stack)
    if len(payload) < need:
        raise FormatError(f"KMCS payload truncated: need {need} bytes, have {len(payload)}")
    flat = np.frombuffer(payload[:need], dtype="<f4").reshape(count, 2 + per_stack)
    targets = flat[:, :2].astype(np.float64)
    stacks = flat[:, 2:].astype(np.float64).reshape(count, k, grid_rows, grid_cols)
    return SampleSet(stacks=stacks, targets=targets)
