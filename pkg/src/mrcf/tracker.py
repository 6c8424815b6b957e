"""The full tracking pipeline: detect, decode, rescale, adapt, retrain."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .adaptation import LayerStats, layer_loss, make_layer_stats, update_model, update_stability
from .config import TrackerConfig
from .correlation import DualModel, ResponseMap, detect_response, make_dual_model
from .decoder import DecoderNet, ResponseStack, decoder_forward, load_decoder, maxres_decode, stack_responses
from .errors import EmptySequenceError, InvalidTargetError
from .features import (
    FeatureMap,
    apply_cosine_window,
    crop_padded_patch,
    extract_grayscale,
    extract_hog_lite,
    load_feature_stack,
    normalize_channels,
    read_image,
    read_stack_header,
)
from .labels import LabelMap, gaussian_labels
from .scale import ScaleState, build_scale_samples, estimate_scale, make_scale_state, train_scale

logger = logging.getLogger("mrcf")

_GRAY_LAYER_CELLS = (1, 2, 4)
_HOG_LAYER_CELLS = (2, 4, 8)


class PatchFeatureSource:
    """Extracts a pyramid of hand-crafted feature layers from frame crops."""

    def __init__(self, config: TrackerConfig):
        self.config = config
        self.mode = config.features
        self.cells = _GRAY_LAYER_CELLS if self.mode == "gray" else _HOG_LAYER_CELLS

    def stack(self, frame, center, size, frame_index) -> list[FeatureMap]:
        if frame is None:
            raise InvalidTargetError("in-core feature extraction requires a frame")
        cfg = self.config
        patch = crop_padded_patch(frame, center, size, cfg.padding,
                                  patch_size=(cfg.patch_w, cfg.patch_h))
        layers = []
        for i, cell in enumerate(self.cells, start=1):
            if self.mode == "gray":
                fm = extract_grayscale(patch, cell, layer_id=i)
            else:
                fm = extract_hog_lite(patch, cell, cfg.hog_orientations, layer_id=i)
            layers.append(apply_cosine_window(fm))
        return layers


class FileFeatureSource:
    """Serves per-frame feature stacks from a KMCF file, ignoring the frame.

    Stacks are assumed to be target-centered crops matching the tracker's
    patch geometry (as written by the exporter). Channels are min-max
    normalized, zero-meaned, and Hann-windowed like in-core features.
    """

    def __init__(self, path: str):
        self.path = path
        self.layout = read_stack_header(path)

    def stack(self, frame, center, size, frame_index) -> list[FeatureMap]:
        stack = load_feature_stack(self.path, frame_index)
        layers = []
        for fm in stack.layers:
            data = normalize_channels(fm.data)
            data = data - data.mean(axis=(1, 2), keepdims=True)
            layers.append(apply_cosine_window(
                FeatureMap(data=data, layer_id=fm.layer_id, cell_size=fm.cell_size)
            ))
        return layers


def make_feature_source(config: TrackerConfig):
    if config.features.startswith("kmcf:"):
        return FileFeatureSource(config.features.split(":", 1)[1])
    return PatchFeatureSource(config)


@dataclass
class TrackState:
    config: TrackerConfig
    center: tuple[float, float]
    base_size: tuple[float, float]
    models: list[DualModel]
    stats: list[LayerStats]
    labels: list[LabelMap]
    scale: ScaleState
    source: object
    decoder_net: DecoderNet | None = None
    frame_index: int = 1
    lost: bool = False
    last_losses: list[float] = field(default_factory=list)

    @property
    def size(self) -> tuple[float, float]:
        return (self.base_size[0] * self.scale.current_scale,
                self.base_size[1] * self.scale.current_scale)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        w, h = self.size
        return (self.center[0] - w / 2.0, self.center[1] - h / 2.0, w, h)


def _layer_labels(layers: list[FeatureMap], padding: float) -> list[LabelMap]:
    """One label map per layer; target extent in cells is grid_extent/padding."""
    out = []
    for fm in layers:
        _, rows, cols = fm.data.shape
        out.append(gaussian_labels(rows, cols, (cols / padding, rows / padding)))
    return out


def _train_layers(layers, labels, config) -> list[DualModel]:
    return [make_dual_model(fm, lab, config.lambda_, config.kernel_sigma)
            for fm, lab in zip(layers, labels)]


def _resolve_decoder(config: TrackerConfig, decoder_net: DecoderNet | None) -> DecoderNet | None:
    if decoder_net is not None:
        return decoder_net
    if not config.decoder:
        return None
    if config.decoder_weights:
        return load_decoder(config.decoder_weights)
    logger.warning("decoder=on but no decoder_weights configured; "
                   "falling back to MaxRes decoding")
    return None


def init_tracker(
    frame: np.ndarray,
    bbox: tuple[float, float, float, float],
    config: TrackerConfig | None = None,
    decoder_net: DecoderNet | None = None,
) -> TrackState:
    """Train all per-layer models and the scale filter on the first frame."""
    config = (config or TrackerConfig()).validate()
    x, y, w, h = (float(v) for v in bbox)
    if not all(np.isfinite(v) for v in (x, y, w, h)):
        raise InvalidTargetError("bbox must be finite")
    if w <= 0 or h <= 0:
        raise InvalidTargetError("bbox must have positive area")

    center = (x + w / 2.0, y + h / 2.0)
    source = make_feature_source(config)
    layers = source.stack(frame, center, (w, h), 1)
    labels = _layer_labels(layers, config.padding)
    models = _train_layers(layers, labels, config)
    stats = [
        make_layer_stats(config.eta, config.stability_window,
                         config.eta_max_factor * config.eta, config.inverse_stability)
        for _ in layers
    ]
    # The scale filter keeps its own fixed learning rate (the base eta),
    # independent of the per-layer adaptive rates.
    scale = make_scale_state(config.scales, config.scale_factor,
                             config.eta, config.lambda_)
    if frame is not None:
        scale = train_scale(scale, build_scale_samples(frame, center, (w, h), scale))
    return TrackState(
        config=config, center=center, base_size=(w, h),
        models=models, stats=stats, labels=labels, scale=scale,
        source=source, decoder_net=_resolve_decoder(config, decoder_net),
    )


def _decode_stack(state: TrackState, stack: ResponseStack) -> tuple[float, float]:
    """Translation in patch pixels from either the net or the MaxRes baseline."""
    cfg = state.config
    if state.decoder_net is not None:
        pred = decoder_forward(state.decoder_net, stack)
        return float(pred[0]) * cfg.patch_w, float(pred[1]) * cfg.patch_h
    return maxres_decode(stack, (cfg.patch_w, cfg.patch_h))


def _patch_to_frame(state: TrackState, dx_px: float, dy_px: float) -> tuple[float, float]:
    cfg = state.config
    w, h = state.size
    return (dx_px * cfg.padding * w / cfg.patch_w,
            dy_px * cfg.padding * h / cfg.patch_h)


def _layer_losses(state: TrackState, responses: list[ResponseMap],
                  dx_px: float, dy_px: float) -> list[float]:
    """Response gap at the chosen position, per layer, circularly wrapped."""
    losses = []
    for resp in responses:
        rows, cols = resp.data.shape
        cell_w = state.config.patch_w / cols
        cell_h = state.config.patch_h / rows
        cx = int(round(dx_px / cell_w)) % cols
        cy = int(round(dy_px / cell_h)) % rows
        losses.append(layer_loss(resp, (cx, cy)))
    return losses


def track_step(state: TrackState, frame: np.ndarray | None) -> tuple[float, float, float, float]:
    """Consume the next frame and return the new target box.

    A lost tracker is frozen: the last box is returned unchanged. ``frame``
    may be None only with file-based features (scale search is then skipped).
    """
    if state.lost:
        state.frame_index += 1
        return state.bbox

    cfg = state.config
    probe_index = state.frame_index + 1
    try:
        layers = state.source.stack(frame, state.center, state.size, probe_index)
        responses = [detect_response(m, z) for m, z in zip(state.models, layers)]
        stack = stack_responses(responses)
        dx_px, dy_px = _decode_stack(state, stack)
        dx, dy = _patch_to_frame(state, dx_px, dy_px)

        cx, cy = state.center[0] + dx, state.center[1] + dy
        if frame is not None:
            fh, fw = frame.shape[:2]
            cx = float(np.clip(cx, 0.0, fw - 1.0))
            cy = float(np.clip(cy, 0.0, fh - 1.0))
        if not (np.isfinite(cx) and np.isfinite(cy)):
            raise InvalidTargetError("center diverged")
        state.center = (cx, cy)

        if frame is not None and len(state.scale.factors) > 1:
            samples = build_scale_samples(frame, state.center, state.base_size, state.scale)
            state.scale, _ = estimate_scale(state.scale, samples)

        losses = _layer_losses(state, responses, dx_px, dy_px)
        state.last_losses = losses
        rates = []
        for i, loss in enumerate(losses):
            if cfg.adaptive_lr:
                state.stats[i] = update_stability(state.stats[i], loss)
                rates.append(state.stats[i].eta_k)
            else:
                rates.append(cfg.eta)

        new_layers = state.source.stack(frame, state.center, state.size, probe_index)
        for i, fm in enumerate(new_layers):
            fresh = make_dual_model(fm, state.labels[i], cfg.lambda_, cfg.kernel_sigma)
            state.models[i] = update_model(state.models[i], fresh, rates[i])
    except InvalidTargetError:
        state.lost = True

    state.frame_index += 1
    return state.bbox


def run_sequence(
    frames,
    init_bbox: tuple[float, float, float, float],
    config: TrackerConfig | None = None,
    decoder_net: DecoderNet | None = None,
) -> tuple[list[tuple[float, float, float, float]], TrackState]:
    """Track through a whole sequence of arrays or image paths.

    Never reads ground truth beyond the first box. Returns one box per frame
    (the first is the given init box) plus the final state.
    """
    frames = list(frames)
    if not frames:
        raise EmptySequenceError("sequence has no frames")

    def as_array(item):
        return read_image(item) if isinstance(item, str) else item

    state = init_tracker(as_array(frames[0]), init_bbox, config, decoder_net)
    boxes = [tuple(float(v) for v in init_bbox)]
    for item in frames[1:]:
        boxes.append(track_step(state, as_array(item)))
    return boxes, state


def record_samples(
    frames,
    gt_boxes,
    config: TrackerConfig | None = None,
) -> tuple[list[np.ndarray], list[tuple[float, float]]]:
    """Ground-truth-driven rollout that collects (response stack, delta) pairs.

    The tracker is re-centered on the annotated box after every frame (teacher
    forcing), so each recorded stack is labeled with the true normalized
    displacement. Samples whose displacement falls outside the decodable range
    (|delta| >= 0.45) are skipped.
    """
    frames = list(frames)
    gt_boxes = [tuple(float(v) for v in b) for b in gt_boxes]
    if not frames:
        raise EmptySequenceError("sequence has no frames")
    if len(frames) != len(gt_boxes):
        raise ValueError("one ground-truth box per frame required")

    config = (config or TrackerConfig()).validate()

    def as_array(item):
        return read_image(item) if isinstance(item, str) else item

    state = init_tracker(as_array(frames[0]), gt_boxes[0], config)
    stacks: list[np.ndarray] = []
    targets: list[tuple[float, float]] = []
    for t in range(1, len(frames)):
        frame = as_array(frames[t])
        probe_index = t + 1
        prev_box = gt_boxes[t - 1]
        cur_box = gt_boxes[t]
        prev_center = (prev_box[0] + prev_box[2] / 2.0, prev_box[1] + prev_box[3] / 2.0)
        cur_center = (cur_box[0] + cur_box[2] / 2.0, cur_box[1] + cur_box[3] / 2.0)

        layers = state.source.stack(frame, prev_center, (prev_box[2], prev_box[3]), probe_index)
        responses = [detect_response(m, z) for m, z in zip(state.models, layers)]
        stack = stack_responses(responses)
        dx_n = (cur_center[0] - prev_center[0]) / (config.padding * prev_box[2])
        dy_n = (cur_center[1] - prev_center[1]) / (config.padding * prev_box[3])
        if abs(dx_n) < 0.45 and abs(dy_n) < 0.45:
            stacks.append(stack.maps)
            targets.append((dx_n, dy_n))

        new_layers = state.source.stack(frame, cur_center, (cur_box[2], cur_box[3]), probe_index)
        for i, fm in enumerate(new_layers):
            fresh = make_dual_model(fm, state.labels[i], config.lambda_, config.kernel_sigma)
            state.models[i] = update_model(state.models[i], fresh, config.eta)
        state.center = cur_center
        state.frame_index = probe_index
    return stacks, targets
