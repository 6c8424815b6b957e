"""Patch extraction, hand-crafted feature channels, and the KMCF stack format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import FormatError, InvalidTargetError

_GRAY_CELLS = (1, 2, 4)


@dataclass
class Patch:
    """A fixed-size resampled crop around the target.

    ``pixels`` is (patch_h, patch_w, C) float64 in [0, 1]; ``source_rect`` is
    the (x, y, w, h) region of the source frame the patch was resampled from.
    """

    pixels: np.ndarray
    source_rect: tuple[float, float, float, float]


@dataclass
class FeatureMap:
    """One feature layer: ``data`` is (channels, rows, cols) float64."""

    data: np.ndarray
    layer_id: int
    cell_size: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class FeatureStack:
    """All feature layers extracted from one frame, shallowest first."""

    layers: list[FeatureMap]
    frame_index: int = 1


def read_image(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"could not read image: {path}")
    return img


def to_float01(frame: np.ndarray) -> np.ndarray:
    """Normalize any uint frame to float64 in [0, 1]; pass floats through."""
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    if frame.dtype == np.uint16:
        return frame.astype(np.float64) / 65535.0
    return frame.astype(np.float64)


def crop_window(frame: np.ndarray, center: tuple[float, float], size_px: tuple[int, int]) -> np.ndarray:
    """Integer-grid crop centered near ``center`` with edge replication.

    Out-of-frame sample positions are clamped to the nearest valid pixel, so
    crops near borders replicate edge rows/columns instead of failing.
    """
    frame_h, frame_w = frame.shape[:2]
    crop_w, crop_h = size_px
    xs = np.floor(center[0]) + np.arange(crop_w) - np.floor(crop_w / 2.0)
    ys = np.floor(center[1]) + np.arange(crop_h) - np.floor(crop_h / 2.0)
    xs = np.clip(xs, 0, frame_w - 1).astype(np.intp)
    ys = np.clip(ys, 0, frame_h - 1).astype(np.intp)
    return frame[np.ix_(ys, xs)]


def crop_padded_patch(
    frame: np.ndarray,
    center: tuple[float, float],
    target_size: tuple[float, float],
    padding: float,
    patch_size: tuple[int, int] = (240, 160),
) -> Patch:
    """Crop a padded window around the target and resample to a fixed patch.

    The crop spans ``padding`` times the target extent per axis and is resized
    (bilinear) to ``patch_size`` = (width, height).
    """
    tw, th = target_size
    cx, cy = center
    if not (np.isfinite(cx) and np.isfinite(cy) and np.isfinite(tw) and np.isfinite(th)):
        raise InvalidTargetError("target geometry must be finite")
    if tw <= 0 or th <= 0:
        raise InvalidTargetError("target size must be positive")
    if padding <= 0:
        raise InvalidTargetError("padding must be positive")

    crop_w = max(1, int(round(padding * tw)))
    crop_h = max(1, int(round(padding * th)))
    raw = crop_window(to_float01(frame), center, (crop_w, crop_h))
    if raw.ndim == 2:
        raw = raw[:, :, None]

    patch_w, patch_h = patch_size
    resized = cv2.resize(raw, (patch_w, patch_h), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    rect = (
        np.floor(cx) - np.floor(crop_w / 2.0),
        np.floor(cy) - np.floor(crop_h / 2.0),
        float(crop_w),
        float(crop_h),
    )
    return Patch(pixels=resized.astype(np.float64), source_rect=rect)


def _pool_cells(plane: np.ndarray, cell_size: int, reduce: str = "mean") -> np.ndarray:
    rows = plane.shape[0] // cell_size
    cols = plane.shape[1] // cell_size
    trimmed = plane[: rows * cell_size, : cols * cell_size]
    blocks = trimmed.reshape(rows, cell_size, cols, cell_size)
    if reduce == "sum":
        return blocks.sum(axis=(1, 3))
    return blocks.mean(axis=(1, 3))


def extract_grayscale(patch: Patch, cell_size: int, layer_id: int = 1) -> FeatureMap:
    """Mean-pooled, zero-mean intensity channel at the given cell size."""
    if cell_size not in _GRAY_CELLS:
        raise ValueError(f"cell_size must be one of {_GRAY_CELLS}")
    gray = patch.pixels.mean(axis=2)
    pooled = _pool_cells(gray, cell_size)
    pooled = pooled - pooled.mean()
    return FeatureMap(data=pooled[None, :, :], layer_id=layer_id, cell_size=cell_size)


def orientation_histograms(gray: np.ndarray, cell_size: int, n_orientations: int) -> np.ndarray:
    """Per-cell histograms of unsigned gradient orientation, magnitude weighted.

    Returns (n_orientations, rows, cols) of raw (unnormalized) cell sums.
    """
    gx = np.gradient(gray, axis=1)
    gy = np.gradient(gray, axis=0)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / np.pi * n_orientations).astype(np.intp), n_orientations - 1)

    rows = gray.shape[0] // cell_size
    cols = gray.shape[1] // cell_size
    hist = np.empty((n_orientations, rows, cols), dtype=np.float64)
    for b in range(n_orientations):
        hist[b] = _pool_cells(np.where(bins == b, mag, 0.0), cell_size, reduce="sum")
    return hist


def extract_hog_lite(
    patch: Patch,
    cell_size: int,
    n_orientations: int = 9,
    layer_id: int = 1,
) -> FeatureMap:
    """Simplified HOG: cell orientation histograms with per-cell L2 normalization.

    Each cell vector v is scaled by 1/sqrt(||v||^2 + 1e-5); channels are then
    shifted to zero mean independently.
    """
    if cell_size < 2:
        raise ValueError("hog cell_size must be >= 2")
    if n_orientations < 4:
        raise ValueError("need at least 4 orientation bins")
    gray = patch.pixels.mean(axis=2)
    hist = orientation_histograms(gray, cell_size, n_orientations)
    norm = np.sqrt((hist**2).sum(axis=0, keepdims=True) + 1e-5)
    data = hist / norm
    data = data - data.mean(axis=(1, 2), keepdims=True)
    return FeatureMap(data=data, layer_id=layer_id, cell_size=cell_size)


def apply_cosine_window(fm: FeatureMap) -> FeatureMap:
    """Multiply every channel by the separable Hann window. Pure function."""
    _, rows, cols = fm.data.shape
    win = np.outer(np.hanning(rows), np.hanning(cols))
    return FeatureMap(data=fm.data * win[None, :, :], layer_id=fm.layer_id, cell_size=fm.cell_size)


def normalize_channels(data: np.ndarray) -> np.ndarray:
    """Min-max rescale each channel to [0, 1]; constant channels become zeros."""
    lo = data.min(axis=(-2, -1), keepdims=True)
    hi = data.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    out = np.zeros_like(data, dtype=np.float64)
    np.divide(data - lo, span, out=out, where=span > 0)
    return out


# --------------------------------------------------------------------------
# KMCF binary stack files
#
# Layout (little-endian):
#   magic "KMCF" | version u16 = 1 | frame_count u32 | layer_count u16
#   per layer: layer_id u16 | cell_size u16 | channels u16 | rows u16 | cols u16
#   then frame-major, layer-major float32 tensors in C order (channel, row, col)
# --------------------------------------------------------------------------

_KMCF_MAGIC = b"KMCF"
_KMCF_VERSION = 1
_KMCF_HEAD = struct.Struct("<4sHIH")
_KMCF_LAYER = struct.Struct("<5H")


@dataclass(frozen=True)
class LayerDesc:
    layer_id: int
    cell_size: int
    channels: int
    rows: int
    cols: int

    @property
    def values(self) -> int:
        return self.channels * self.rows * self.cols


@dataclass(frozen=True)
class StackLayout:
    frame_count: int
    layers: tuple[LayerDesc, ...]

    @property
    def frame_bytes(self) -> int:
        return 4 * sum(d.values for d in self.layers)


def _layout_of(stack: FeatureStack) -> tuple[LayerDesc, ...]:
    descs = []
    for fm in stack.layers:
        channels, rows, cols = fm.data.shape
        for name, value in (("layer_id", fm.layer_id), ("cell_size", fm.cell_size),
                            ("channels", channels), ("rows", rows), ("cols", cols)):
            if not 0 <= value <= 0xFFFF:
                raise ValueError(f"{name}={value} does not fit the u16 header field")
        descs.append(LayerDesc(fm.layer_id, fm.cell_size, channels, rows, cols))
    return tuple(descs)


def write_feature_stacks(path: str, stacks: list[FeatureStack]) -> None:
    """Write per-frame feature stacks to a KMCF file.

    All stacks must share an identical layer layout; values are stored float32.
    """
    if not stacks:
        raise ValueError("need at least one feature stack")
    layout = _layout_of(stacks[0])
    for stack in stacks[1:]:
        if _layout_of(stack) != layout:
            raise ValueError("all stacks must share the same layer layout")
    with open(path, "wb") as fh:
        fh.write(_KMCF_HEAD.pack(_KMCF_MAGIC, _KMCF_VERSION, len(stacks), len(layout)))
        for desc in layout:
            fh.write(_KMCF_LAYER.pack(desc.layer_id, desc.cell_size,
                                      desc.channels, desc.rows, desc.cols))
        for stack in stacks:
            for fm in stack.layers:
                fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_stack_header(path: str) -> StackLayout:
    """Parse and validate a KMCF header, including total payload size."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_KMCF_HEAD.size)
        if len(head) < _KMCF_HEAD.size:
            raise FormatError("KMCF file truncated before header end")
        magic, version, frame_count, layer_count = _KMCF_HEAD.unpack(head)
        if magic != _KMCF_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_KMCF_MAGIC!r}")
        if version != _KMCF_VERSION:
            raise FormatError(f"unsupported KMCF version {version}")
        layers = []
        for _ in range(layer_count):
            raw = fh.read(_KMCF_LAYER.size)
            if len(raw) < _KMCF_LAYER.size:
                raise FormatError("KMCF file truncated inside layer table")
            layers.append(LayerDesc(*_KMCF_LAYER.unpack(raw)))
    layout = StackLayout(frame_count=frame_count, layers=tuple(layers))
    if not layout.layers:
        raise FormatError("KMCF file declares zero layers")
    expected = _KMCF_HEAD.size + _KMCF_LAYER.size * layer_count + frame_count * layout.frame_bytes
    if size < expected:
        raise FormatError(
            f"KMCF payload truncated: need {expected} bytes, file has {size}"
        )
    return layout


def load_feature_stack(path: str, frame_index: int) -> FeatureStack:
    """Load the 1-based ``frame_index``-th stack from a KMCF file."""
    layout = read_stack_header(path)
    if not 1 <= frame_index <= layout.frame_count:
        raise IndexError(
            f"frame_index {frame_index} outside [1, {layout.frame_count}]"
        )
    offset = (_KMCF_HEAD.size + _KMCF_LAYER.size * len(layout.layers)
              + (frame_index - 1) * layout.frame_bytes)
    layers = []
    with open(path, "rb") as fh:
        fh.seek(offset)
        for desc in layout.layers:
            nbytes = 4 * desc.values
            raw = fh.read(nbytes)
            if len(raw) < nbytes:
                raise FormatError("KMCF payload truncated mid-frame")
            data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            layers.append(FeatureMap(
                data=data.reshape(desc.channels, desc.rows, desc.cols),
                layer_id=desc.layer_id,
                cell_size=desc.cell_size,
            ))
    return FeatureStack(layers=layers, frame_index=frame_index)
