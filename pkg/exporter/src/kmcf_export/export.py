"""Sequence export: tracker-convention crops, CNN forward, KMCF writing.

KMCF layout (little-endian):
  magic "KMCF" | version u16 = 1 | frame_count u32 | layer_count u16
  per layer: layer_id u16 | cell_size u16 | channels u16 | rows u16 | cols u16
  then frame-major, layer-major float32 tensors in C order (channel, row, col)
"""

import os
import struct
from dataclasses import dataclass, field

import cv2
import numpy as np

from .config import Geometry, read_geometry
from .errors import ConfigMismatchError, LayoutError, ParseError
from .network import DEFAULT_LAYERS, build_network, stage_activations, stage_info

_IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")

# standard channel statistics the public VGG-19 checkpoints were trained with
_RGB_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float64)
_RGB_STD = np.array([0.229, 0.224, 0.225], dtype=np.float64)

_KMCF_MAGIC = b"KMCF"
_KMCF_VERSION = 1
_KMCF_HEAD = struct.Struct("<4sHIH")
_KMCF_LAYER = struct.Struct("<5H")


@dataclass
class ExportSpec:
    """What to export: which sequence, which stages, which geometry."""

    sequence_dir: str
    out_path: str
    layers: tuple = DEFAULT_LAYERS
    resize: tuple | None = None        # (w, h); defaults to the config patch
    config_path: str | None = None
    weights_path: str | None = None
    random_seed: int | None = None
    post_relu: bool = True
    batch_size: int = 4

    def __post_init__(self):
        names = list(dict.fromkeys(self.layers))
        if not names:
            raise ValueError("need at least one layer")
        for name in names:
            stage_info(name)
        # layer ids follow network depth regardless of the requested order
        names.sort(key=lambda name: stage_info(name)[0])
        self.layers = tuple(names)
        if self.resize is not None:
            self.resize = (int(self.resize[0]), int(self.resize[1]))
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass(frozen=True)
class LayerInfo:
    name: str
    layer_id: int
    cell_size: int
    channels: int
    rows: int
    cols: int


@dataclass(frozen=True)
class ExportResult:
    out_path: str
    frames: int
    layers: tuple = field(default_factory=tuple)


def list_frames(sequence_dir: str) -> list[str]:
    """Image files of a sequence, sorted by basename; img/ subdir preferred."""
    if not os.path.isdir(sequence_dir):
        raise LayoutError(f"no such sequence directory: {sequence_dir}")
    root = sequence_dir
    img = os.path.join(sequence_dir, "img")
    if os.path.isdir(img):
        root = img
    names = sorted(n for n in os.listdir(root)
                   if n.lower().endswith(_IMAGE_EXTS))
    if not names:
        raise LayoutError(f"no image frames under {sequence_dir}")
    return [os.path.join(root, n) for n in names]


def read_boxes(sequence_dir: str, n_frames: int) -> list[tuple]:
    """Per-frame crop boxes from the sequence annotations.

    With one box per frame each frame is cropped around its own annotation;
    otherwise the first box is reused throughout.
    """
    path = os.path.join(sequence_dir, "groundtruth_rect.txt")
    if not os.path.exists(path):
        raise LayoutError(f"no annotations: {path} is missing")
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.replace(",", " ").replace("\t", " ").split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", lineno)
            try:
                box = tuple(float(p) for p in parts)
            except ValueError:
                raise ParseError(f"non-numeric box {line!r}", lineno) from None
            if box[2] <= 0 or box[3] <= 0:
                raise ParseError("box size must be positive", lineno)
            boxes.append(box)
    if not boxes:
        raise LayoutError(f"no annotations in {path}")
    if len(boxes) == n_frames:
        return boxes
    return [boxes[0]] * n_frames


def _to_float01(frame: np.ndarray) -> np.ndarray:
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    if frame.dtype == np.uint16:
        return frame.astype(np.float64) / 65535.0
    return frame.astype(np.float64)


def crop_patch(frame: np.ndarray, box: tuple, padding: float,
               patch_size: tuple[int, int]) -> np.ndarray:
    """Padded crop around the box, resampled to the patch -- the tracker way.

    Integer-grid crop centered at the floored box center, spanning
    round(padding * extent) pixels per axis with edge replication, then
    a bilinear resize to patch_size = (width, height).
    """
    x, y, w, h = box
    cx, cy = x + w / 2.0, y + h / 2.0
    crop_w = max(1, int(round(padding * w)))
    crop_h = max(1, int(round(padding * h)))

    pixels = _to_float01(frame)
    frame_h, frame_w = pixels.shape[:2]
    xs = np.floor(cx) + np.arange(crop_w) - np.floor(crop_w / 2.0)
    ys = np.floor(cy) + np.arange(crop_h) - np.floor(crop_h / 2.0)
    xs = np.clip(xs, 0, frame_w - 1).astype(np.intp)
    ys = np.clip(ys, 0, frame_h - 1).astype(np.intp)
    raw = pixels[np.ix_(ys, xs)]

    patch_w, patch_h = patch_size
    resized = cv2.resize(raw, (patch_w, patch_h), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return resized


def _prep_input(path: str, box: tuple, padding: float,
                patch_size: tuple[int, int]) -> np.ndarray:
    frame = cv2.imread(path, cv2.IMREAD_COLOR)
    if frame is None:
        raise LayoutError(f"unreadable image: {path}")
    patch = crop_patch(frame, box, padding, patch_size)
    rgb = patch[:, :, ::-1]                     # imread hands back BGR
    normed = (rgb - _RGB_MEAN) / _RGB_STD
    return normed.transpose(2, 0, 1).astype(np.float32)


def _resolve_patch(spec: ExportSpec, geometry: Geometry) -> tuple[int, int]:
    if spec.resize is None:
        return (geometry.patch_w, geometry.patch_h)
    configured = {"patch_w", "patch_h"} & geometry.explicit
    if configured and spec.resize != (geometry.patch_w, geometry.patch_h):
        raise ConfigMismatchError(
            f"resize {spec.resize} contradicts config patch "
            f"{(geometry.patch_w, geometry.patch_h)}")
    return spec.resize


def export_sequence(spec: ExportSpec) -> ExportResult:
    """Crop, forward, and stream every frame's activations into one file."""
    geometry = read_geometry(spec.config_path)
    patch_size = _resolve_patch(spec, geometry)
    for name in spec.layers:
        cell = stage_info(name)[2]
        if patch_size[0] < cell or patch_size[1] < cell:
            raise ValueError(
                f"patch {patch_size} too small for {name} (stride {cell})")

    frame_paths = list_frames(spec.sequence_dir)
    boxes = read_boxes(spec.sequence_dir, len(frame_paths))
    trunk = build_network(spec.weights_path, spec.random_seed)

    infos: tuple[LayerInfo, ...] = ()
    with open(spec.out_path, "wb") as fh:
        for start in range(0, len(frame_paths), spec.batch_size):
            chunk = list(zip(frame_paths[start:start + spec.batch_size],
                             boxes[start:start + spec.batch_size]))
            batch = np.stack([_prep_input(path, box, geometry.padding,
                                          patch_size)
                              for path, box in chunk])
            acts = stage_activations(trunk, batch, spec.layers, spec.post_relu)
            if not infos:
                infos = _layer_table(spec.layers, acts)
                fh.write(_KMCF_HEAD.pack(_KMCF_MAGIC, _KMCF_VERSION,
                                         len(frame_paths), len(infos)))
                for info in infos:
                    fh.write(_KMCF_LAYER.pack(info.layer_id, info.cell_size,
                                              info.channels, info.rows,
                                              info.cols))
            for i in range(len(chunk)):
                for name in spec.layers:
                    fh.write(np.ascontiguousarray(acts[name][i],
                                                  dtype="<f4").tobytes())
    return ExportResult(out_path=spec.out_path, frames=len(frame_paths),
                        layers=infos)


def _layer_table(layer_names, acts) -> tuple[LayerInfo, ...]:
    infos = []
    for layer_id, name in enumerate(layer_names, start=1):
        _, channels, rows, cols = acts[name].shape
        cell = stage_info(name)[2]
        for label, value in (("layer_id", layer_id), ("cell_size", cell),
                             ("channels", channels), ("rows", rows),
                             ("cols", cols)):
            if not 0 <= value <= 0xFFFF:
                raise ValueError(f"{label}={value} does not fit the u16 "
                                 "header field")
        infos.append(LayerInfo(name, layer_id, cell, channels, rows, cols))
    return tuple(infos)
