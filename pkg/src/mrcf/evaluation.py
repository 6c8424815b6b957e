"""Sequence loading, precision/success metrics, and one-pass evaluation runs."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import TrackerConfig
from .decoder import DecoderNet
from .errors import LayoutError, ParseError, ShapeError
from .tracker import run_sequence

_IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")

DISTANCE_THRESHOLDS = np.arange(0, 51, dtype=np.float64)          # 0..50 px
OVERLAP_THRESHOLDS = np.linspace(0.0, 1.0, 51)                    # step 0.02


@dataclass
class Sequence:
    name: str
    frame_paths: list[str]
    boxes: np.ndarray      # (T, 4) float64, x y w h


@dataclass
class SequenceResult:
    name: str
    status: str                       # "ok" | "tracking_lost" | "error"
    frames: int = 0
    p20: float = float("nan")
    auc: float = float("nan")
    precision: np.ndarray | None = None
    success: np.ndarray | None = None
    seconds: float = 0.0
    message: str = ""


@dataclass
class OpeResult:
    sequences: list[SequenceResult] = field(default_factory=list)
    precision: np.ndarray | None = None   # aggregate curves (mean over ok runs)
    success: np.ndarray | None = None
    p20: float = float("nan")
    auc: float = float("nan")


def load_sequence(seq_dir: str) -> Sequence:
    """Load one annotated sequence directory.

    Expects ``img/`` with sorted frames and ``groundtruth_rect.txt`` with one
    x,y,w,h line per frame (comma or whitespace separated).
    """
    img_dir = os.path.join(seq_dir, "img")
    gt_path = os.path.join(seq_dir, "groundtruth_rect.txt")
    if not os.path.isdir(img_dir):
        raise LayoutError(f"missing img/ directory under {seq_dir}")
    if not os.path.isfile(gt_path):
        raise LayoutError(f"missing groundtruth_rect.txt under {seq_dir}")

    frames = sorted(
        os.path.join(img_dir, name)
        for name in os.listdir(img_dir)
        if name.lower().endswith(_IMAGE_EXTS)
    )
    if not frames:
        raise LayoutError(f"no image frames under {img_dir}")

    boxes = []
    with open(gt_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", lineno)
            try:
                box = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric box {line!r}", lineno) from None
            if box[2] <= 0 or box[3] <= 0:
                raise ParseError(f"box {line!r} has non-positive area", lineno)
            boxes.append(box)
    if len(boxes) != len(frames):
        raise LayoutError(
            f"{seq_dir}: {len(frames)} frames but {len(boxes)} annotation lines"
        )
    return Sequence(name=os.path.basename(os.path.normpath(seq_dir)),
                    frame_paths=frames, boxes=np.asarray(boxes, dtype=np.float64))


def list_sequence_dirs(dataset_dir: str) -> list[str]:
    """Immediate subdirectories that look like sequences, sorted by name."""
    out = []
    for name in sorted(os.listdir(dataset_dir)):
        path = os.path.join(dataset_dir, name)
        if os.path.isdir(path) and os.path.isdir(os.path.join(path, "img")):
            out.append(path)
    if not out:
        raise LayoutError(f"no sequence directories under {dataset_dir}")
    return out


def box_center(box) -> tuple[float, float]:
    return (box[0] + box[2] / 2.0, box[1] + box[3] / 2.0)


def iou(a, b) -> float:
    """Intersection-over-union of two x,y,w,h boxes."""
    ax1, ay1, aw, ah = a
    bx1, by1, bw, bh = b
    ix = max(0.0, min(ax1 + aw, bx1 + bw) - max(ax1, bx1))
    iy = max(0.0, min(ay1 + ah, by1 + bh) - max(ay1, by1))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def precision_curve(pred, gt) -> tuple[np.ndarray, float]:
    """Fraction of frames whose center error is within each threshold 0..50 px.

    Returns (curve, p20) where p20 is the value at the 20 px threshold.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 4:
        raise ShapeError(f"need matching (T, 4) box arrays, got {pred.shape} vs {gt.shape}")
    pc = pred[:, :2] + pred[:, 2:] / 2.0
    gc = gt[:, :2] + gt[:, 2:] / 2.0
    dist = np.hypot(*(pc - gc).T)
    curve = (dist[None, :] <= DISTANCE_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve[20])


def success_curve(pred, gt) -> tuple[np.ndarray, float]:
    """Fraction of frames with IoU strictly above each threshold 0..1 (51 pts).

    Returns (curve, auc) where auc is the mean of the 51 sampled values; a
    perfect track scores 50/51 because IoU = 1 is not strictly above 1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 4:
        raise ShapeError(f"need matching (T, 4) box arrays, got {pred.shape} vs {gt.shape}")
    overlaps = np.array([iou(p, g) for p, g in zip(pred, gt)])
    curve = (overlaps[None, :] > OVERLAP_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve.mean())


def evaluate_sequence(
    seq: Sequence,
    config: TrackerConfig | None = None,
    decoder_net: DecoderNet | None = None,
) -> SequenceResult:
    """Run the tracker once from the first annotation and score the result."""
    start = time.perf_counter()
    try:
        boxes, state = run_sequence(seq.frame_paths, tuple(seq.boxes[0]),
                                    config, decoder_net)
        pred = np.asarray(boxes, dtype=np.float64)
        prec, p20 = precision_curve(pred, seq.boxes)
        succ, auc = success_curve(pred, seq.boxes)
        return SequenceResult(
            name=seq.name,
            status="tracking_lost" if state.lost else "ok",
            frames=len(seq.frame_paths), p20=p20, auc=auc,
            precision=prec, success=succ,
            seconds=time.perf_counter() - start,
        )
    except Exception as exc:  # noqa: BLE001 - a bad sequence must not sink the run
        return SequenceResult(
            name=seq.name, status="error", frames=len(seq.frame_paths),
            seconds=time.perf_counter() - start, message=str(exc),
        )


def run_ope(
    sequences: list[Sequence],
    config: TrackerConfig | None = None,
    decoder_net: DecoderNet | None = None,
    jobs: int = 1,
) -> OpeResult:
    """One-pass evaluation over a dataset; each run starts from frame 1.

    Aggregate curves are the unweighted mean over sequences that produced
    metrics; errored sequences are reported but excluded.
    """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(
                lambda s: evaluate_sequence(s, config, decoder_net), sequences
            ))
    else:
        results = [evaluate_sequence(s, config, decoder_net) for s in sequences]

    scored = [r for r in results if r.precision is not None]
    out = OpeResult(sequences=results)
    if scored:
        out.precision = np.mean([r.precision for r in scored], axis=0)
        out.success = np.mean([r.success for r in scored], axis=0)
        out.p20 = float(np.mean([r.p20 for r in scored]))
        out.auc = float(np.mean([r.auc for r in scored]))
    return out


# --------------------------------------------------------------------------
# CSV output (deterministic: no timing fields; those go to timing.json)
# --------------------------------------------------------------------------


def write_boxes_csv(path: str, boxes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x", "y", "w", "h"])
        for i, box in enumerate(boxes, start=1):
            writer.writerow([i] + [f"{v:.6f}" for v in box])


def write_curve_csv(path: str, thresholds, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "value"])
        for t, v in zip(thresholds, values):
            writer.writerow([f"{t:.6f}", f"{v:.6f}"])


def _fmt(value: float) -> str:
    return "" if not np.isfinite(value) else f"{value:.6f}"


def write_ope_csvs(result: OpeResult, out_dir: str) -> dict:
    """Write summary + aggregate curve CSVs; returns the path map."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"summary": os.path.join(out_dir, "summary.csv")}
    with open(paths["summary"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "status", "frames", "p20", "auc"])
        for r in result.sequences:
            writer.writerow([r.name, r.status, r.frames, _fmt(r.p20), _fmt(r.auc)])
        writer.writerow(["AGGREGATE", "", sum(r.frames for r in result.sequences),
                         _fmt(result.p20), _fmt(result.auc)])
    if result.precision is not None:
        paths["precision"] = os.path.join(out_dir, "precision_curve.csv")
        write_curve_csv(paths["precision"], DISTANCE_THRESHOLDS, result.precision)
        paths["success"] = os.path.join(out_dir, "success_curve.csv")
        write_curve_csv(paths["success"], OVERLAP_THRESHOLDS, result.success)
    return paths
