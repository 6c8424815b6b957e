"""One-dimensional correlation filter over a pyramid of scaled crops."""

from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from .errors import InvalidTargetError, NotInitializedError
from .features import to_float01


@dataclass
class ScaleState:
    """Scale filter state: factor pyramid plus MOSSE-style numerator/denominator."""

    current_scale: float
    factors: np.ndarray            # (S,) relative scale factors, middle = 1.0
    labels_fft: np.ndarray         # (S,) complex, Gaussian peak at the middle
    window: np.ndarray             # (S,) row weights, raised so no row is zeroed
    learning_rate: float
    lambda_: float
    num: np.ndarray | None = None  # (S, F) complex
    den: np.ndarray | None = None  # (S,) real
    template_size: int = 48


def make_scale_state(
    n_scales: int = 11,
    step: float = 1.02,
    learning_rate: float = 0.0025,
    lambda_: float = 1e-4,
) -> ScaleState:
    """Build an untrained scale state with factors step^(-(S-1)/2 .. (S-1)/2)."""
    if n_scales < 1 or n_scales % 2 == 0:
        raise ValueError("n_scales must be an odd positive count")
    if step <= 0:
        raise ValueError("step must be positive")
    exponents = np.arange(n_scales, dtype=np.float64) - (n_scales - 1) / 2.0
    factors = step**exponents
    sigma = np.sqrt(n_scales) / 4.0
    mid = (n_scales - 1) / 2.0
    labels = np.exp(-0.5 * ((np.arange(n_scales) - mid) / sigma) ** 2)
    return ScaleState(
        current_scale=1.0,
        factors=factors,
        labels_fft=np.fft.fft(labels),
        # Plain Hann zeroes the end rows entirely; keeping a 0.1 floor lets
        # large shifts still contribute evidence.
        window=np.hanning(n_scales) * 0.9 + 0.1,
        learning_rate=learning_rate,
        lambda_=lambda_,
    )


def subpixel_crop(
    frame: np.ndarray,
    center: tuple[float, float],
    size: tuple[float, float],
    template_size: int,
) -> np.ndarray:
    """Sample a fractional-size window around ``center`` onto a square template.

    Adjacent pyramid factors differ by well under one pixel for small targets,
    so integer cropping would collapse them into identical rows; bilinear
    sampling on a continuous grid keeps every factor distinct.  Coordinates
    outside the frame replicate the nearest edge pixel.
    """
    w, h = size
    tmpl = template_size
    offsets = np.arange(tmpl, dtype=np.float64) - (tmpl - 1) / 2.0
    xs = (center[0] + offsets * (w / tmpl)).astype(np.float32)
    ys = (center[1] + offsets * (h / tmpl)).astype(np.float32)
    map_x, map_y = np.meshgrid(xs, ys)
    return cv2.remap(
        frame.astype(np.float32),
        map_x,
        map_y,
        interpolation=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REPLICATE,
    ).astype(np.float64)


def scale_descriptor(crop: np.ndarray) -> np.ndarray:
    """Flatten a template-size crop to a zero-mean, unit-norm row vector."""
    if crop.ndim == 3:
        crop = crop.mean(axis=2)
    row = crop.astype(np.float64).ravel()
    row = row - row.mean()
    return row / (np.linalg.norm(row) + 1e-8)


def build_scale_samples(
    frame: np.ndarray,
    center: tuple[float, float],
    base_size: tuple[float, float],
    state: ScaleState,
) -> np.ndarray:
    """Descriptor matrix (S, F): one window-weighted row per pyramid factor.

    Row s samples factor_s * current_scale * base_size around ``center``.
    """
    bw, bh = base_size
    if bw <= 0 or bh <= 0 or not (np.isfinite(bw) and np.isfinite(bh)):
        raise InvalidTargetError("base size must be positive and finite")
    img = to_float01(frame)
    if img.ndim == 3:
        img = img.mean(axis=2)
    rows = []
    for s, factor in enumerate(state.factors):
        scale = factor * state.current_scale
        crop = subpixel_crop(img, center, (scale * bw, scale * bh), state.template_size)
        rows.append(scale_descriptor(crop) * state.window[s])
    return np.stack(rows, axis=0)


def train_scale(state: ScaleState, samples: np.ndarray) -> ScaleState:
    """(Re)initialize the filter from one sample matrix."""
    xsf = np.fft.fft(samples, axis=0)
    num = np.conj(xsf) * state.labels_fft[:, None]
    den = (xsf * np.conj(xsf)).real.sum(axis=1)
    return replace(state, num=num, den=den)


def estimate_scale(
    state: ScaleState,
    samples: np.ndarray,
) -> tuple[ScaleState, int]:
    """Score the pyramid, move current_scale to the best factor, update filter.

    Returns the new state and the argmax pyramid index.  The filter is then
    interpolated toward the given samples at the state's learning rate.
    """
    if state.num is None or state.den is None:
        raise NotInitializedError("scale filter has not been trained")
    zsf = np.fft.fft(samples, axis=0)
    response = np.real(np.fft.ifft(
        (state.num * zsf).sum(axis=1) / (state.den + state.lambda_)
    ))
    best = int(np.argmax(response))
    new_scale = state.current_scale * float(state.factors[best])

    num_new = np.conj(zsf) * state.labels_fft[:, None]
    den_new = (zsf * np.conj(zsf)).real.sum(axis=1)
    lr = state.learning_rate
    return replace(
        state,
        current_scale=new_scale,
        num=(1.0 - lr) * state.num + lr * num_new,
        den=(1.0 - lr) * state.den + lr * den_new,
    ), best
