"""Per-layer model interpolation and stability-driven learning rates."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import DualModel, ResponseMap
from .errors import InvalidRateError, ShapeError
from .features import FeatureMap

_SIGMA_FLOOR = 1e-6


@dataclass
class LayerStats:
    """Rolling loss statistics and the learning rate derived from them."""

    eta_base: float
    eta_max: float
    window_size: int = 5
    inverse_stability: bool = False
    losses: deque = field(default_factory=deque)
    mean: float = 0.0
    std: float = 0.0
    # negative means "not yet scored"; zero is a legitimate frozen rate
    eta_k: float = -1.0

    def __post_init__(self):
        if not isinstance(self.losses, deque) or self.losses.maxlen != self.window_size:
            self.losses = deque(self.losses, maxlen=self.window_size)
        if self.eta_k < 0.0:
            self.eta_k = self.eta_base


def make_layer_stats(
    eta: float,
    window_size: int = 5,
    eta_max: float | None = None,
    inverse_stability: bool = False,
) -> LayerStats:
    if not 0.0 <= eta <= 1.0:
        raise InvalidRateError(f"eta {eta} outside [0, 1]")
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    if eta_max is None:
        eta_max = 10.0 * eta
    return LayerStats(eta_base=eta, eta_max=eta_max, window_size=window_size,
                      inverse_stability=inverse_stability)


def update_stability(stats: LayerStats, loss: float) -> LayerStats:
    """Score a new loss against the rolling window, then absorb it.

    The deviation s = |loss - mean| / max(std, floor) uses the window statistics
    from *before* the push; with fewer than two prior losses s defaults to 1
    (neutral warm-up). The layer rate is s * eta_base clamped to [0, eta_max]
    (or eta_base / (1 + s) in inverse mode). Pure: returns a new LayerStats.
    """
    prior = list(stats.losses)
    if len(prior) < 2:
        s = 1.0
    else:
        mean = float(np.mean(prior))
        std = float(np.std(prior))
        s = abs(loss - mean) / max(std, _SIGMA_FLOOR)

    if stats.inverse_stability:
        eta_k = stats.eta_base / (1.0 + s)
    else:
        eta_k = s * stats.eta_base
    eta_k = float(np.clip(eta_k, 0.0, stats.eta_max))

    losses = deque(prior, maxlen=stats.window_size)
    losses.append(float(loss))
    window = list(losses)
    return replace(
        stats,
        losses=losses,
        mean=float(np.mean(window)),
        std=max(float(np.std(window)), _SIGMA_FLOOR),
        eta_k=eta_k,
    )


def layer_loss(response: ResponseMap, pos: tuple[int, int]) -> float:
    """Peak-to-chosen-position response gap: max(R) - R[y, x], always >= 0."""
    x, y = pos
    rows, cols = response.data.shape
    if not (0 <= int(y) < rows and 0 <= int(x) < cols):
        raise IndexError(f"position {(x, y)} outside {cols}x{rows} response grid")
    return float(response.data.max() - response.data[int(y), int(x)])


def update_model(prev: DualModel, new: DualModel, eta: float) -> DualModel:
    """Convex interpolation of dual coefficients and template toward ``new``."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidRateError(f"eta {eta} outside [0, 1]")
    if prev.alpha_hat.shape != new.alpha_hat.shape:
        raise ShapeError("model grids differ")
    if prev.template.data.shape != new.template.data.shape:
        raise ShapeError("template shapes differ")
    alpha_hat = (1.0 - eta) * prev.alpha_hat + eta * new.alpha_hat
    template = FeatureMap(
        data=(1.0 - eta) * prev.template.data + eta * new.template.data,
        layer_id=prev.template.layer_id,
        cell_size=prev.template.cell_size,
    )
    return DualModel(alpha_hat=alpha_hat, template=template,
                     lambda_=prev.lambda_, kernel_sigma=prev.kernel_sigma)
