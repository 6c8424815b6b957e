"""Regression targets for correlation-filter training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LabelMap:
    """Desired filter response: peak 1.0 at index (0, 0), circular Gaussian decay."""

    data: np.ndarray          # (M, N) float64
    sigma_row: float
    sigma_col: float


def gaussian_labels(
    rows: int,
    cols: int,
    target_size_cells: tuple[float, float],
    bandwidth_factor: float = 0.1,
) -> LabelMap:
    """Build a circularly-wrapped Gaussian label map.

    ``target_size_cells`` is (width, height) of the target measured in feature
    cells; the Gaussian bandwidth per axis is ``bandwidth_factor`` times that
    extent. Distances wrap (d_i = min(i, rows - i)) so the peak sits at index
    (0, 0) and the map is symmetric under circular reflection.
    """
    if rows < 1 or cols < 1:
        raise ValueError("label grid must have at least one cell per axis")
    tw, th = target_size_cells
    if tw <= 0 or th <= 0:
        raise ValueError("target size in cells must be positive")
    if bandwidth_factor <= 0:
        raise ValueError("bandwidth_factor must be positive")

    sigma_row = bandwidth_factor * th
    sigma_col = bandwidth_factor * tw
    di = np.minimum(np.arange(rows), rows - np.arange(rows)).astype(np.float64)
    dj = np.minimum(np.arange(cols), cols - np.arange(cols)).astype(np.float64)
    data = np.exp(
        -(di[:, None] ** 2) / (2.0 * sigma_row**2)
        - (dj[None, :] ** 2) / (2.0 * sigma_col**2)
    )
    return LabelMap(data=data, sigma_row=sigma_row, sigma_col=sigma_col)
