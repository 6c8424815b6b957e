"""Ridge regression over circulant shifts, solved in the Fourier domain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NearSingularError, ShapeError, SingularMatrixError
from .features import FeatureMap
from .labels import LabelMap

# |k_hat + lambda| below this is treated as numerically singular.
_DENOM_FLOOR = 1e-12


@dataclass
class DualModel:
    """Kernel ridge model in dual form: spectral coefficients + template."""

    alpha_hat: np.ndarray      # (M, N) complex128
    template: FeatureMap       # training features x (windowed)
    lambda_: float
    kernel_sigma: float


@dataclass
class ResponseMap:
    """Real-valued detection scores on the feature grid of one layer."""

    data: np.ndarray           # (M, N) float64
    layer_id: int
    cell_size: int


def dft2(x: np.ndarray) -> np.ndarray:
    """2-D DFT over the trailing two axes (unnormalized forward transform)."""
    return np.fft.fft2(x, axes=(-2, -1))


def idft2(x: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT over the trailing two axes (1/MN normalization)."""
    return np.fft.ifft2(x, axes=(-2, -1))


def to_real(x: np.ndarray, rel_tol: float = 1e-6) -> np.ndarray:
    """Drop a numerically-negligible imaginary part, or fail loudly."""
    scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    resid = float(np.abs(x.imag).max(initial=0.0))
    if resid > rel_tol * scale:
        raise ValueError(f"imaginary residue {resid:g} exceeds tolerance")
    return np.ascontiguousarray(x.real)


def multichannel_dot(a_hat: np.ndarray, b_hat: np.ndarray) -> np.ndarray:
    """Elementwise product of two (D, M, N) spectra summed over channels."""
    if a_hat.ndim == 2:
        a_hat = a_hat[None]
    if b_hat.ndim == 2:
        b_hat = b_hat[None]
    if a_hat.shape != b_hat.shape:
        raise ShapeError(f"operand shapes differ: {a_hat.shape} vs {b_hat.shape}")
    return (a_hat * b_hat).sum(axis=0)


def circulant_2d(base: np.ndarray) -> np.ndarray:
    """Dense (MN, MN) matrix of all 2-D cyclic shifts of ``base``.

    Column (a, b) holds base shifted down by a and right by b, i.e.
    A[(i, j), (a, b)] = base[(i - a) % M, (j - b) % N]. Multiplying by a
    flattened signal performs circular 2-D convolution with ``base``.
    """
    rows, cols = base.shape
    ri = (np.arange(rows)[:, None] - np.arange(rows)[None, :]) % rows
    ci = (np.arange(cols)[:, None] - np.arange(cols)[None, :]) % cols
    return base[ri[:, None, :, None], ci[None, :, None, :]].reshape(rows * cols, rows * cols)


def train_linear(x: FeatureMap, y: LabelMap, lambda_: float) -> np.ndarray:
    """Closed-form spectral ridge solution for a linear filter.

    Returns W_hat with shape (D, M, N): per frequency,
    W_hat = conj(X_hat) * Y_hat / (sum_d conj(X_hat) * X_hat + lambda).
    """
    data = x.data
    if data.ndim != 3:
        raise ShapeError("feature data must be (channels, rows, cols)")
    if data.shape[1:] != y.data.shape:
        raise ShapeError(f"labels {y.data.shape} do not match features {data.shape[1:]}")
    x_hat = dft2(data)
    y_hat = dft2(y.data)
    denom = (np.conj(x_hat) * x_hat).real.sum(axis=0) + lambda_
    if np.any(denom == 0.0):
        raise ZeroDivisionError("zero spectral energy with lambda=0")
    return np.conj(x_hat) * y_hat[None] / denom[None]


def brute_force_ridge(x: FeatureMap, y: LabelMap, lambda_: float) -> np.ndarray:
    """Dense ridge solve over the explicit shift matrix (single channel only).

    Oracle for train_linear: solves (A^T A + lambda*I) w = A^T y with A the
    dense matrix of all cyclic shifts. Quadratic memory — refuses M*N > 4096.
    """
    data = x.data
    if data.ndim == 3:
        if data.shape[0] != 1:
            raise ShapeError("dense oracle supports a single channel")
        data = data[0]
    if data.shape != y.data.shape:
        raise ShapeError(f"labels {y.data.shape} do not match features {data.shape}")
    n = data.size
    if n > 4096:
        raise ValueError(f"grid too large for dense solve: {n} > 4096")
    shifts = circulant_2d(data)
    gram = shifts.T @ shifts + lambda_ * np.eye(n)
    rhs = shifts.T @ y.data.ravel()
    try:
        w = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"dense ridge system is singular: {exc}") from exc
    return w.reshape(data.shape)


def rbf_kernel_correlation(x1: FeatureMap, x2: FeatureMap, sigma: float) -> np.ndarray:
    """Gaussian kernel between x1 and every cyclic shift of x2.

    Output index (i, j) scores the alignment of shift_{(i,j)}(x1) with x2:
    k[i, j] = exp(-max(0, ||x1||^2 + ||x2||^2 - 2*corr[i, j]) / sigma), where
    corr is the circular cross-correlation summed over channels. The max(0, .)
    clamp guards tiny negative values from floating-point cancellation.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if x1.data.shape != x2.data.shape:
        raise ShapeError(f"feature shapes differ: {x1.data.shape} vs {x2.data.shape}")
    x1_hat = dft2(x1.data)
    x2_hat = dft2(x2.data)
    corr = to_real(idft2(multichannel_dot(np.conj(x1_hat), x2_hat)))
    sq = float((x1.data**2).sum() + (x2.data**2).sum())
    return np.exp(-np.maximum(0.0, sq - 2.0 * corr) / sigma)


def train_dual(k_xx: np.ndarray, y: LabelMap, lambda_: float) -> np.ndarray:
    """Spectral dual coefficients: alpha_hat = Y_hat / (K_hat + lambda)."""
    if k_xx.shape != y.data.shape:
        raise ShapeError(f"kernel grid {k_xx.shape} does not match labels {y.data.shape}")
    denom = dft2(k_xx) + lambda_
    worst = float(np.abs(denom).min())
    if worst < _DENOM_FLOOR:
        raise NearSingularError(
            f"kernel spectrum denominator {worst:g} below {_DENOM_FLOOR:g}"
        )
    return dft2(y.data) / denom


def make_dual_model(x: FeatureMap, y: LabelMap, lambda_: float, sigma: float) -> DualModel:
    """Train a kernel ridge model on windowed features ``x``."""
    k_xx = rbf_kernel_correlation(x, x, sigma)
    alpha_hat = train_dual(k_xx, y, lambda_)
    return DualModel(alpha_hat=alpha_hat, template=x, lambda_=lambda_, kernel_sigma=sigma)


def detect_response(model: DualModel, z: FeatureMap) -> ResponseMap:
    """Correlation response of the model on probe features ``z``.

    R = IDFT(DFT(k_xz) * alpha_hat) with k_xz the kernel between the stored
    template and the probe. Index (i, j) scores translation (i, j) with the
    circular convention: i > M/2 means negative vertical shift i - M.
    """
    if z.data.shape != model.template.data.shape:
        raise ShapeError(
            f"probe shape {z.data.shape} does not match template {model.template.data.shape}"
        )
    k_xz = rbf_kernel_correlation(model.template, z, model.kernel_sigma)
    resp = to_real(idft2(dft2(k_xz) * model.alpha_hat))
    return ResponseMap(data=resp, layer_id=z.layer_id, cell_size=z.cell_size)


def argmax_shift(resp: np.ndarray) -> tuple[int, int]:
    """Signed (dy, dx) of the response peak under the circular convention.

    Ties resolve to the lowest row-major index (np.argmax behavior).
    """
    rows, cols = resp.shape
    flat = int(np.argmax(resp))
    i, j = divmod(flat, cols)
    dy = i - rows if i > rows // 2 else i
    dx = j - cols if j > cols // 2 else j
    return dy, dx
