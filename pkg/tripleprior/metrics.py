"""
Fidelity metrics. PSNR of identical images is ``math.inf``; ``aggregate``
drops those entries before averaging.
"""
import math
from typing import Iterable

import numpy as np

from .constants import PSNR_PEAK, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from .exceptions import ShapeError
from .messages import MSG_SHAPE_MISMATCH, MSG_SSIM_SIZE
from .priors.structural import gaussian_kernel1d
from .tensor import ops
from .tensor.core import no_grad


def _pair(a, b, name: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(MSG_SHAPE_MISMATCH.format(name, a.shape, b.shape))
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, peak: float = PSNR_PEAK) -> float:
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    g = gaussian_kernel1d(sigma, size // 2)
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = PSNR_PEAK, window: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA) -> float:
    """
    Mean local SSIM over all valid Gaussian windows, averaged over channels

    :param a: image shaped (..., H, W)
    :param b: image of the same shape
    """
    a, b = _pair(a, b, "ssim")
    H, W = a.shape[-2:]
    if H < window or W < window:
        raise ShapeError(MSG_SSIM_SIZE.format(window, window, a.shape))
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    kernel = gaussian_window(window, sigma)[None, None]

    def blur(x: np.ndarray) -> np.ndarray:
        with no_grad():
            return ops.conv2d(x.reshape(-1, 1, H, W), kernel).data

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def aggregate(values: Iterable[float]) -> float:
    """Arithmetic mean of the finite entries; inf when there are none"""
    finite = [v for v in values if not math.isinf(v)]
    return float(np.mean(finite)) if finite else math.inf
