"""Structural similarity (SSIM) for 8-bit grayscale grids.

Mean SSIM over all stride-1 sliding windows, uniform window weighting,
constants K1=0.01, K2=0.03 on a dynamic range of 255. The uniform window
(8x8 by default) keeps the value exactly reproducible against a plain
nested-loop implementation; `ssim(x, x)` is exactly 1.0 and the measure is
bitwise symmetric in its arguments.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError

__all__ = ["ssim", "DEFAULT_WINDOW"]

DEFAULT_WINDOW = 8
_K1 = 0.01
_K2 = 0.03
_L = 255.0


def ssim(a: np.ndarray, b: np.ndarray, window: int = DEFAULT_WINDOW) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("ssim expects 2-D grayscale grids")
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if window < 1:
        raise DomainError("window must be >= 1")
    win = min(window, a.shape[0], a.shape[1])

    c1 = (_K1 * _L) ** 2
    c2 = (_K2 * _L) ** 2

    def win_mean(x):
        return sliding_window_view(x, (win, win)).mean(axis=(2, 3))

    mu_a = win_mean(a)
    mu_b = win_mean(b)
    # Covariances share one code path so ssim(x, x) stays exact.
    var_a = win_mean(a * a) - mu_a * mu_a
    var_b = win_mean(b * b) - mu_b * mu_b
    cov = win_mean(a * b) - mu_a * mu_b

    score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / \
            ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(score.mean())
