"""Reconstruction quality metrics for ``[s, h, w]`` cubes with values in [0, 1]."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(x, xhat) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape or x.ndim != 3:
        raise DimensionError(f"metrics need matching [s,h,w] cubes, got {x.shape} and {xhat.shape}")
    return x, xhat


def psnr(x, xhat) -> float:
    """Band-averaged ``-10 log10(MSE)``; bands with MSE < 1e-10 count as 100 dB."""
    x, xhat = _pair(x, xhat)
    mse = np.square(x - xhat).reshape(x.shape[0], -1).mean(axis=1)
    per_band = np.full(mse.shape, PSNR_CAP)
    ok = mse >= 1e-10
    per_band[ok] = -10.0 * np.log10(mse[ok])
    return float(per_band.mean())


def rmse(x, xhat) -> float:
    x, xhat = _pair(x, xhat)
    mse = np.square(x - xhat).reshape(x.shape[0], -1).mean(axis=1)
    return float(np.sqrt(mse).mean())


def sam(x, xhat) -> float:
    """Mean per-pixel spectral angle in degrees (zero-norm pixels count as 0)."""
    x, xhat = _pair(x, xhat)
    a = x.reshape(x.shape[0], -1)
    b = xhat.reshape(x.shape[0], -1)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    valid = (na >= 1e-12) & (nb >= 1e-12)
    angles = np.zeros(a.shape[1])
    ua = a[:, valid] / na[valid]
    ub = b[:, valid] / nb[valid]
    # same angle as arccos of the cosine ratio, but exact at 0 and 180 degrees
    angles[valid] = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=0), np.linalg.norm(ua + ub, axis=0))
    return float(np.degrees(angles.mean()))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, wr: np.ndarray, wc: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, len(wr), axis=0) @ wr
    return sliding_window_view(rows, len(wc), axis=1) @ wc


def ssim_band(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """SSIM of one band over all fully covered window positions.

    Returns ``(value, fallback)``; ``fallback`` is True when the image is
    smaller than the Gaussian window and a uniform window was used instead.
    """
    h, w = a.shape
    if h >= SSIM_WINDOW and w >= SSIM_WINDOW:
        wr = wc = gaussian_window()
        fallback = False
    else:
        wr = np.full(min(h, SSIM_WINDOW), 1.0 / min(h, SSIM_WINDOW))
        wc = np.full(min(w, SSIM_WINDOW), 1.0 / min(w, SSIM_WINDOW))
        fallback = True
    mu_a = _filter_valid(a, wr, wc)
    mu_b = _filter_valid(b, wr, wc)
    var_a = _filter_valid(a * a, wr, wc) - mu_a ** 2
    var_b = _filter_valid(b * b, wr, wc) - mu_b ** 2
    cov = _filter_valid(a * b, wr, wc) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean()), fallback


def assim(x, xhat, return_status: bool = False):
    """Band-averaged SSIM (dynamic range 1)."""
    x, xhat = _pair(x, xhat)
    results = [ssim_band(x[c], xhat[c]) for c in range(x.shape[0])]
    value = float(np.mean([r[0] for r in results]))
    fallback = results[0][1]
    return (value, fallback) if return_status else value


def evaluate_all(x, xhat) -> dict[str, float]:
    return {"psnr": psnr(x, xhat), "assim": assim(x, xhat), "sam": sam(x, xhat), "rmse": rmse(x, xhat)}
