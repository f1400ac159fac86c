"""PSNR and SSIM on single luminance planes, with border shaving.

SSIM follows the classic single-scale formulation: 11x11 Gaussian window
(sigma 1.5, normalised to sum 1), K1 = 0.01, K2 = 0.03, dynamic range 255,
valid-region filtering, mean of the per-pixel map.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ContractError


@dataclass
class MetricRecord:
    image_id: str
    psnr_db: float
    ssim: float
    scale: int
    shave: int


def _shaved_pair(a, b, shave, op):
    if a.planes.shape[0] != 1 or b.planes.shape[0] != 1:
        raise ContractError(f"{op} compares single-plane images")
    if a.planes.shape != b.planes.shape:
        raise ContractError(f"{op}: shapes differ, {a.planes.shape} vs {b.planes.shape}")
    h, w = a.height, a.width
    if shave < 0 or h <= 2 * shave or w <= 2 * shave:
        raise ContractError(f"{op}: cannot shave {shave} px from a {w}x{h} image")
    sl = (slice(shave, h - shave), slice(shave, w - shave))
    return a.planes[0][sl].astype(np.float64), b.planes[0][sl].astype(np.float64)


def psnr(a, b, shave=0):
    """Peak signal-to-noise ratio in dB over the shaved region; +inf when identical."""
    x, y = _shaved_pair(a, b, shave, "psnr")
    mse = np.mean((x - y) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(255.0**2 / mse))


_SSIM_WINDOW_SIZE = 11
_SSIM_SIGMA = 1.5
_g = np.exp(-((np.arange(_SSIM_WINDOW_SIZE) - (_SSIM_WINDOW_SIZE - 1) / 2.0) ** 2) / (2.0 * _SSIM_SIGMA**2))
_g /= _g.sum()
_SSIM_WINDOW = np.outer(_g, _g)
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


def _window_mean(x):
    return convolve2d(x, _SSIM_WINDOW, mode="valid")


def ssim(a, b, shave=0):
    """Single-scale structural similarity over the shaved region."""
    x, y = _shaved_pair(a, b, shave, "ssim")
    if min(x.shape) < _SSIM_WINDOW_SIZE:
        raise ContractError(
            f"ssim region {x.shape[1]}x{x.shape[0]} is smaller than the {_SSIM_WINDOW_SIZE}px window"
        )
    mu_x = _window_mean(x)
    mu_y = _window_mean(y)
    var_x = _window_mean(x * x) - mu_x * mu_x
    var_y = _window_mean(y * y) - mu_y * mu_y
    cov = _window_mean(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def evaluate_pair(hr, sr, scale, image_id=""):
    """Compare two equal-size RGB images on the luminance channel, shaving ``scale`` px."""
    from .imaging import y_channel

    if hr.pixels.shape != sr.pixels.shape:
        raise ContractError(f"evaluate_pair: image shapes differ, {hr.pixels.shape} vs {sr.pixels.shape}")
    ya = y_channel(hr)
    yb = y_channel(sr)
    return MetricRecord(
        image_id=image_id,
        psnr_db=psnr(ya, yb, shave=scale),
        ssim=ssim(ya, yb, shave=scale),
        scale=scale,
        shave=scale,
    )


def aggregate(records):
    """Arithmetic mean of per-image PSNR/SSIM; infinite PSNR entries are dropped with a warning."""
    if not records:
        raise ContractError("aggregate needs at least one record")
    psnrs = [r.psnr_db for r in records]
    finite = [p for p in psnrs if np.isfinite(p)]
    if len(finite) < len(psnrs):
        warnings.warn("dropping infinite PSNR entries from the aggregate", stacklevel=2)
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    mean_ssim = float(np.mean([r.ssim for r in records]))
    return mean_psnr, mean_ssim
