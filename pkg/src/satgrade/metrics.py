"""Full-reference quality metrics: PSNR and SSIM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument

WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images give ``inf``."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size=WIN_SIZE, sigma=WIN_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x, y, peak):
    win = gaussian_window()
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2

    def filt(z):
        # 'valid' region only: the window never leaves the image
        full = ndimage.correlate(z, win, mode="constant")
        r = WIN_SIZE // 2
        return full[r : z.shape[0] - r, r : z.shape[1] - r]

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim_channels(a, b, peak=1.0) -> list[float]:
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < WIN_SIZE:
        raise InvalidArgument(f"SSIM needs images of at least {WIN_SIZE}x{WIN_SIZE}, got {a.shape[:2]}")
    return [_ssim_channel(a[..., c], b[..., c], peak) for c in range(a.shape[2])]


def ssim(a, b, peak=1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_channels(a, b, peak)))


@dataclass
class EvalReport:
    psnr_db: float
    ssim: float
    psnr_per_channel: list = field(default_factory=list)
    ssim_per_channel: list = field(default_factory=list)

    @property
    def psnr_infinite(self) -> bool:
        return np.isinf(self.psnr_db)

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if np.isinf(v) else v

        return {
            "psnr_db": enc(self.psnr_db),
            "ssim": self.ssim,
            "psnr_per_channel": [enc(v) for v in self.psnr_per_channel],
            "ssim_per_channel": self.ssim_per_channel,
        }


def evaluate(ref, test, peak=1.0) -> EvalReport:
    ref, test = _pair(ref, test)
    r3 = ref if ref.ndim == 3 else ref[..., None]
    t3 = test if test.ndim == 3 else test[..., None]
    return EvalReport(
        psnr_db=psnr(ref, test, peak),
        ssim=ssim(ref, test, peak),
        psnr_per_channel=[psnr(r3[..., c], t3[..., c], peak) for c in range(r3.shape[2])],
        ssim_per_channel=ssim_channels(ref, test, peak),
    )
