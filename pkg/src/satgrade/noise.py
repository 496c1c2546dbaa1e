"""Colored noise: shaping-kernel estimation from flat patches and synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ZeroVariance

WINDOW = 64


@dataclass(frozen=True)
class NoiseModel:
    """White Gaussian noise of standard deviation ``std`` shaped by ``kernel``.

    The kernel has unit L2 norm, so shaping leaves the per-pixel variance at
    ``std**2``.
    """

    kernel: np.ndarray
    std: float

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise InvalidArgument(f"noise kernel must be 2-D with odd sides, got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise InvalidArgument("noise kernel has non-finite entries")
        if abs(np.linalg.norm(k) - 1.0) > 1e-6:
            raise InvalidArgument(f"noise kernel must have unit L2 norm, has {np.linalg.norm(k):.9g}")
        if not (np.isfinite(self.std) and self.std >= 0):
            raise InvalidArgument(f"noise std must be finite and >= 0, got {self.std}")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "std", float(self.std))

    def with_std(self, std: float) -> "NoiseModel":
        return NoiseModel(self.kernel, std)

    @classmethod
    def white(cls, std: float = 0.0) -> "NoiseModel":
        return cls(np.ones((1, 1)), std)


def estimate_noise_kernel(flat_patch, size: int = 15) -> NoiseModel:
    """Estimate a zero-phase shaping kernel from a flat, noise-only patch.

    The magnitude spectrum is averaged over 64x64 windows with 50% overlap.
    Only magnitude is observable from noise, so the kernel is taken as the
    inverse transform of that magnitude with zero phase, cropped to
    ``size x size``, clipped at zero and scaled to unit L2 norm.
    """
    patch = np.asarray(flat_patch, dtype=np.float64)
    if patch.ndim != 2:
        raise InvalidArgument(f"expected a single-channel patch, got shape {patch.shape}")
    if min(patch.shape) < WINDOW:
        raise InvalidArgument(f"flat patch must be at least {WINDOW}x{WINDOW}, got {patch.shape}")
    if size % 2 == 0 or not 1 <= size <= 31:
        raise InvalidArgument(f"kernel size must be odd and <= 31, got {size}")

    centred = patch - patch.mean()
    std = float(centred.std(ddof=1))
    if not std > 0:
        raise ZeroVariance("flat patch has zero variance")

    step = WINDOW // 2
    windows = np.lib.stride_tricks.sliding_window_view(centred, (WINDOW, WINDOW))[::step, ::step]
    magnitude = np.abs(np.fft.fft2(windows, axes=(-2, -1))).mean(axis=(0, 1))

    k = np.fft.fftshift(np.real(np.fft.ifft2(magnitude)))
    c = WINDOW // 2
    r = size // 2
    k = np.clip(k[c - r : c + r + 1, c - r : c + r + 1], 0.0, None)
    return NoiseModel(k / np.linalg.norm(k), std)


def _wrap_kernel(kernel, height, width):
    # place the kernel centre at (0, 0) with circular wrap-around
    out = np.zeros((height, width))
    kh, kw = kernel.shape
    rows = (np.arange(kh) - kh // 2) % height
    cols = (np.arange(kw) - kw // 2) % width
    np.add.at(out, (rows[:, None], cols[None, :]), kernel)
    return out


def synth_colored_noise(height: int, width: int, model: NoiseModel, rng_seed) -> np.ndarray:
    """Draw white noise from ``rng_seed`` and circularly convolve it with the shaping kernel."""
    if int(height) < 1 or int(width) < 1:
        raise InvalidArgument(f"noise field dimensions must be positive, got {height}x{width}")
    height, width = int(height), int(width)
    if model.std == 0:
        return np.zeros((height, width))
    white = np.random.default_rng(rng_seed).standard_normal((height, width)) * model.std
    if model.kernel.shape == (1, 1):
        return white * model.kernel[0, 0]
    spectrum = np.fft.rfft2(_wrap_kernel(model.kernel, height, width))
    return np.fft.irfft2(np.fft.rfft2(white) * spectrum, s=(height, width))
