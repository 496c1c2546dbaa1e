"""LR image synthesis: blur on the HR grid, jittered decimation, colored noise.

Images are float64 arrays of shape ``(H, W)`` or ``(H, W, C)`` in linear
space with nominal range [0, 1].  The realistic generator is

    lr = clip(resample(convolve(hr, psf), scale, phase) + noise, 0, 1)

where ``psf`` is a perturbed Gaussian mixture drawn from a pool and the noise
is white noise shaped by a product-specific kernel.  The baseline mode is a
plain antialiased bicubic downscale with no noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import psf as _psf
from .errors import InvalidArgument
from .noise import NoiseModel, synth_colored_noise
from .psf import PsfMixture

REALISTIC = "realistic"
BICUBIC_BASELINE = "bicubic_baseline"
MODES = (REALISTIC, BICUBIC_BASELINE)

_MASK64 = (1 << 64) - 1


def mix_seed(master_seed: int, index: int) -> int:
    """SplitMix64 of ``master_seed + (index + 1) * golden_gamma``.

    Per-item seeds depend only on (master, index), never on scheduling.
    """
    z = (int(master_seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3) or min(img.shape[:2]) < 1:
        raise InvalidArgument(f"expected an (H, W) or (H, W, C) image, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise InvalidArgument(f"images must have 1 or 3 channels, got {img.shape[2]}")
    if not np.all(np.isfinite(img)):
        raise InvalidArgument("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------


def convolve(image, kernel) -> np.ndarray:
    """Per-channel 2-D convolution with mirror (edge not repeated) boundaries."""
    img = as_image(image)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise InvalidArgument(f"kernel must be 2-D with odd sides, got {k.shape}")
    if k.shape[0] > img.shape[0] or k.shape[1] > img.shape[1]:
        raise InvalidArgument(f"kernel {k.shape} is larger than image {img.shape[:2]}")
    if img.ndim == 2:
        return ndimage.convolve(img, k, mode="mirror")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.convolve(img[..., c], k, mode="mirror")
    return out


def catmull_rom(t, a=-0.5):
    """Keys cubic convolution kernel with ``a = -0.5``."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    inner = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    outer = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, inner, np.where(t < 2.0, outer, 0.0))


def mirror_index(idx, n):
    """Fold integer indices into ``[0, n)`` by reflection without edge repeat."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def _weights(n_in, positions, antialias_scale=None):
    """Sparse-as-dense matrix mapping ``n_in`` samples to ``positions``."""
    positions = np.asarray(positions, dtype=np.float64)
    M = np.zeros((positions.size, n_in))
    rows = np.arange(positions.size)
    if antialias_scale is None:
        base = np.floor(positions).astype(np.int64)
        for off in (-1, 0, 1, 2):
            taps = base + off
            np.add.at(M, (rows, mirror_index(taps, n_in)), catmull_rom(positions - taps))
        return M
    s = float(antialias_scale)
    lo = np.ceil(positions - 2.0 * s).astype(np.int64)
    width = int(np.ceil(4.0 * s)) + 1
    for off in range(width):
        taps = lo + off
        np.add.at(M, (rows, mirror_index(taps, n_in)), catmull_rom((positions - taps) / s))
    return M / M.sum(axis=1, keepdims=True)


def output_shape(shape, scale):
    h, w = shape[:2]
    # the small epsilon absorbs representation error in e.g. 64 / (1 / 2)
    return int(np.floor(h / scale + 1e-9)), int(np.floor(w / scale + 1e-9))


def resample(image, scale: float, phase=(0.0, 0.0), out_shape=None, antialias=False) -> np.ndarray:
    """Point-sample the Catmull-Rom interpolant of ``image``.

    Output pixel ``(i, j)`` takes the value of the continuous image at row
    ``(i + dy) * scale`` and column ``(j + dx) * scale`` where
    ``phase = (dx, dy)``.  No low-pass is applied unless ``antialias`` is set,
    in which case the cubic kernel is stretched by ``scale`` (classic
    bicubic downscaling).  ``scale < 1`` upsamples.

    ``out_shape`` defaults to ``floor(H / scale) x floor(W / scale)``.
    """
    img = as_image(image)
    if not (np.isfinite(scale) and scale > 0):
        raise InvalidArgument(f"scale must be positive, got {scale}")
    dx, dy = (float(p) for p in phase)
    if not (0.0 <= dx < 1.0 and 0.0 <= dy < 1.0):
        raise InvalidArgument(f"phase must lie in [0, 1)^2, got {phase}")
    oh, ow = output_shape(img.shape, scale) if out_shape is None else (int(out_shape[0]), int(out_shape[1]))
    if oh < 1 or ow < 1:
        raise InvalidArgument(f"resampled size {oh}x{ow} is empty")
    if scale > 1 and out_shape is None and min(oh, ow) < 8:
        raise InvalidArgument(f"downsampled size {oh}x{ow} is below 8 pixels")

    aa = scale if (antialias and scale > 1) else None
    My = _weights(img.shape[0], (np.arange(oh) + dy) * scale, aa)
    Mx = _weights(img.shape[1], (np.arange(ow) + dx) * scale, aa)
    if img.ndim == 2:
        return My @ img @ Mx.T
    return np.einsum("oh,hwc,pw->opc", My, img, Mx, optimize=True)


def upscale(image, scale: float, out_shape=None) -> np.ndarray:
    """Bicubic upscaling by ``scale`` (> 1) at zero phase."""
    img = as_image(image)
    if out_shape is None:
        out_shape = (int(np.floor(img.shape[0] * scale + 1e-9)), int(np.floor(img.shape[1] * scale + 1e-9)))
    return resample(img, 1.0 / scale, out_shape=out_shape)


# ---------------------------------------------------------------------------
# configuration and recipes
# ---------------------------------------------------------------------------

DEFAULT_PSF_POOL = (
    # sharp core
    PsfMixture.from_arrays([0.5, 0.5, 0.0, 0.0, 0.0, 0.0], _psf.DEFAULT_BASIS),
    # moderate isotropic spread with a wide skirt
    PsfMixture.from_arrays([0.2, 0.5, 0.2, 0.1, 0.0, 0.0], _psf.DEFAULT_BASIS),
    # column-direction (scan) smear
    PsfMixture.from_arrays([0.3, 0.2, 0.0, 0.0, 0.0, 0.5], _psf.DEFAULT_BASIS),
    # wide, slightly row-elongated
    PsfMixture.from_arrays([0.0, 0.3, 0.3, 0.1, 0.3, 0.0], _psf.DEFAULT_BASIS),
)


def default_noise_model(std: float = 0.0) -> NoiseModel:
    k = _psf.render_psf(PsfMixture.from_arrays([1.0], [(0.7, 0.7)]), 5)
    return NoiseModel(k / np.linalg.norm(k), std)


def _pair(value, name):
    lo, hi = (float(v) for v in value)
    if lo > hi:
        raise InvalidArgument(f"{name} must satisfy lo <= hi, got {value}")
    return lo, hi


@dataclass(frozen=True)
class DegradeConfig:
    psf_pool: tuple = DEFAULT_PSF_POOL
    alpha_jitter: float = 0.1
    scale_nominal: float = 2.0
    scale_jitter_range: tuple = (0.9, 1.1)
    shift_range: tuple = (0.0, 0.25)
    noise_model: NoiseModel = field(default_factory=default_noise_model)
    noise_std_range: tuple = (0.005, 0.03)
    mode: str = REALISTIC
    kernel_size: int = _psf.DEFAULT_SIZE

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("psf_pool", tuple(self.psf_pool))
        set_("scale_jitter_range", _pair(self.scale_jitter_range, "scale_jitter_range"))
        set_("shift_range", _pair(self.shift_range, "shift_range"))
        set_("noise_std_range", _pair(self.noise_std_range, "noise_std_range"))
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == REALISTIC and not self.psf_pool:
            raise InvalidArgument("psf_pool must be non-empty in realistic mode")
        if not self.scale_nominal * self.scale_jitter_range[0] >= 1.0:
            raise InvalidArgument("smallest sampled scale must be >= 1")
        if self.noise_std_range[0] < 0:
            raise InvalidArgument("noise std range must be nonnegative")
        lo, hi = self.shift_range
        if lo < 0 or hi > 1 or (hi == 1 and lo == 1):
            raise InvalidArgument(f"shift_range must lie within [0, 1), got {self.shift_range}")
        if not 0 <= self.alpha_jitter <= 0.5:
            raise InvalidArgument(f"alpha_jitter must lie in [0, 0.5], got {self.alpha_jitter}")
        _psf._check_size(self.kernel_size)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "psf_pool": [m.to_dict() for m in self.psf_pool],
            "alpha_jitter": self.alpha_jitter,
            "scale_nominal": self.scale_nominal,
            "scale_jitter_range": list(self.scale_jitter_range),
            "shift_range": list(self.shift_range),
            "noise_model": {"kernel": self.noise_model.kernel.tolist(), "std": self.noise_model.std},
            "noise_std_range": list(self.noise_std_range),
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "DegradeConfig":
        """Build a config from a JSON document; missing keys take defaults.

        ``noise_model`` may be an inline ``{"kernel": [[...]], "std": s}``
        object or a path (relative to ``base_dir``) to a noise-model file.
        """
        kwargs = {}
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        for key, value in doc.items():
            if key == "psf_pool":
                value = tuple(PsfMixture.from_dict(m) for m in value)
            elif key == "noise_model":
                value = _noise_from_doc(value, base_dir)
            elif key in ("scale_jitter_range", "shift_range", "noise_std_range"):
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _noise_from_doc(value, base_dir):
    if isinstance(value, str):
        from pathlib import Path

        from .formats import read_noise_model

        path = Path(value)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return read_noise_model(path)
    return NoiseModel(np.asarray(value["kernel"], dtype=np.float64), value.get("std", 0.0))


@dataclass(frozen=True)
class DegradeRecipe:
    """Every random choice behind one LR sample; replaying it is deterministic."""

    mode: str
    seed: int
    scale: float
    phase: tuple = (0.0, 0.0)
    mixture_index: int = -1
    mixture: PsfMixture | None = None
    kernel_size: int = _psf.DEFAULT_SIZE
    noise_std: float = 0.0
    noise_kernel: tuple = ((1.0,),)
    noise_seed: int = 0

    @property
    def kernel(self) -> np.ndarray | None:
        if self.mixture is None:
            return None
        return _psf.render_psf(self.mixture, self.kernel_size)

    @property
    def noise_model(self) -> NoiseModel:
        return NoiseModel(np.asarray(self.noise_kernel, dtype=np.float64), self.noise_std)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "scale": self.scale,
            "phase": list(self.phase),
            "mixture_index": self.mixture_index,
            "mixture": None if self.mixture is None else self.mixture.to_dict(),
            "kernel_size": self.kernel_size,
            "noise_std": self.noise_std,
            "noise_kernel": [list(r) for r in self.noise_kernel],
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DegradeRecipe":
        doc = dict(doc)
        doc["phase"] = tuple(doc["phase"])
        doc["noise_kernel"] = tuple(tuple(r) for r in doc["noise_kernel"])
        if doc.get("mixture") is not None:
            doc["mixture"] = PsfMixture.from_dict(doc["mixture"])
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text) -> "DegradeRecipe":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


def sample_recipe(config: DegradeConfig, rng_seed: int) -> DegradeRecipe:
    seed = int(rng_seed)
    if config.mode == BICUBIC_BASELINE:
        return DegradeRecipe(mode=BICUBIC_BASELINE, seed=seed, scale=float(config.scale_nominal))

    rng = np.random.default_rng(seed)
    index = int(rng.integers(len(config.psf_pool)))
    jitter_seed = int(rng.integers(2**63))
    lo, hi = config.scale_jitter_range
    scale = float(config.scale_nominal * rng.uniform(lo, hi))
    slo, shi = config.shift_range
    phase = (float(rng.uniform(slo, shi)), float(rng.uniform(slo, shi)))
    nlo, nhi = config.noise_std_range
    noise_std = float(rng.uniform(nlo, nhi))
    noise_seed = int(rng.integers(2**63))

    mixture = _psf.perturb_alphas(config.psf_pool[index], config.alpha_jitter, jitter_seed)
    return DegradeRecipe(
        mode=REALISTIC,
        seed=seed,
        scale=scale,
        phase=phase,
        mixture_index=index,
        mixture=mixture,
        kernel_size=config.kernel_size,
        noise_std=noise_std,
        noise_kernel=tuple(tuple(float(v) for v in row) for row in config.noise_model.kernel),
        noise_seed=noise_seed,
    )


def apply_recipe(hr, recipe: DegradeRecipe) -> np.ndarray:
    """Deterministically reproduce the LR image a recipe describes."""
    hr = as_image(hr)
    if recipe.mode == BICUBIC_BASELINE:
        return resample(hr, recipe.scale, antialias=True)

    blurred = convolve(hr, recipe.kernel)
    lr = resample(blurred, recipe.scale, recipe.phase)
    if recipe.noise_std > 0:
        model = recipe.noise_model
        h, w = lr.shape[:2]
        if lr.ndim == 2:
            lr = lr + synth_colored_noise(h, w, model, [recipe.noise_seed, 0])
        else:
            noise = np.stack(
                [synth_colored_noise(h, w, model, [recipe.noise_seed, c]) for c in range(lr.shape[2])],
                axis=-1,
            )
            lr = lr + noise
    return np.clip(lr, 0.0, 1.0)


def degrade(hr, config: DegradeConfig, rng_seed: int):
    """Sample a degradation from ``config`` and apply it to ``hr``.

    Returns ``(lr, recipe)``.
    """
    recipe = sample_recipe(config, rng_seed)
    return apply_recipe(hr, recipe), recipe


def with_noise_std(config: DegradeConfig, std: float) -> DegradeConfig:
    """Pin the sampled noise amplitude to ``std``."""
    return replace(config, noise_std_range=(float(std), float(std)))
