"""Elliptical Gaussian-mixture point spread functions.

A PSF is a weighted sum of axis-aligned, origin-centred Gaussians

    h(x1, x2) = 1/Z * sum_i alpha_i * exp(-(x1^2 / (2 s_i1^2) + x2^2 / (2 s_i2^2)))

sampled on an odd square integer grid.  ``x1`` runs along columns
(horizontal) and ``x2`` along rows (vertical); ``Z`` makes the grid sum to 1.

Kernels are plain 2-D float64 arrays with odd sides.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMixture, InvalidArgument
from .nnls import nnls

MAX_SIGMA = 16.0
MIN_SIZE, MAX_SIZE = 3, 33
DEFAULT_SIZE = 21

DEFAULT_BASIS = (
    (0.6, 0.6),
    (1.0, 1.0),
    (1.6, 1.6),
    (2.4, 2.4),
    (1.8, 0.9),
    (0.9, 1.8),
)


@dataclass(frozen=True)
class Component:
    alpha: float
    sigma1: float
    sigma2: float


@dataclass(frozen=True)
class PsfMixture:
    """Weights and per-axis widths of a Gaussian mixture PSF."""

    components: tuple[Component, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise InvalidArgument("mixture needs at least one component")
        for c in comps:
            if not (np.isfinite(c.alpha) and c.alpha >= 0):
                raise InvalidArgument(f"alpha must be finite and >= 0, got {c.alpha}")
            for s in (c.sigma1, c.sigma2):
                if not (0 < s <= MAX_SIGMA):
                    raise InvalidArgument(f"sigma must lie in (0, {MAX_SIGMA}], got {s}")

    @classmethod
    def from_arrays(cls, alphas, sigmas) -> "PsfMixture":
        alphas = [float(a) for a in alphas]
        sigmas = [(float(s1), float(s2)) for s1, s2 in sigmas]
        if len(alphas) != len(sigmas):
            raise InvalidArgument(f"{len(alphas)} alphas for {len(sigmas)} sigma pairs")
        return cls(tuple(Component(a, s1, s2) for a, (s1, s2) in zip(alphas, sigmas)))

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.components])

    @property
    def sigmas(self) -> tuple[tuple[float, float], ...]:
        return tuple((c.sigma1, c.sigma2) for c in self.components)

    def with_alphas(self, alphas) -> "PsfMixture":
        return PsfMixture.from_arrays(alphas, self.sigmas)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"alpha": c.alpha, "sigma1": c.sigma1, "sigma2": c.sigma2}
                for c in self.components
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PsfMixture":
        try:
            comps = doc["components"]
            return cls.from_arrays(
                [c.get("alpha", 1.0) for c in comps],
                [(c["sigma1"], c["sigma2"]) for c in comps],
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"malformed mixture document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PsfMixture":
        return cls.from_dict(json.loads(text))


def check_basis(basis: Sequence[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    basis = tuple((float(s1), float(s2)) for s1, s2 in basis)
    if not basis:
        raise InvalidArgument("sigma basis is empty")
    if len(set(basis)) != len(basis):
        raise InvalidArgument("sigma basis contains duplicate pairs")
    if any(s <= 0 for pair in basis for s in pair):
        raise InvalidArgument("sigma basis values must be positive")
    return basis


def _check_size(size) -> int:
    if int(size) != size or size % 2 == 0 or not MIN_SIZE <= size <= MAX_SIZE:
        raise InvalidArgument(f"kernel size must be odd in [{MIN_SIZE}, {MAX_SIZE}], got {size}")
    return int(size)


def check_kernel(kernel, tol=1e-6) -> np.ndarray:
    """Validate a PSF kernel: odd sides, nonnegative, unit sum."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise InvalidArgument(f"kernel must be 2-D with odd sides, got shape {k.shape}")
    if not np.all(np.isfinite(k)) or k.min() < 0:
        raise InvalidArgument("kernel entries must be finite and nonnegative")
    if abs(k.sum() - 1.0) > tol:
        raise InvalidArgument(f"kernel must sum to 1, sums to {k.sum():.9g}")
    return k


def delta_kernel(size: int = 1) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def _gaussian(size, sigma1, sigma2):
    r = (size - 1) // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    x1 = ax[None, :]
    x2 = ax[:, None]
    return np.exp(-(x1 * x1 / (2.0 * sigma1 * sigma1) + x2 * x2 / (2.0 * sigma2 * sigma2)))


def render_psf(mixture: PsfMixture, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Sample a mixture on a ``size x size`` grid and normalise it to unit sum."""
    size = _check_size(size)
    alphas = mixture.alphas
    total = alphas.sum()
    if not total > 0:
        raise DegenerateMixture("all mixture weights are zero")
    # weights are normalised first so that rescaling every alpha by an exactly
    # representable factor leaves the kernel bit-identical
    weights = alphas / total
    acc = np.zeros((size, size))
    for w, (s1, s2) in zip(weights, mixture.sigmas):
        if w > 0:
            acc += w * _gaussian(size, s1, s2)
    return acc / acc.sum()


def basis_kernels(basis, size: int) -> np.ndarray:
    """Unit-sum rendering of every basis element, shape ``(n, size, size)``."""
    basis = check_basis(basis)
    return np.stack([render_psf(PsfMixture.from_arrays([1.0], [pair]), size) for pair in basis])


def _grid_mass(sigmas, size):
    return np.array([_gaussian(size, s1, s2).sum() for s1, s2 in sigmas])


def unit_sum_weights(mixture: PsfMixture, size: int) -> np.ndarray:
    """Weights of ``mixture`` with respect to unit-sum component renderings.

    The mixture's own alphas multiply peak-one exponentials; this converts
    them to the coefficients of the normalised components at ``size``.
    """
    return mixture.alphas * _grid_mass(mixture.sigmas, size)


def fit_mixture(target, basis=DEFAULT_BASIS, tol=1e-10) -> PsfMixture:
    """Nonnegative least-squares weights of ``basis`` Gaussians that best reproduce ``target``.

    The problem is solved over unit-sum renderings of the basis at the
    target's size; the weights are then divided by each component's grid
    mass so that the returned alphas multiply peak-one exponentials, the
    same parameterisation :func:`render_psf` uses.  Rendering the result
    therefore reproduces the fitted kernel.
    """
    target = check_kernel(target)
    if target.shape[0] != target.shape[1]:
        raise InvalidArgument(f"target kernel must be square, got {target.shape}")
    basis = check_basis(basis)
    G = basis_kernels(basis, target.shape[0])
    if G.shape[1:] != target.shape:
        raise InvalidArgument("basis renderings do not match the target size")
    weights, _ = nnls(G.reshape(len(basis), -1).T, target.ravel(), tol=tol)
    return PsfMixture.from_arrays(weights / _grid_mass(basis, target.shape[0]), basis)


def fit_residual(mixture: PsfMixture, target) -> float:
    """L2 distance between the unnormalised fitted combination and ``target``."""
    target = np.asarray(target, dtype=np.float64)
    size = target.shape[0]
    G = basis_kernels(mixture.sigmas, size)
    approx = np.tensordot(unit_sum_weights(mixture, size), G, axes=1)
    return float(np.linalg.norm(approx - target))


def perturb_alphas(mixture: PsfMixture, jitter: float, rng_seed) -> PsfMixture:
    """Multiply each weight by ``1 + eps``, ``eps ~ N(0, jitter)``, clipped at zero.

    Draws are repeated until at least one weight stays positive.
    """
    if not 0.0 <= jitter <= 0.5:
        raise InvalidArgument(f"alpha jitter must lie in [0, 0.5], got {jitter}")
    alphas = mixture.alphas
    if jitter == 0:
        return mixture
    rng = np.random.default_rng(rng_seed)
    while True:
        eps = rng.normal(0.0, jitter, size=alphas.shape)
        out = np.maximum(0.0, alphas * (1.0 + eps))
        if np.any(out > 0):
            return mixture.with_alphas(out)


def estimate_kernel_pair(sharp, blurred, size: int = 15, reg: float = 1e-4) -> np.ndarray:
    """Estimate the blur between a sharp/blurred single-channel pair.

    Solves ``argmin_k ||k * sharp - blurred||^2 + lam ||k||^2`` in the Fourier
    domain with ``lam = reg * mean(|FFT(sharp)|^2)``, so ``reg`` is a
    dimensionless fraction of the mean spectral power of ``sharp``.  The
    estimate is then then crops ``size x size`` about the origin, clips negatives and
    renormalises to unit sum.  Both images are mirrored into a
    ``(2H-2) x (2W-2)`` even extension first, so a mirror-boundary blur by an
    axis-symmetric kernel is exactly periodic.
    """
    sharp = np.asarray(sharp, dtype=np.float64)
    blurred = np.asarray(blurred, dtype=np.float64)
    if sharp.ndim != 2 or blurred.ndim != 2:
        raise InvalidArgument("estimate_kernel_pair expects single-channel 2-D images")
    if sharp.shape != blurred.shape:
        raise InvalidArgument(f"shape mismatch: {sharp.shape} vs {blurred.shape}")
    if not reg > 0:
        raise InvalidArgument(f"regularisation weight must be positive, got {reg}")
    if size % 2 == 0 or size < 1 or size > min(sharp.shape):
        raise InvalidArgument(f"kernel size must be odd and fit the image, got {size}")

    s_ext = _even_extension(sharp)
    b_ext = _even_extension(blurred)
    S = np.fft.fft2(s_ext)
    B = np.fft.fft2(b_ext)
    power = np.abs(S) ** 2
    K = np.conj(S) * B / (power + reg * power.mean())
    k = np.fft.fftshift(np.real(np.fft.ifft2(K)))
    cy, cx = k.shape[0] // 2, k.shape[1] // 2
    r = size // 2
    k = np.clip(k[cy - r : cy + r + 1, cx - r : cx + r + 1], 0.0, None)
    total = k.sum()
    if not total > 0:
        raise DegenerateMixture("estimated kernel has no positive mass")
    return k / total


def _even_extension(img):
    # whole-sample symmetric extension: mirror without repeating the edge pixel
    top = np.concatenate([img, img[-2:0:-1]], axis=0)
    return np.concatenate([top, top[:, -2:0:-1]], axis=1)
