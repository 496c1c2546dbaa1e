import numpy as np
import pytest
from scipy.signal import fftconvolve

from satgrade.errors import InvalidArgument, ZeroVariance
from satgrade.noise import NoiseModel, estimate_noise_kernel, synth_colored_noise
from satgrade.psf import PsfMixture, render_psf


def unit_l2(k):
    return k / np.linalg.norm(k)


def ncc(a, b):
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def kernel_power(kernel, n):
    pad = np.zeros((n, n))
    kh, kw = kernel.shape
    pad[:kh, :kw] = kernel
    return np.abs(np.fft.fft2(pad)) ** 2


SHAPING = unit_l2(render_psf(PsfMixture.from_arrays([0.6, 0.4], [(1.2, 0.7), (0.6, 0.6)]), 9))


class TestSynth:
    def test_delta_variance(self):
        model = NoiseModel(np.pad([[1.0]], 2), 0.05)
        n = synth_colored_noise(256, 256, model, 1)
        assert n.std() == pytest.approx(0.05, rel=0.03)

    def test_zero_std(self):
        n = synth_colored_noise(32, 48, NoiseModel(SHAPING, 0.0), 3)
        assert n.shape == (32, 48)
        assert not n.any()

    def test_spectrum_follows_kernel(self):
        model = NoiseModel(SHAPING, 0.02)
        power = np.mean([np.abs(np.fft.fft2(synth_colored_noise(128, 128, model, s))) ** 2 for s in range(100)], axis=0)
        assert ncc(power, kernel_power(SHAPING, 128)) >= 0.95

    def test_variance_is_std_squared(self):
        model = NoiseModel(SHAPING, 0.02)
        var = np.mean([synth_colored_noise(128, 128, model, s).var() for s in range(20)])
        assert var == pytest.approx(0.02**2, rel=0.05)

    def test_deterministic(self):
        model = NoiseModel(SHAPING, 0.02)
        a = synth_colored_noise(40, 50, model, 9)
        assert np.array_equal(a, synth_colored_noise(40, 50, model, 9))
        assert not np.array_equal(a, synth_colored_noise(40, 50, model, 10))

    def test_mean_bound_white(self):
        model = NoiseModel.white(0.02)
        bad = sum(abs(synth_colored_noise(64, 64, model, s).mean()) > 4 * 0.02 / 64 for s in range(200))
        assert bad <= 2

    def test_mean_bound_colored(self):
        # the spatial mean of shaped noise has std  std * sum(kernel) / sqrt(HW)
        model = NoiseModel(SHAPING, 0.02)
        bound = 4 * 0.02 * SHAPING.sum() / 64
        bad = sum(abs(synth_colored_noise(64, 64, model, s).mean()) > bound for s in range(200))
        assert bad <= 2

    @pytest.mark.parametrize("h, w", [(0, 5), (5, -1)])
    def test_bad_dims(self, h, w):
        with pytest.raises(InvalidArgument):
            synth_colored_noise(h, w, NoiseModel(SHAPING, 0.1), 0)

    def test_model_invariants(self):
        with pytest.raises(InvalidArgument):
            NoiseModel(np.ones((3, 3)), 0.1)
        with pytest.raises(InvalidArgument):
            NoiseModel(SHAPING, -1.0)


class TestEstimate:
    def test_white_noise_is_near_delta(self):
        fractions = []
        for seed in range(20):
            patch = np.random.default_rng(seed).normal(0, 0.1, (256, 256))
            k = estimate_noise_kernel(patch, 9).kernel
            fractions.append(k[4, 4] ** 2 / np.sum(k**2))
        assert min(fractions) >= 0.9

    def test_recovers_shaping_spectrum(self):
        rng = np.random.default_rng(4)
        patch = fftconvolve(rng.normal(0, 0.05, (512, 512)), SHAPING, mode="same")
        est = estimate_noise_kernel(patch, 15)
        assert ncc(kernel_power(est.kernel, 64), kernel_power(SHAPING, 64)) >= 0.9

    def test_round_trip(self):
        model = NoiseModel(SHAPING, 0.02)
        field = synth_colored_noise(512, 512, model, 11)
        est = estimate_noise_kernel(field, 15)
        assert est.std == pytest.approx(0.02, rel=0.1)
        assert np.linalg.norm(est.kernel) == pytest.approx(1.0, abs=1e-6)
        assert ncc(kernel_power(est.kernel, 64), kernel_power(SHAPING, 64)) >= 0.9

    def test_constant_patch(self):
        with pytest.raises(ZeroVariance):
            estimate_noise_kernel(np.full((64, 64), 0.3), 9)

    @pytest.mark.parametrize("shape, size", [((63, 100), 9), ((64, 64), 8), ((64, 64), 33)])
    def test_bad_arguments(self, shape, size):
        with pytest.raises(InvalidArgument):
            estimate_noise_kernel(np.random.default_rng(0).random(shape), size)
