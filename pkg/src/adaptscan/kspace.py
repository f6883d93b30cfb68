"""Multi-coil Cartesian encoding: y = M F S x + n, its adjoint, zero filling.

FFTs are unitary and operate in centered layout (DC at ``shape // 2``) so
masks from :mod:`adaptscan.sampling` apply directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaptscan.phantom import CoilSensitivities

DEFAULT_NOISE_FRACTION = 0.01


def fft2c(x: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def ifft2c(k: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=axes), norm="ortho"), axes=axes)


@dataclass(frozen=True, eq=False)
class MultiCoilKSpace:
    data: np.ndarray  # (n_coils, H, W), zero off the mask
    mask: np.ndarray  # (H, W) bool
    noise_std: float

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]


def _as_mask(mask, shape) -> np.ndarray:
    grid = getattr(mask, "grid", mask)
    grid = np.asarray(grid, dtype=bool)
    if grid.shape != tuple(shape):
        raise ValueError(f"mask shape {grid.shape} does not match image shape {tuple(shape)}")
    return grid


def _check_sens(sens: CoilSensitivities, shape) -> np.ndarray:
    maps = sens.maps
    if maps.shape[1:] != tuple(shape):
        raise ValueError(f"coil maps {maps.shape[1:]} do not match image shape {tuple(shape)}")
    return maps


def complex_noise(shape, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian with E|n|^2 = noise_std^2."""
    scale = noise_std / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def encode(x: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Noiseless operator A x; ``x`` may carry leading batch dimensions."""
    return mask * fft2c(maps * x[..., None, :, :])


def encode_adjoint(y: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """A^H y, summing over the coil axis (-3)."""
    return np.sum(np.conj(maps) * ifft2c(mask * y), axis=-3)


def forward(x, sens: CoilSensitivities, mask, noise_std: float = 0.0, seed: int = 0) -> MultiCoilKSpace:
    """Simulate masked multi-coil k-space with additive complex noise.

    Noise is drawn on the full grid from ``seed`` and then masked, so calls
    that differ only in the mask see the same noise at shared locations.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite entries")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    maps = _check_sens(sens, x.shape)
    grid = _as_mask(mask, x.shape)
    k = fft2c(maps * x)
    if noise_std > 0:
        k = k + complex_noise(k.shape, noise_std, np.random.default_rng(seed))
    return MultiCoilKSpace(k * grid, grid, float(noise_std))


def adjoint(y: MultiCoilKSpace, sens: CoilSensitivities) -> np.ndarray:
    maps = _check_sens(sens, y.mask.shape)
    if y.data.shape != maps.shape:
        raise ValueError(f"k-space {y.data.shape} does not match coil maps {maps.shape}")
    return encode_adjoint(y.data, maps, y.mask)


def zero_filled(y: MultiCoilKSpace, sens: CoilSensitivities) -> np.ndarray:
    """x_u = A^* y."""
    return adjoint(y, sens)


def default_noise_std(x: np.ndarray, sens: CoilSensitivities, fraction: float = DEFAULT_NOISE_FRACTION) -> float:
    """``fraction`` of the largest coil-image k-space magnitude."""
    return float(fraction * np.abs(fft2c(sens.maps * x)).max())
