import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptscan.kspace import (
    adjoint,
    default_noise_std,
    encode,
    encode_adjoint,
    fft2c,
    forward,
    ifft2c,
    zero_filled,
)
from adaptscan.phantom import CoilSensitivities, make_coils
from adaptscan.sampling import poisson_disc_mask


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_fft_unitary(rng):
    x = crandn(rng, 16, 12)
    k = fft2c(x)
    assert np.isclose(np.linalg.norm(k), np.linalg.norm(x))
    np.testing.assert_allclose(ifft2c(k), x, atol=1e-12)


def test_dc_is_centered():
    x = np.ones((8, 8))
    k = fft2c(x)
    assert np.isclose(k[4, 4], 8.0)
    assert np.isclose(np.abs(k).sum(), 8.0)


@given(seed=st.integers(0, 2**32), n_coils=st.sampled_from([1, 3]), size=st.sampled_from([8, 16]))
def test_adjoint_identity(seed, n_coils, size):
    rng = np.random.default_rng(seed)
    maps = crandn(rng, n_coils, size, size)
    mask = rng.random((size, size)) < 0.4
    x = crandn(rng, size, size)
    u = crandn(rng, n_coils, size, size)
    lhs = np.vdot(u, encode(x, maps, mask))
    rhs = np.vdot(encode_adjoint(u, maps, mask), x)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(u)


def test_full_sampling_zero_filled_is_exact(knee_case):
    full = np.ones(knee_case.image.shape, dtype=bool)
    y = forward(knee_case.image, knee_case.coils, full)
    np.testing.assert_allclose(zero_filled(y, knee_case.coils), knee_case.image, atol=1e-12)


def test_measurement_zero_off_mask(knee_case):
    m = poisson_disc_mask(knee_case.image.shape, 8, seed=0)
    y = forward(knee_case.image, knee_case.coils, m, noise_std=0.1, seed=2)
    assert np.all(y.data[:, ~m.grid] == 0)
    assert y.noise_std == 0.1


def test_noise_revealed_consistently(knee_case):
    sparse = poisson_disc_mask(knee_case.image.shape, 16, seed=0).grid
    dense = np.ones_like(sparse)
    a = forward(knee_case.image, knee_case.coils, sparse, 0.05, seed=9)
    b = forward(knee_case.image, knee_case.coils, dense, 0.05, seed=9)
    assert np.array_equal(a.data[:, sparse], b.data[:, sparse])


def test_noise_power():
    sens = CoilSensitivities(np.ones((2, 64, 64), dtype=complex) / np.sqrt(2))
    y = forward(np.zeros((64, 64)), sens, np.ones((64, 64), bool), noise_std=0.3, seed=4)
    power = np.mean(np.abs(y.data) ** 2)
    assert abs(power - 0.09) < 0.09 * 0.05
    # circular: real and imaginary parts carry equal power
    assert abs(np.var(y.data.real) - np.var(y.data.imag)) < 0.09 * 0.05


def test_adjoint_matches_encode_adjoint(knee_case, rng):
    m = poisson_disc_mask(knee_case.image.shape, 4, seed=1).grid
    y = forward(knee_case.image, knee_case.coils, m, 0.01, seed=0)
    np.testing.assert_array_equal(adjoint(y, knee_case.coils), encode_adjoint(y.data, knee_case.coils.maps, m))


def test_default_noise_std_scales(knee_case):
    a = default_noise_std(knee_case.image, knee_case.coils, 0.01)
    b = default_noise_std(knee_case.image, knee_case.coils, 0.02)
    assert np.isclose(2 * a, b) and a > 0


@pytest.mark.parametrize(
    "x, mask_shape",
    [
        (np.full((16, 16), np.nan), (16, 16)),
        (np.zeros((2, 16, 16)), (16, 16)),
        (np.zeros((16, 16)), (8, 8)),
    ],
)
def test_forward_rejects_bad_input(x, mask_shape):
    sens = make_coils(16, 2, 0)
    with pytest.raises(ValueError):
        forward(x, sens, np.ones(mask_shape, bool))


def test_forward_rejects_coil_mismatch():
    with pytest.raises(ValueError):
        forward(np.zeros((16, 16)), make_coils(32, 2, 0), np.ones((16, 16), bool))


def test_forward_rejects_negative_noise():
    with pytest.raises(ValueError):
        forward(np.zeros((16, 16)), make_coils(16, 1, 0), np.ones((16, 16), bool), noise_std=-1)
