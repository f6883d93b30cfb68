import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptscan.kspace import forward
from adaptscan.phantom import CoilSensitivities, PhantomSpec, make_case, make_coils
from adaptscan.recon import (
    CGNotConverged,
    PosteriorSamplerConfig,
    Solver,
    conjugate_gradient,
    dense_posterior,
    dense_system,
    posterior_covariance_trace,
    posterior_mean,
    sample_posterior,
    zero_filled_sampler,
)
from adaptscan.sampling import nested_schedule, poisson_disc_mask


@pytest.fixture(scope="module")
def small():
    case = make_case(PhantomSpec(grid_size=16, n_coils=2, seed=4))
    mask = poisson_disc_mask((16, 16), 3, center_radius=1, seed=2).grid
    y = forward(case.image, case.coils, mask, noise_std=0.05, seed=1)
    return case, y


def test_dense_system_matches_operator(small):
    case, y = small
    a = dense_system(y.mask, case.coils)
    x = case.image
    direct = np.concatenate([c[y.mask] for c in forward(x, case.coils, y.mask).data])
    np.testing.assert_allclose(a @ x.ravel(), direct, atol=1e-12)


@pytest.mark.parametrize("precision, tol", [("double", 1e-8), ("single", 1e-4)])
def test_cg_mean_matches_dense(small, precision, tol):
    case, y = small
    cfg = PosteriorSamplerConfig(cg_precision=precision, cg_tol=1e-10 if precision == "double" else 1e-6)
    mu_dense, _ = dense_posterior(y, case.coils, cfg)
    mu_cg = posterior_mean(y, case.coils, cfg)
    err = np.linalg.norm(mu_cg.ravel() - mu_dense) / np.linalg.norm(mu_dense)
    assert err < tol


def test_dense_solver_path(small):
    case, y = small
    cfg = PosteriorSamplerConfig(solver=Solver.DENSE)
    s = sample_posterior(y, case.coils, cfg, M=4, seed=0)
    mu, _ = dense_posterior(y, case.coils, cfg)
    np.testing.assert_allclose(s.posterior_mean.ravel(), mu)
    assert s.samples.shape == (4, 16, 16)


def test_dense_cap():
    sens = make_coils(32, 2, 0)
    with pytest.raises(ValueError, match="capped"):
        dense_system(np.ones((32, 32), bool), sens)


def test_sample_prefix_stable(small):
    case, y = small
    cfg = PosteriorSamplerConfig(cg_precision="double")
    a = sample_posterior(y, case.coils, cfg, M=3, seed=8).samples
    b = sample_posterior(y, case.coils, cfg, M=5, seed=8).samples
    np.testing.assert_allclose(a, b[:3], atol=1e-9)


def test_seed_determinism(small):
    case, y = small
    cfg = PosteriorSamplerConfig()
    a = sample_posterior(y, case.coils, cfg, M=4, seed=3).samples
    b = sample_posterior(y, case.coils, cfg, M=4, seed=3).samples
    assert np.array_equal(a, b)


def test_shrink_scales_deviation(small):
    case, y = small
    full = sample_posterior(y, case.coils, PosteriorSamplerConfig(cg_precision="double"), 4, seed=5)
    shrunk = sample_posterior(
        y, case.coils, PosteriorSamplerConfig(cg_precision="double", overconfidence_shrink=0.3), 4, seed=5
    )
    np.testing.assert_allclose(
        shrunk.samples - shrunk.posterior_mean, 0.3 * (full.samples - full.posterior_mean), atol=1e-9
    )


def test_sample_variance_matches_dense_trace(small):
    case, y = small
    cfg = PosteriorSamplerConfig(cg_precision="double")
    _, cov = dense_posterior(y, case.coils, cfg)
    s = sample_posterior(y, case.coils, cfg, M=2000, seed=1)
    dev = (s.samples - s.posterior_mean).reshape(2000, -1)
    total = np.mean(np.sum(np.abs(dev) ** 2, axis=1))
    assert abs(total - np.real(np.trace(cov))) < 0.03 * np.real(np.trace(cov))


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32), n=st.sampled_from([4, 8]))
def test_cg_solves_hpd(seed, n):
    rng = np.random.default_rng(seed)
    b0 = rng.standard_normal((n * n, n * n)) + 1j * rng.standard_normal((n * n, n * n))
    a = b0.conj().T @ b0 + n * n * np.eye(n * n)
    rhs = rng.standard_normal((2, n, n)) + 1j * rng.standard_normal((2, n, n))
    op = lambda v: (v.reshape(v.shape[0], -1) @ a.T).reshape(v.shape)  # noqa: E731
    x, _ = conjugate_gradient(op, rhs, 1e-10, 500)
    for k in range(2):
        np.testing.assert_allclose(a @ x[k].ravel(), rhs[k].ravel(), rtol=1e-7, atol=1e-7)


def test_cg_not_converged():
    rng = np.random.default_rng(0)
    b0 = rng.standard_normal((16, 16))
    a = b0.T @ b0 + np.eye(16)
    op = lambda v: (v.reshape(v.shape[0], -1) @ a.T).reshape(v.shape)  # noqa: E731
    with pytest.raises(CGNotConverged) as exc:
        conjugate_gradient(op, rng.standard_normal((1, 4, 4)) + 0j, 1e-12, 1)
    assert exc.value.residual > 1e-12


def test_covariance_trace_shrinks_with_data():
    sens = make_coils(16, 1, 0)
    cfg = PosteriorSamplerConfig(noise_precision=100.0)
    sched = nested_schedule("PoissonDisc", (16, 16), (8, 4, 2), 1, 0)
    traces = [posterior_covariance_trace(m.grid, sens, cfg) for _, m in sched]
    assert traces[0] > traces[1] > traces[2]
    assert traces[0] < 256 / cfg.prior_precision


def test_covariance_trace_needs_beta():
    with pytest.raises(ValueError):
        posterior_covariance_trace(np.ones((4, 4), bool), make_coils(4 * 4, 1, 0), PosteriorSamplerConfig())


def test_noiseless_needs_beta():
    sens = CoilSensitivities(np.ones((1, 16, 16), complex))
    y = forward(np.zeros((16, 16)), sens, np.ones((16, 16), bool))
    with pytest.raises(ValueError, match="noise_precision"):
        sample_posterior(y, sens, PosteriorSamplerConfig(), 2)


def test_zero_filled_sampler(small):
    case, y = small
    s = zero_filled_sampler(y, case.coils, M=3)
    assert np.all(s.samples == s.posterior_mean)
    assert len(s) == 3
    assert np.isclose(s.source_mask_R, y.mask.size / y.mask.sum())


@pytest.mark.parametrize(
    "kwargs",
    [
        {"prior_precision": 0},
        {"noise_precision": -1.0},
        {"cg_tol": 0},
        {"cg_max_iter": 0},
        {"overconfidence_shrink": 0},
        {"overconfidence_shrink": 1.5},
        {"cg_precision": "half"},
        {"solver": "Magic"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PosteriorSamplerConfig(**kwargs)


def test_M_must_be_positive(small):
    case, y = small
    with pytest.raises(ValueError):
        sample_posterior(y, case.coils, PosteriorSamplerConfig(), M=0)
