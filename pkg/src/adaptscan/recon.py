"""Posterior reconstruction samples for the linear-Gaussian model.

Model: y = A x + n with A = M F S, n ~ CN(0, I / noise_precision) on the
sampled locations, and prior x ~ CN(0, I / prior_precision).  The posterior
is CN(mu, P^-1) with precision P = beta A^H A + alpha I and mean
mu = P^-1 beta A^H y.

Two solvers share one interface:

* ``Dense`` materializes A and P and draws exact samples through a Cholesky
  factor of the covariance.  Only feasible for tiny problems; it doubles as
  the oracle for the iterative path.
* ``ConjugateGradient`` solves for the mean with CG and draws samples by
  perturbation: solving P d = beta A^H e1 + sqrt(alpha) e2 with
  e1 ~ CN(0, I / beta), e2 ~ CN(0, I) gives d ~ CN(0, P^-1).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from adaptscan.kspace import MultiCoilKSpace, complex_noise, zero_filled
from adaptscan.phantom import CoilSensitivities

DENSE_SIZE_CAP = 1024  # pixels x coils


class Solver(str, enum.Enum):
    DENSE = "Dense"
    CONJUGATE_GRADIENT = "ConjugateGradient"


class CGNotConverged(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class PosteriorSamplerConfig:
    """Sampler settings.

    ``noise_precision=None`` takes 1 / noise_std^2 from the measured k-space.
    ``cg_precision="single"`` runs the CG operator in complex64, which
    roughly halves its cost; residuals are still checked against ``cg_tol``.
    The default prior std of 0.5 spans the phantom intensity range [0, 1]
    around its midpoint.
    """

    prior_precision: float = 4.0
    noise_precision: float | None = None
    solver: Solver = Solver.CONJUGATE_GRADIENT
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000
    overconfidence_shrink: float = 1.0
    cg_precision: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "solver", Solver(self.solver))
        if self.cg_precision not in ("single", "double"):
            raise ValueError("cg_precision must be 'single' or 'double'")
        if self.prior_precision <= 0:
            raise ValueError("prior_precision must be > 0")
        if self.noise_precision is not None and self.noise_precision <= 0:
            raise ValueError("noise_precision must be > 0")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be > 0")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")
        if not 0 < self.overconfidence_shrink <= 1:
            raise ValueError("overconfidence_shrink must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class ReconSampleSet:
    samples: np.ndarray  # (M, H, W) complex
    posterior_mean: np.ndarray
    source_mask_R: float

    def __len__(self) -> int:
        return self.samples.shape[0]


def _precisions(y: MultiCoilKSpace, cfg: PosteriorSamplerConfig) -> tuple[float, float]:
    beta = cfg.noise_precision
    if beta is None:
        if y.noise_std <= 0:
            raise ValueError("noiseless k-space: set noise_precision explicitly")
        beta = 1.0 / y.noise_std**2
    return cfg.prior_precision, beta


def _mask_R(mask: np.ndarray) -> float:
    n = np.count_nonzero(mask)
    return mask.size / n if n else float("inf")


def conjugate_gradient(apply_op, b: np.ndarray, tol: float, max_iter: int, precond=None) -> tuple[np.ndarray, int]:
    """Batched (preconditioned) CG for a Hermitian positive-definite operator.

    ``b`` has shape (batch, H, W); each batch entry is an independent system
    and is frozen once its relative residual drops below ``tol``, so a
    column's iterates do not depend on the rest of the batch.
    """
    if precond is None:
        precond = lambda v: v  # noqa: E731
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = np.real(np.sum(np.conj(r) * z, axis=(-2, -1)))
    bnorm = np.sqrt(np.sum(np.abs(b) ** 2, axis=(-2, -1)))
    thresh = tol * bnorm
    res = bnorm.copy()
    active = res > thresh
    it = 0
    while np.any(active) and it < max_iter:
        idx = np.flatnonzero(active)
        ap = apply_op(p[idx])
        pap = np.real(np.sum(np.conj(p[idx]) * ap, axis=(-2, -1)))
        a = rz[idx] / pap
        x[idx] += a[:, None, None] * p[idx]
        r[idx] -= a[:, None, None] * ap
        z_new = precond(r[idx])
        rz_new = np.real(np.sum(np.conj(r[idx]) * z_new, axis=(-2, -1)))
        p[idx] = z_new + (rz_new / rz[idx])[:, None, None] * p[idx]
        rz[idx] = rz_new
        res[idx] = np.sqrt(np.sum(np.abs(r[idx]) ** 2, axis=(-2, -1)))
        active[idx] = res[idx] > thresh[idx]
        it += 1
    if np.any(active):
        worst = float(np.max(res[active] / bnorm[active]))
        raise CGNotConverged(f"CG did not reach tol={tol} in {max_iter} iterations", worst)
    return x, it


def _sample_noise(shape_k, shape_x, alpha, beta, mask, seed, m):
    rng = np.random.default_rng(np.random.SeedSequence([seed, m]))
    e1 = complex_noise(shape_k, 1.0 / np.sqrt(beta), rng) * mask
    e2 = complex_noise(shape_x, 1.0, rng)
    return e1, e2


def _sample_cg(y, maps, alpha, beta, cfg, M, seed):
    # Work in the uncentered layout: ifftshift is a permutation, so the
    # centered operator is conjugate to the plain one with shifted maps/mask.
    axes = (-2, -1)
    single = cfg.cg_precision == "single"
    cdtype, rdtype = (np.complex64, np.float32) if single else (np.complex128, np.float64)
    mask = np.fft.ifftshift(y.mask, axes=axes)
    smaps = np.fft.ifftshift(maps, axes=axes).astype(cdtype)
    smaps_conj = np.conj(smaps)
    # exact inverse for a single coil; a close fit while sum_c |s_c|^2 = 1
    pre_diag = (1.0 / (beta * mask + alpha)).astype(rdtype)

    def normal_op(v):
        k = mask * sfft.fft2(smaps * v[:, None], norm="ortho", axes=axes)
        return beta * np.sum(smaps_conj * sfft.ifft2(k, norm="ortho", axes=axes), axis=1) + alpha * v

    def precond(v):
        return sfft.ifft2(pre_diag * sfft.fft2(v, norm="ortho", axes=axes), norm="ortho", axes=axes)

    def adjoint_rhs(k):
        return beta * np.sum(smaps_conj * sfft.ifft2(mask * k, norm="ortho", axes=axes), axis=-3)

    def solve(rhs):
        sol, _ = conjugate_gradient(normal_op, rhs.astype(cdtype), cfg.cg_tol, cfg.cg_max_iter, precond)
        return np.fft.fftshift(sol, axes=axes).astype(np.complex128)

    ydata = np.fft.ifftshift(y.data, axes=axes)
    mean = solve(adjoint_rhs(ydata)[None])[0]
    if M == 0:
        return mean, np.empty((0,) + mean.shape, dtype=mean.dtype)
    rhs = np.empty((M,) + mean.shape, dtype=np.complex128)
    for m in range(M):
        e1, e2 = _sample_noise(y.data.shape, mean.shape, alpha, beta, y.mask, seed, m)
        e1 = np.fft.ifftshift(e1, axes=axes)
        e2 = np.fft.ifftshift(e2, axes=axes)
        rhs[m] = adjoint_rhs(e1) + np.sqrt(alpha) * e2
    dev = solve(rhs)
    return mean, mean[None] + cfg.overconfidence_shrink * dev


def _centered_dft_matrix(n: int) -> np.ndarray:
    eye = np.eye(n)
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(eye, axes=0), axis=0, norm="ortho"), axes=0)


def dense_system(mask: np.ndarray, sens: CoilSensitivities) -> np.ndarray:
    """Explicit encoding matrix A (rows: sampled entries per coil, cols: pixels)."""
    maps = sens.maps
    h, w = mask.shape
    if h * w * maps.shape[0] > DENSE_SIZE_CAP:
        raise ValueError(
            f"Dense solver capped at {DENSE_SIZE_CAP} pixel-coils, got {h}x{w}x{maps.shape[0]}"
        )
    f2 = np.kron(_centered_dft_matrix(h), _centered_dft_matrix(w))
    rows = f2[mask.ravel()]
    return np.concatenate([rows * s.ravel()[None, :] for s in maps], axis=0)


def dense_posterior(
    y: MultiCoilKSpace, sens: CoilSensitivities, cfg: PosteriorSamplerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic posterior mean (flattened) and covariance for small problems."""
    alpha, beta = _precisions(y, cfg)
    a = dense_system(y.mask, sens)
    ydata = np.concatenate([yc[y.mask] for yc in y.data])
    precision = beta * (a.conj().T @ a) + alpha * np.eye(a.shape[1])
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.conj().T)
    mean = cov @ (beta * (a.conj().T @ ydata))
    return mean, cov


def posterior_covariance_trace(mask: np.ndarray, sens: CoilSensitivities, cfg: PosteriorSamplerConfig) -> float:
    """tr(P^-1) from the eigenvalues of the explicit precision matrix."""
    if cfg.noise_precision is None:
        raise ValueError("posterior_covariance_trace needs an explicit noise_precision")
    a = dense_system(np.asarray(mask, dtype=bool), sens)
    precision = cfg.noise_precision * (a.conj().T @ a) + cfg.prior_precision * np.eye(a.shape[1])
    return float(np.sum(1.0 / np.linalg.eigvalsh(precision)))


def _sample_dense(y, sens, cfg, M, seed):
    mean, cov = dense_posterior(y, sens, cfg)
    chol = np.linalg.cholesky(cov)
    shape = y.mask.shape
    samples = np.empty((M,) + shape, dtype=np.complex128)
    for m in range(M):
        rng = np.random.default_rng(np.random.SeedSequence([seed, m]))
        z = complex_noise(mean.shape, 1.0, rng)
        samples[m] = (mean + cfg.overconfidence_shrink * (chol @ z)).reshape(shape)
    return mean.reshape(shape), samples


def sample_posterior(
    y: MultiCoilKSpace,
    sens: CoilSensitivities,
    cfg: PosteriorSamplerConfig,
    M: int = 20,
    seed: int = 0,
) -> ReconSampleSet:
    """Draw ``M`` reconstructions from the Gaussian posterior.

    Sample ``m`` depends only on ``(seed, m)`` and the data.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if sens.maps.shape != y.data.shape:
        raise ValueError(f"coil maps {sens.maps.shape} do not match k-space {y.data.shape}")
    alpha, beta = _precisions(y, cfg)
    if cfg.solver is Solver.DENSE:
        mean, samples = _sample_dense(y, sens, cfg, M, seed)
    else:
        mean, samples = _sample_cg(y, sens.maps, alpha, beta, cfg, M, seed)
    return ReconSampleSet(samples, mean, _mask_R(y.mask))


def posterior_mean(y: MultiCoilKSpace, sens: CoilSensitivities, cfg: PosteriorSamplerConfig) -> np.ndarray:
    alpha, beta = _precisions(y, cfg)
    if cfg.solver is Solver.DENSE:
        mean, _ = dense_posterior(y, sens, cfg)
        return mean.reshape(y.mask.shape)
    mean, _ = _sample_cg(y, sens.maps, alpha, beta, cfg, 0, 0)
    return mean


def zero_filled_sampler(y: MultiCoilKSpace, sens: CoilSensitivities, M: int = 20) -> ReconSampleSet:
    """Degenerate sampler: M identical copies of the zero-filled image."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    xu = zero_filled(y, sens)
    return ReconSampleSet(np.repeat(xu[None], M, axis=0), xu, _mask_R(y.mask))
