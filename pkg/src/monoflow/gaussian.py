"""Small dense linear algebra and closed-form multivariate Gaussians.

Everything here works on numpy arrays. Points are rows: a single point has
shape ``(d,)`` and a batch has shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

PIVOT_FLOOR = 1e-14
RNG_ALGORITHM = "numpy.random.Generator(Philox4x64-10)"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises NotPositiveDefinite when a pivot drops to 1e-14 or below.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > PIVOT_FLOOR:
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.3e}")
        L[j, j] = np.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def chol_solve(L: np.ndarray, b) -> np.ndarray:
    """Solve ``(L L^T) x = b``; ``b`` may be a vector or a stack of column vectors."""
    y = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, y, lower=False)


def spd_solve(m, b) -> np.ndarray:
    return chol_solve(cholesky(symmetrize(m)), np.asarray(b, dtype=float))


@dataclass(frozen=True)
class MultivariateGaussian:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    precision: np.ndarray = field(init=False, repr=False, compare=False)
    logdet: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = symmetrize(np.atleast_2d(self.cov))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean has length {mean.size} but cov is {cov.shape}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        chol = cholesky(cov)
        chol.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        prec = chol_solve(chol, np.eye(mean.size))
        prec = 0.5 * (prec + prec.T)
        prec.flags.writeable = False
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, x):
        return log_density(self, x)

    def score(self, x):
        return score(self, x)

    def sample(self, rng, n):
        return sample(self, rng, n)


def standard_normal(d: int) -> MultivariateGaussian:
    return MultivariateGaussian(np.zeros(d), np.eye(d))


def _log_density_and_score(g: MultivariateGaussian, xs: np.ndarray):
    diff = xs - g.mean
    s = -(diff @ g.precision)
    logp = 0.5 * np.einsum("ij,ij->i", diff, s) - 0.5 * (g.dim * np.log(2 * np.pi) + g.logdet)
    return logp, s


def log_density(g: MultivariateGaussian, x):
    x = np.asarray(x, dtype=float)
    out, _ = _log_density_and_score(g, np.atleast_2d(x))
    return float(out[0]) if x.ndim == 1 else out


def score(g: MultivariateGaussian, x):
    """Gradient of the log density, ``-cov^{-1}(x - mean)``."""
    x = np.asarray(x, dtype=float)
    out = -((np.atleast_2d(x) - g.mean) @ g.precision)
    return out[0] if x.ndim == 1 else out


def kl_closed_form(q: MultivariateGaussian, p: MultivariateGaussian) -> float:
    """KL(q || p) between two Gaussians of the same dimension."""
    if q.dim != p.dim:
        raise ValueError("dimension mismatch")
    tr = np.trace(chol_solve(p.chol, q.cov))
    dm = p.mean - q.mean
    maha = dm @ chol_solve(p.chol, dm)
    kl = 0.5 * (tr + maha - p.dim + p.logdet - q.logdet)
    return max(float(kl), 0.0)


def log_ratio_and_grad(p: MultivariateGaussian, q: MultivariateGaussian, x):
    """``(log p(x) - log q(x), score_p(x) - score_q(x))``."""
    x = np.asarray(x, dtype=float)
    xs = np.atleast_2d(x)
    lp, sp = _log_density_and_score(p, xs)
    lq, sq = _log_density_and_score(q, xs)
    if x.ndim == 1:
        return float(lp[0] - lq[0]), sp[0] - sq[0]
    return lp - lq, sp - sq


def affine_kl_field(p: MultivariateGaussian, q: MultivariateGaussian):
    """``(A, b)`` with ``score_p(x) - score_q(x) == A x + b``."""
    Pp, Pq = p.precision, q.precision
    A = -(Pp - Pq)
    b = Pp @ p.mean - Pq @ q.mean
    return A, b


def moment_flow_step(p: MultivariateGaussian, q: MultivariateGaussian, dt: float) -> MultivariateGaussian:
    """One explicit-Euler step of the KL-flow moment ODE for Gaussian ``q``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    A, b = affine_kl_field(p, q)
    mean = q.mean + dt * (A @ q.mean + b)
    cov = q.cov + dt * (A @ q.cov + q.cov @ A.T)
    return MultivariateGaussian(mean, cov)


def fit_gaussian(points, jitter: float = 0.0) -> MultivariateGaussian:
    """Sample mean and unbiased sample covariance, plus optional ``jitter * I``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    if n < d + 1:
        raise NotPositiveDefinite(f"need at least {d + 1} points to fit a {d}-d Gaussian, got {n}")
    mean = pts.mean(axis=0)
    diff = pts - mean
    cov = diff.T @ diff / (n - 1)
    if jitter:
        cov = cov + jitter * np.eye(d)
    return MultivariateGaussian(mean, cov)


def sample(g: MultivariateGaussian, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    z = rng.standard_normal((n, g.dim))
    return g.mean + z @ g.chol.T


# The 2-d benchmark pair: generator start and data distribution.
TOY_INIT_MEAN = (1.0, 1.0)
TOY_INIT_COV = ((1.0, 0.0), (0.0, 1.0))
TOY_TARGET_MEAN = (0.0, 0.0)
TOY_TARGET_COV = ((1.0, 0.8), (0.8, 0.89))


def toy_target() -> MultivariateGaussian:
    return MultivariateGaussian(np.array(TOY_TARGET_MEAN), np.array(TOY_TARGET_COV))


def toy_init() -> MultivariateGaussian:
    return MultivariateGaussian(np.array(TOY_INIT_MEAN), np.array(TOY_INIT_COV))
