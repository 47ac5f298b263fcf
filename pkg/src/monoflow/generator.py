"""Reparameterized Gaussian generator and its three gradient estimators.

The generator draws ``x = mu + z @ s`` for ``z ~ N(0, I)`` (rows), so its
covariance is ``s.T @ s``. Training minimizes ``E_z[f(r)]``, equivalently
``-E_z[h(log r)]``, where the ratio ``r = p_data / p_g`` is one of

* ``Full``: the exact ratio, differentiated through both the sample and the
  generator density (variational divergence minimization);
* ``Detached``: the exact ratio with the generator density held fixed, so
  only the sample path carries gradient;
* ``GanBilevel``: a logistic discriminator updated a few times per generator step.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NotPositiveDefinite, NumericOverflow
from .gaussian import MultivariateGaussian, log_density, make_rng, score, toy_init, toy_target
from .hfunctions import FDivergenceSpec, HFunction, f_eval, f_prime, h_eval, h_prime, loss_h
from .neural import Mlp, OptState, adam, default_discriminator, disc_update, opt_step
from .ratio import RatioVariant

RATIO_MODELS = ("Full", "Detached", "GanBilevel")
DIVERGENCES = ("KL", "ForwardKL", "ChiSquare", "Hellinger", "JensenShannon", "Exp")
U_CLIP = 500.0


@dataclass
class GaussianGenerator:
    mu: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).copy()
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float)).copy()
        if self.s.shape != (self.mu.size, self.mu.size):
            raise ValueError("scale must be d x d")

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def cov(self) -> np.ndarray:
        return self.s.T @ self.s

    def gaussian(self) -> MultivariateGaussian:
        return MultivariateGaussian(self.mu, self.cov)

    def copy(self) -> "GaussianGenerator":
        return GaussianGenerator(self.mu, self.s)

    @classmethod
    def from_gaussian(cls, g: MultivariateGaussian) -> "GaussianGenerator":
        # s.T @ s = cov with s = chol.T
        return cls(g.mean, g.chol.T)


def gen_sample(g: GaussianGenerator, z_batch) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    return g.mu + z @ g.s


@dataclass
class Gradient:
    mu: np.ndarray
    s: np.ndarray
    # per-sample flattened contributions, for standard errors
    samples: np.ndarray = field(repr=False, default=None)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu, self.s.ravel()])

    def stderr(self) -> np.ndarray:
        n = len(self.samples)
        return self.samples.std(axis=0, ddof=1) / np.sqrt(n)


def _assemble(weights, dx, z, extra_s=None) -> Gradient:
    """Average of ``weights_i * (dx_i, outer(z_i, dx_i) [+ extra_s])``."""
    w = np.asarray(weights, dtype=float)[:, None]
    gmu = w * dx
    gs = (w[:, :, None] * z[:, :, None] * dx[:, None, :])
    if extra_s is not None:
        gs = gs + w[:, :, None] * extra_s[None, :, :]
    per = np.concatenate([gmu, gs.reshape(len(z), -1)], axis=1)
    return Gradient(gmu.mean(axis=0), gs.mean(axis=0), per)


def _check_scale(g: GaussianGenerator):
    det = np.linalg.det(g.s)
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise NotPositiveDefinite("generator scale is singular")
    return det


def generator_log_density(g: GaussianGenerator, z) -> np.ndarray:
    """``log p_g(x(z))``; the reparameterization reduces it to a function of ``z``."""
    det = _check_scale(g)
    return -0.5 * np.sum(z * z, axis=1) - np.log(abs(det)) - 0.5 * g.dim * np.log(2 * np.pi)


def log_ratio_at(g: GaussianGenerator, target: MultivariateGaussian, z) -> tuple[np.ndarray, np.ndarray]:
    """Samples ``x(z)`` and ``u = log p_data(x) - log p_g(x)``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = gen_sample(g, z)
    return x, log_density(target, x) - generator_log_density(g, z)


def _f_weight(spec: FDivergenceSpec, u):
    """``d f(e^u) / du = r f'(r)``."""
    u = np.clip(u, -U_CLIP, U_CLIP)
    r = np.exp(u)
    with np.errstate(over="ignore", invalid="ignore"):
        w = r * np.asarray(f_prime(spec, r))
    if not np.all(np.isfinite(w)):
        raise NumericOverflow("f-weight overflowed")
    return w


def _loss_weight(rescale, u):
    """Derivative of the per-sample loss with respect to ``u``."""
    if isinstance(rescale, FDivergenceSpec):
        return _f_weight(rescale, u)
    if isinstance(rescale, HFunction):
        return -np.asarray(h_prime(rescale, np.clip(u, -U_CLIP, U_CLIP)))
    raise TypeError("expected an FDivergenceSpec or HFunction")


def mc_cost(g: GaussianGenerator, spec: FDivergenceSpec, target: MultivariateGaussian, z_batch) -> float:
    """``mean_z f(r(x(z), theta))``."""
    _, u = log_ratio_at(g, target, z_batch)
    return float(np.mean(f_eval(spec, np.exp(np.clip(u, -U_CLIP, U_CLIP)))))


def full_gradient(g: GaussianGenerator, spec: FDivergenceSpec, target: MultivariateGaussian, z_batch) -> Gradient:
    """Gradient of ``mean_z f(r(x(z), theta))`` through the sample and the density.

    With ``u = log p_data(x) - log p_g(x)`` and ``x = mu + z s``,
    ``log p_g(x(z)) = -|z|^2/2 - log|det s| + const``, so the total derivative
    of ``u`` is ``score_data(x)`` pushed through the sample Jacobian plus
    ``inv(s).T`` for the scale.
    """
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    _check_scale(g)
    x, u = log_ratio_at(g, target, z)
    w = _f_weight(spec, u)
    return _assemble(w, score(target, x), z, extra_s=np.linalg.inv(g.s).T)


def detached_gradient(g: GaussianGenerator, rescale, target: MultivariateGaussian, z_batch) -> Gradient:
    """Gradient with the generator density frozen inside the ratio.

    ``rescale`` is an FDivergenceSpec (loss ``f(r)``) or an HFunction (loss
    ``-h(log r)``). Only ``grad_x log r`` is pushed through the sample Jacobian.
    """
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    q = g.gaussian()
    x, u = log_ratio_at(g, target, z)
    w = _loss_weight(rescale, u)
    return _assemble(w, score(target, x) - score(q, x), z)


def gan_generator_gradient(g: GaussianGenerator, disc: Mlp, h: HFunction, z_batch,
                           return_output: bool = False):
    """Gradient of ``-mean_z h(d(x(z)))`` with the discriminator held fixed."""
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    x = gen_sample(g, z)
    d, _, gx = disc.forward_backward(x)
    w = -np.asarray(h_prime(h, np.clip(d, -U_CLIP, U_CLIP)))
    grad = _assemble(w, gx, z)
    return (grad, d) if return_output else grad


def clip_norm(grad: Gradient, max_norm: float) -> Gradient:
    n = float(np.linalg.norm(grad.flat()))
    if n > max_norm:
        k = max_norm / n
        return Gradient(grad.mu * k, grad.s * k, grad.samples)
    return grad


def apply_gradient(g: GaussianGenerator, grad: Gradient, opt: OptState) -> GaussianGenerator:
    (mu, s), _ = opt_step(opt, [g.mu, g.s], [grad.mu, grad.s])
    return GaussianGenerator(mu, s)


def gan_bilevel_step(g: GaussianGenerator, disc: Mlp, h: HFunction, data_batch, z_batch,
                     gen_opt: OptState, disc_opt: OptState, disc_updates: int = 1,
                     variant: RatioVariant | None = None, max_norm: float = np.inf):
    """Discriminator ascent on real vs generated samples, then one generator step
    on ``-mean h(d(x))``. Returns ``(generator, disc, generator_loss)``."""
    variant = variant or RatioVariant("VanillaGAN")
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    fake = gen_sample(g, z)
    for _ in range(disc_updates):
        disc_update(disc, variant, data_batch, fake, disc_opt)
    grad, d = gan_generator_gradient(g, disc, h, z, return_output=True)
    grad = clip_norm(grad, max_norm)
    loss = -float(np.mean(h_eval(h, np.clip(d, -U_CLIP, U_CLIP))))
    return apply_gradient(g, grad, gen_opt), disc, loss


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    divergence: str = "KL"
    ratio_model: str = "Full"
    steps: int = 5000
    batch: int = 512
    gen_lr: float = 1e-2
    gen_beta1: float = 0.9
    gen_beta2: float = 0.999
    # one update at lr 1e-3 lags the generator; two faster updates keep the
    # adversarial oscillation inside the tolerance band
    disc_lr: float = 5e-3
    disc_beta1: float = 0.5
    disc_beta2: float = 0.999
    disc_updates: int = 2
    disc_width: int = 64
    disc_batch: int = 256
    seed: int = 0
    tol_mean: float = 0.1
    tol_cov: float = 0.15
    tail_window: int = 100
    max_grad_norm: float = 1e3
    init_mean: tuple = (1.0, 1.0)
    init_scale: tuple = ((1.0, 0.0), (0.0, 1.0))
    target_mean: tuple = (0.0, 0.0)
    target_cov: tuple = ((1.0, 0.8), (0.8, 0.89))

    def __post_init__(self):
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {self.divergence!r}")
        if self.ratio_model not in RATIO_MODELS:
            raise ValueError(f"unknown ratio model {self.ratio_model!r}")
        for name in ("steps", "batch", "disc_updates", "disc_batch", "tail_window", "disc_width"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("tol_mean", "tol_cov"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    config: TrainConfig
    mu: np.ndarray
    cov: np.ndarray
    loss: list
    mu_dist: list
    cov_dist: list
    converged: bool
    status: str = "ok"

    def tail_distances(self) -> tuple[float, float]:
        w = self.config.tail_window
        return float(np.mean(self.mu_dist[-w:])), float(np.mean(self.cov_dist[-w:]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "mu_dist", "cov_dist"])
            for i, row in enumerate(zip(self.loss, self.mu_dist, self.cov_dist)):
                w.writerow([i + 1, *(repr(float(v)) for v in row)])


def judge(mu_dist, cov_dist, tol_mean: float, tol_cov: float, tail_window: int) -> bool:
    """Converged iff the tail-averaged parameter distances are within tolerance."""
    if len(mu_dist) < tail_window:
        return False
    m = np.asarray(mu_dist[-tail_window:], dtype=float)
    c = np.asarray(cov_dist[-tail_window:], dtype=float)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(c))):
        return False
    return bool(m.mean() <= tol_mean and c.mean() <= tol_cov)


def train(cfg: TrainConfig) -> TrainReport:
    rng = make_rng(cfg.seed)
    target = MultivariateGaussian(np.array(cfg.target_mean), np.array(cfg.target_cov))
    g = GaussianGenerator(np.array(cfg.init_mean), np.array(cfg.init_scale))
    spec = FDivergenceSpec(cfg.divergence)
    h = loss_h(spec)
    gen_opt = adam(cfg.gen_lr, cfg.gen_beta1, cfg.gen_beta2)
    disc = disc_opt = None
    if cfg.ratio_model == "GanBilevel":
        disc = default_discriminator(rng, d=g.dim, width=cfg.disc_width)
        disc_opt = adam(cfg.disc_lr, cfg.disc_beta1, cfg.disc_beta2)
    losses, mu_dist, cov_dist = [], [], []
    status = "ok"
    for step in range(1, cfg.steps + 1):
        z = rng.standard_normal((cfg.batch, g.dim))
        try:
            if cfg.ratio_model == "GanBilevel":
                data = target.mean + rng.standard_normal((cfg.disc_batch, g.dim)) @ target.chol.T
                g, disc, loss = gan_bilevel_step(g, disc, h, data, z[: cfg.disc_batch], gen_opt, disc_opt,
                                                 cfg.disc_updates, max_norm=cfg.max_grad_norm)
            else:
                if cfg.ratio_model == "Full":
                    grad = full_gradient(g, spec, target, z)
                else:
                    grad = detached_gradient(g, spec, target, z)
                loss = mc_cost(g, spec, target, z)
                g = apply_gradient(g, clip_norm(grad, cfg.max_grad_norm), gen_opt)
        except (NotPositiveDefinite, NumericOverflow, FloatingPointError) as exc:
            status = f"diverged at step {step}: {exc}"
            break
        if not (np.all(np.isfinite(g.mu)) and np.all(np.isfinite(g.s))):
            status = f"diverged at step {step}: non-finite parameters"
            break
        losses.append(loss)
        mu_dist.append(float(np.linalg.norm(g.mu - target.mean)))
        cov_dist.append(float(np.linalg.norm(g.cov - target.cov)))
    converged = status == "ok" and judge(mu_dist, cov_dist, cfg.tol_mean, cfg.tol_cov, cfg.tail_window)
    return TrainReport(cfg, g.mu, g.cov, losses, mu_dist, cov_dist, converged, status)


EXPECTED_GRID = {
    # divergence: (Full, Detached, GanBilevel)
    "KL": (True, True, True),
    "ForwardKL": (True, False, False),
    "ChiSquare": (True, False, False),
    "Hellinger": (True, False, False),
    "JensenShannon": (True, False, False),
    "Exp": (False, True, True),
}


def loss_rescaling_profile(h_list, d_grid) -> dict:
    """``{name: (h(d), h'(d))}`` over ``d_grid``."""
    d = np.asarray(d_grid, dtype=float)
    return {h.name: (np.asarray(h_eval(h, d)), np.asarray(h_prime(h, d))) for h in h_list}


__all__ = [
    "GaussianGenerator", "gen_sample", "full_gradient", "detached_gradient", "gan_bilevel_step",
    "gan_generator_gradient", "mc_cost", "train", "TrainConfig", "TrainReport", "judge",
    "EXPECTED_GRID", "loss_rescaling_profile", "toy_init", "toy_target",
]
