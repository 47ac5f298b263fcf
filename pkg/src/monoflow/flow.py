"""Particle simulation of monotone-rescaled KL flows.

Particles move along ``h'(log r(x)) * grad log r(x)`` with ``r = p / q_t``.
Since ``q_t`` is only known through the particles, the ratio comes from a
:class:`RatioSource`: a frozen analytic pair (tests), a Gaussian refit to the
cloud at every step, or a discriminator trained alongside the flow.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite, NumericOverflow
from .gaussian import (
    MultivariateGaussian,
    fit_gaussian,
    kl_closed_form,
    log_density,
    log_ratio_and_grad,
    sample,
    score,
)
from .hfunctions import FDivergenceSpec, HFunction, flow_rescaling, h_prime
from .neural import Mlp, OptState, adam, default_discriminator, disc_update
from .ratio import RatioVariant, log_ratio_from_output

REFIT_JITTER = 1e-8


@dataclass
class ParticleCloud:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if not np.all(np.isfinite(self.positions)):
            raise NumericOverflow("particle positions are not finite")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


class AnalyticPair:
    """Exact log-ratio between two fixed Gaussians; ``q`` does not follow the cloud."""

    kind = "analytic"

    def __init__(self, p: MultivariateGaussian, q: MultivariateGaussian):
        if p.dim != q.dim:
            raise ValueError("dimension mismatch")
        self.p, self.q = p, q

    def refresh(self, cloud: ParticleCloud, rng=None):
        return self

    def log_ratio(self, x):
        return log_ratio_and_grad(self.p, self.q, x)


class MomentMatched:
    """Ratio against a Gaussian refit to the current cloud.

    Exact while the cloud stays Gaussian, which holds for ``h = Identity`` with
    Gaussian endpoints; otherwise it is a surrogate.
    """

    kind = "moment"

    def __init__(self, p: MultivariateGaussian, jitter: float = REFIT_JITTER):
        self.p = p
        self.jitter = jitter
        self.q: MultivariateGaussian | None = None

    def refresh(self, cloud: ParticleCloud, rng=None):
        if cloud.dim != self.p.dim:
            raise ValueError("dimension mismatch")
        self.q = fit_gaussian(cloud.positions, jitter=self.jitter)
        return self

    def log_ratio(self, x):
        if self.q is None:
            raise RuntimeError("refresh the source on a cloud before evaluating it")
        return log_ratio_and_grad(self.p, self.q, x)


class Discriminator:
    """Ratio read off a network trained on samples of ``p`` against the cloud.

    Each refresh runs ``updates`` ascent steps of the variant's objective.
    """

    kind = "discriminator"

    def __init__(self, p: MultivariateGaussian, net: Mlp, variant: RatioVariant | None = None,
                 opt: OptState | None = None, updates: int = 1, batch: int = 512):
        if net.layer_sizes[0] != p.dim:
            raise ValueError("discriminator input size differs from the data dimension")
        self.p = p
        self.net = net
        self.variant = variant or RatioVariant("VanillaGAN")
        self.opt = opt or adam()
        self.updates = updates
        self.batch = batch

    def refresh(self, cloud: ParticleCloud, rng=None):
        for _ in range(self.updates):
            real = sample(self.p, rng, self.batch)
            fake = cloud.positions[rng.choice(cloud.n, size=min(self.batch, cloud.n), replace=False)]
            disc_update(self.net, self.variant, real, fake, self.opt)
        return self

    def log_ratio(self, x):
        x = np.atleast_2d(x)
        d = self.net(x)
        u, slope = log_ratio_from_output(self.variant, d)
        _, gx = self.net.backward(x, np.ones(len(x)))
        return np.asarray(u), np.asarray(slope)[:, None] * gx


def make_source(kind: str, p: MultivariateGaussian, q: MultivariateGaussian | None = None, rng=None, **kw):
    if kind == "analytic":
        return AnalyticPair(p, q)
    if kind == "moment":
        return MomentMatched(p)
    if kind == "discriminator":
        net = kw.pop("net", None) or default_discriminator(rng, d=p.dim)
        return Discriminator(p, net, **kw)
    raise ValueError(f"unknown ratio source {kind!r}; choose analytic, moment or discriminator")


def vector_field(src, h: HFunction, x):
    """``h'(u) * grad u`` with ``(u, grad u)`` the source's log-ratio at ``x``."""
    if not h.monotone:
        raise ValueError(f"{h.name} is not monotone; its flow is not a rescaled KL flow")
    x = np.asarray(x, dtype=float)
    u, g = src.log_ratio(x)
    v = np.asarray(h_prime(h, u))[..., None] * np.atleast_2d(g)
    return v[0] if x.ndim == 1 else v


def fdiv_vector_field(src, spec: FDivergenceSpec, x):
    """Gradient-flow field of ``D_f(p||q)``: ``r^2 f''(r) * grad log r``."""
    x = np.asarray(x, dtype=float)
    u, g = src.log_ratio(x)
    v = np.asarray(flow_rescaling(spec, np.exp(u)))[..., None] * np.atleast_2d(g)
    return v[0] if x.ndim == 1 else v


def euler_step(cloud: ParticleCloud, src, h: HFunction, alpha: float, field_fn=None) -> ParticleCloud:
    """``x <- x + alpha * v(x)``, ``t <- t + alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    field = (lambda s, x: vector_field(s, h, x)) if field_fn is None else field_fn
    try:
        v = field(src, cloud.positions)
    except NumericOverflow as exc:
        # the error path only: find the first offending particle
        for i, row in enumerate(cloud.positions):
            try:
                field(src, row[None, :])
            except NumericOverflow:
                raise NumericOverflow(f"particle {i}: {exc}") from exc
        raise
    new = cloud.positions + alpha * v
    if not np.all(np.isfinite(new)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(new), axis=1))[0])
        raise NumericOverflow(f"particle {bad} left the representable range")
    return ParticleCloud(new, cloud.time + alpha)


def dissipation_terms(cloud: ParticleCloud, p: MultivariateGaussian, q_hat: MultivariateGaussian, h: HFunction):
    """Per-particle ``-h'(log r(x)) * |score_q(x) - score_p(x)|^2`` with ``r = p / q_hat``."""
    x = cloud.positions
    u = log_density(p, x) - log_density(q_hat, x)
    diff = score(q_hat, x) - score(p, x)
    return -np.asarray(h_prime(h, u)) * np.sum(diff * diff, axis=1)


def dissipation_estimate(cloud: ParticleCloud, p: MultivariateGaussian, q_hat: MultivariateGaussian,
                         h: HFunction, return_se: bool = False):
    """Monte Carlo rate of change of KL(q||p) along the rescaled flow; never positive
    in expectation for monotone h."""
    t = dissipation_terms(cloud, p, q_hat, h)
    mean = float(t.mean())
    if return_se:
        return mean, float(t.std(ddof=1) / np.sqrt(t.size))
    return mean


@dataclass
class FlowTrace:
    time: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    cov: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    dissipation_se: list = field(default_factory=list)

    def record(self, cloud: ParticleCloud, p: MultivariateGaussian, h: HFunction):
        q_hat = fit_gaussian(cloud.positions, jitter=REFIT_JITTER)
        self.append(cloud.time, q_hat, p, dissipation_terms(cloud, p, q_hat, h))

    def append(self, time, q_hat: MultivariateGaussian, p: MultivariateGaussian, terms):
        self.time.append(float(time))
        self.mean.append(np.array(q_hat.mean))
        self.cov.append(np.array(q_hat.cov) - REFIT_JITTER * np.eye(q_hat.dim))
        self.kl.append(kl_closed_form(q_hat, p))
        self.dissipation.append(float(np.mean(terms)))
        self.dissipation_se.append(float(np.std(terms, ddof=1) / np.sqrt(len(terms))))

    def __len__(self):
        return len(self.time)

    def header(self) -> list[str]:
        d = len(self.mean[0]) if self.mean else 2
        cols = ["time"] + [f"mean_{i}" for i in range(d)]
        cols += [f"cov_{i}{j}" for i in range(d) for j in range(i, d)]
        return cols + ["kl", "dissipation"]

    def rows(self):
        for t, m, c, kl, dis in zip(self.time, self.mean, self.cov, self.kl, self.dissipation):
            d = len(m)
            yield [t, *m, *(c[i, j] for i in range(d) for j in range(i, d)), kl, dis]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def run_flow(p: MultivariateGaussian, q0: MultivariateGaussian, h: HFunction, src_kind: str = "moment",
             alpha: float = 1e-3, steps: int = 5000, n_particles: int = 4096, rng=None,
             source=None, record_every: int = 1, u_max: float | None = None) -> FlowTrace:
    """Simulate the flow from ``q0`` towards ``p`` and record moments, KL and dissipation.

    ``src_kind`` is ``"moment"`` (refit q each step), ``"analytic"`` (q frozen at
    ``q0``) or ``"discriminator"``. A prebuilt ``source`` overrides ``src_kind``.

    ``u_max`` caps the log-ratio fed to ``h'``. The capped rescaling is still
    positive, so the run is the flow of a monotone ``h`` that is continued
    linearly above ``u_max``. Exponential ``h`` need it under the Gaussian refit:
    outlying particles see a quadratically growing log-ratio and escape in
    finite time otherwise.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if n_particles < p.dim + 1:
        raise ValueError("need at least d + 1 particles")
    if rng is None:
        raise ValueError("run_flow needs an explicit rng")
    if not h.monotone:
        raise ValueError(f"{h.name} is not monotone")
    src = source or make_source(src_kind, p, q0, rng=rng)
    cloud = ParticleCloud(sample(q0, rng, n_particles))
    trace = FlowTrace()
    moment = isinstance(src, MomentMatched)
    for k in range(steps + 1):
        try:
            src.refresh(cloud, rng)
        except NotPositiveDefinite as exc:
            raise NumericOverflow(f"step {k}: ratio source refresh failed: {exc}") from exc
        u, g = src.log_ratio(cloud.positions)
        if u_max is not None:
            u = np.minimum(u, u_max)
        try:
            scale = np.asarray(h_prime(h, u))
        except NumericOverflow as exc:
            raise NumericOverflow(f"step {k}: {exc}") from exc
        if k % record_every == 0 or k == steps:
            if moment:
                # the refit q is the moment-matched surrogate; reuse its field
                trace.append(cloud.time, src.q, p, -scale * np.sum(g * g, axis=1))
            else:
                trace.record(cloud, p, h)
        if k == steps:
            break
        new = cloud.positions + alpha * scale[:, None] * g
        if not np.all(np.isfinite(new)):
            raise NumericOverflow(f"step {k + 1}: particle positions overflowed")
        cloud = ParticleCloud(new, cloud.time + alpha)
    return trace


def run_flow_cloud(p, q0, h, alpha, steps, n_particles, rng, src_kind="moment") -> ParticleCloud:
    """Like :func:`run_flow` but returns the final cloud without tracing."""
    src = make_source(src_kind, p, q0, rng=rng)
    cloud = ParticleCloud(sample(q0, rng, n_particles))
    for _ in range(steps):
        src.refresh(cloud, rng)
        cloud = euler_step(cloud, src, h, alpha)
    return cloud


def langevin_step(cloud: ParticleCloud, p: MultivariateGaussian, dt: float, rng) -> ParticleCloud:
    """Unadjusted Langevin: ``x <- x + dt * score_p(x) + sqrt(2 dt) * noise``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = cloud.positions
    noise = rng.standard_normal(x.shape)
    return ParticleCloud(x + dt * score(p, x) + np.sqrt(2.0 * dt) * noise, cloud.time + dt)


def run_langevin(p: MultivariateGaussian, q0: MultivariateGaussian, dt: float, steps: int,
                 n_particles: int, rng) -> ParticleCloud:
    cloud = ParticleCloud(sample(q0, rng, n_particles))
    for _ in range(steps):
        cloud = langevin_step(cloud, p, dt, rng)
    return cloud
