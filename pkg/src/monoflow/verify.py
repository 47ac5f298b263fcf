"""Numerical property suites behind ``monoflow verify``.

Each suite returns a list of :class:`Check` records; a check passes when its
measured ``value`` is within ``threshold`` in the direction the check states.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .flow import FlowTrace, run_flow, run_langevin
from .gaussian import MultivariateGaussian, fit_gaussian, make_rng, moment_flow_step, toy_init, toy_target
from .generator import (
    DIVERGENCES,
    GaussianGenerator,
    detached_gradient,
    full_gradient,
    gen_sample,
    mc_cost,
)
from .gaussian import log_density
from .hfunctions import (
    F_KINDS,
    FDivergenceSpec,
    HFunction,
    check_h_f_identity,
    default_r_grid,
    f_eval,
    flow_h,
    flow_rescaling,
    h_eval,
    h_prime,
    monotone_registry,
    reconstruct_f_from_h,
)
from .neural import Mlp
from .ratio import RatioVariant, all_variants, check_condition, lemma_oracle, t_inverse

LEMMA_RATIOS = (0.1, 0.5, 1.0, 2.0, 10.0)
FLOW_U_MAX = 2.0


@dataclass
class Check:
    id: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value"] = float(d["value"])
        d["threshold"] = float(d["threshold"])
        return d

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{tag} {self.id}: {self.value:.3g} vs {self.threshold:.3g}{extra}"


def _below(id_, value, threshold, detail="") -> Check:
    value = float(value)
    return Check(id_, bool(np.isfinite(value) and value <= threshold), value, threshold, detail)


# ---------------------------------------------------------------------------
# lemma: brute-force maximizer vs closed-form inverse bijection


def lemma_variants() -> list[RatioVariant]:
    extra = [RatioVariant(kind, FDivergenceSpec(f)) for kind in ("FGAN", "BGAN")
             for f in F_KINDS if f not in ("KL", "Exp")]
    return all_variants() + extra


def lemma_checks(tol: float = 1e-5) -> list[Check]:
    out = []
    for v in lemma_variants():
        worst = max(abs(lemma_oracle(v, r) - t_inverse(v, r)) for r in LEMMA_RATIOS)
        out.append(_below(f"lemma/{v.name}", worst, tol, "max over r in {0.1,0.5,1,2,10}"))
        out.append(Check(f"lemma/{v.name}/condition{v.condition}", check_condition(v), 1.0, 1.0))
    return out


# ---------------------------------------------------------------------------
# corollary: h -> f reconstruction and the r^2 f'' rescaling


def corollary_checks(tol: float = 1e-3) -> list[Check]:
    out = []
    grid = default_r_grid()
    for h in monotone_registry():
        table = reconstruct_f_from_h(h, grid)
        out.append(_below(f"corollary/{h.name}", check_h_f_identity(h, table), tol))
    table = reconstruct_f_from_h(HFunction("Identity"), grid)
    hand = grid - 1.0 - np.log(grid)
    out.append(_below("corollary/Identity/hand-derived", np.max(np.abs(table.f - hand)), 1e-6, "f(r) = r - 1 - log r"))
    r = np.geomspace(0.05, 20.0, 401)
    for kind in F_KINDS:
        spec = FDivergenceSpec(kind)
        if not spec.strictly_convex:
            continue
        h = flow_h(spec)
        want = np.asarray(flow_rescaling(spec, r))
        got = np.asarray(h_prime(h, np.log(r)))
        out.append(_below(f"corollary/rescaling/{kind}", np.max(np.abs(got - want) / want), 1e-9, f"h = {h.name}"))
    return out


# ---------------------------------------------------------------------------
# dissipation: KL monotonicity and the sign of the dissipation estimate


def kl_increase_after(trace: FlowTrace, burn_in: int = 10) -> float:
    """Largest single-step increase of the recorded KL after ``burn_in`` records."""
    kl = np.asarray(trace.kl[burn_in:])
    return float(np.max(np.diff(kl))) if kl.size > 1 else 0.0


def dissipation_z_max(trace: FlowTrace) -> float:
    """Largest ``dissipation / standard error``; nonpositive rates give values <= 0."""
    d = np.asarray(trace.dissipation)
    se = np.maximum(np.asarray(trace.dissipation_se), 1e-300)
    return float(np.max(d / se))


def oracle_tracking_distance(trace: FlowTrace, p: MultivariateGaussian, dt: float,
                             start: MultivariateGaussian | None = None) -> float:
    """Sup over records of ``sqrt(|dmean|^2 + |dcov|_F^2)`` against the moment ODE.

    The ODE starts from ``start``, by default the moments fitted to the initial
    cloud, and is stepped once per record (so ``record_every`` must be 1).
    """
    q = start or MultivariateGaussian(trace.mean[0], trace.cov[0])
    worst = 0.0
    for k in range(len(trace)):
        gap = np.sum((trace.mean[k] - q.mean) ** 2) + np.sum((trace.cov[k] - q.cov) ** 2)
        worst = max(worst, float(np.sqrt(gap)))
        q = moment_flow_step(p, q, dt)
    return worst


def dissipation_checks(seed: int = 1, steps: int = 5000, particles: int = 4096, alpha: float = 1e-3,
                       u_max: float = FLOW_U_MAX, registry=None) -> list[Check]:
    p, q0 = toy_target(), toy_init()
    out = []
    for h in registry or monotone_registry():
        trace = run_flow(p, q0, h, "moment", alpha, steps, particles, make_rng(seed), u_max=u_max)
        out.append(_below(f"dissipation/{h.name}/kl-monotone", kl_increase_after(trace), 1e-3,
                          "largest KL increase after step 10"))
        out.append(_below(f"dissipation/{h.name}/rate-sign", dissipation_z_max(trace), 3.0,
                          "largest dissipation in standard errors"))
        if h.kind == "Identity":
            out.append(_below("dissipation/Identity/oracle-tracking",
                              oracle_tracking_distance(trace, p, alpha), 0.05))
            out.append(_below("dissipation/Identity/final-kl", trace.kl[-1], 0.02))
    return out


# ---------------------------------------------------------------------------
# gradients: backprop and both generator estimators against finite differences


def rel_error(got, want) -> float:
    got, want = np.ravel(got), np.ravel(want)
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12))


def mlp_fd_errors(seed: int, step: float = 1e-5) -> tuple[float, float]:
    """(param, input) relative errors of backprop vs central differences on a 2-16-16-1 net."""
    rng = make_rng(seed)
    net = Mlp([2, 16, 16, 1], rng=rng)
    # spread the biases so no batch point sits near a kink
    net.set_params([p + (0.1 * rng.standard_normal(p.shape) if p.ndim == 1 else 0.0) for p in net.params])
    x = rng.standard_normal((8, 2))
    up = rng.standard_normal(8)
    grads, gx = net.backward(x, up)

    def total(n, xx):
        return float(up @ n(xx))

    worst = 0.0
    for i, p in enumerate(net.params):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus, minus = net.copy(), net.copy()
            pp, pm = plus.params, minus.params
            pp[i] = pp[i].copy()
            pm[i] = pm[i].copy()
            pp[i][idx] += step
            pm[i][idx] -= step
            plus.set_params(pp)
            minus.set_params(pm)
            fd[idx] = (total(plus, x) - total(minus, x)) / (2 * step)
        worst = max(worst, rel_error(grads[i], fd))
    fdx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        fdx[idx] = (up[idx[0]] * (net(xp[idx[0]]) - net(xm[idx[0]]))) / (2 * step)
    return worst, rel_error(gx, fdx)


def random_generator(rng, d: int = 2) -> GaussianGenerator:
    s = np.eye(d) + 0.3 * rng.standard_normal((d, d))
    return GaussianGenerator(0.5 * rng.standard_normal(d), s)


def _fd_theta(cost, g: GaussianGenerator, step: float):
    theta = np.concatenate([g.mu, g.s.ravel()])
    d = g.dim
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        fd[i] = (cost(GaussianGenerator(tp[:d], tp[d:].reshape(d, d)))
                 - cost(GaussianGenerator(tm[:d], tm[d:].reshape(d, d)))) / (2 * step)
    return fd


def full_fd_error(seed: int, spec: FDivergenceSpec, batch: int = 64, step: float = 1e-6) -> float:
    rng = make_rng(seed)
    g = random_generator(rng)
    z = rng.standard_normal((batch, g.dim))
    p = toy_target()

    def cost(gg):
        # independent route: explicit density of the generator's Gaussian
        x = gen_sample(gg, z)
        u = log_density(p, x) - log_density(gg.gaussian(), x)
        return float(np.mean(f_eval(spec, np.exp(u))))

    return rel_error(full_gradient(g, spec, p, z).flat(), _fd_theta(cost, g, step))


def detached_fd_error(seed: int, rescale, batch: int = 64, step: float = 1e-6) -> float:
    rng = make_rng(seed)
    g = random_generator(rng)
    z = rng.standard_normal((batch, g.dim))
    p = toy_target()
    frozen = g.gaussian()

    def cost(gg):
        x = gen_sample(gg, z)
        u = log_density(p, x) - log_density(frozen, x)
        if isinstance(rescale, HFunction):
            return -float(np.mean(h_eval(rescale, u)))
        return float(np.mean(f_eval(rescale, np.exp(u))))

    return rel_error(detached_gradient(g, rescale, p, z).flat(), _fd_theta(cost, g, step))


def gradient_checks(n_configs: int = 10, tol: float = 1e-3) -> list[Check]:
    out = []
    for seed in range(n_configs):
        ep, ex = mlp_fd_errors(seed)
        out.append(_below(f"gradients/mlp-params/seed{seed}", ep, tol))
        out.append(_below(f"gradients/mlp-inputs/seed{seed}", ex, tol))
        kind = DIVERGENCES[seed % len(DIVERGENCES)]
        spec = FDivergenceSpec(kind)
        out.append(_below(f"gradients/full/{kind}/seed{seed}", full_fd_error(seed, spec), tol))
        out.append(_below(f"gradients/detached/{kind}/seed{seed}", detached_fd_error(seed, spec), tol))
        h = monotone_registry()[seed % len(monotone_registry())]
        out.append(_below(f"gradients/detached/{h.name}/seed{seed}", detached_fd_error(seed, h), tol))
    return out


# ---------------------------------------------------------------------------
# langevin: same marginals as the deterministic KL flow


def langevin_vs_flow(seed: int = 0, dt: float = 1e-3, steps: int = 10_000, flow_particles: int = 4096,
                     langevin_particles: int = 20_000) -> tuple[float, float]:
    """(mean gap, covariance Frobenius gap) between final Langevin and flow moments."""
    p, q0 = toy_target(), toy_init()
    trace = run_flow(p, q0, HFunction("Identity"), "moment", dt, steps, flow_particles,
                     make_rng(seed), record_every=steps)
    cloud = run_langevin(p, q0, dt, steps, langevin_particles, make_rng(seed + 1000))
    fit = fit_gaussian(cloud.positions)
    return (float(np.linalg.norm(fit.mean - trace.mean[-1])),
            float(np.linalg.norm(fit.cov - trace.cov[-1])))


def langevin_checks(seeds=(0, 1), tol: float = 0.05) -> list[Check]:
    out = []
    for seed in seeds:
        dm, dc = langevin_vs_flow(seed)
        out.append(_below(f"langevin/seed{seed}/mean", dm, tol))
        out.append(_below(f"langevin/seed{seed}/cov", dc, tol))
    return out


SUITES = {
    "lemma": lemma_checks,
    "corollary": corollary_checks,
    "dissipation": dissipation_checks,
    "gradients": gradient_checks,
    "langevin": langevin_checks,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES.values() for c in suite()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return SUITES[name]()
