"""Discriminator objectives ``E_p[phi(d)] + E_q[psi(d)]`` whose maximizer is a
bijection ``T^{-1}`` of the density ratio ``r = p/q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .errors import DomainError
from .hfunctions import (
    FDivergenceSpec,
    convex_conjugate,
    f_eval,
    f_prime,
    f_prime_inverse,
    f_second,
)
from .search import bracket_and_maximize

RATIO_KINDS = ("VanillaGAN", "NonSaturatedGAN", "FGAN", "BGAN", "LeastSquares", "GeneralizedEBMKL")
SCAN_LO, SCAN_HI = -30.0, 30.0
_EDGE = 1e-6

# what the maximizing discriminator output equals
D_STAR = {
    "VanillaGAN": "log r",
    "NonSaturatedGAN": "log r",
    "FGAN": "f'(r)",
    "BGAN": "r",
    "LeastSquares": "r/(1+r)",
    "GeneralizedEBMKL": "-log r - lambda",
}


@dataclass(frozen=True)
class RatioVariant:
    kind: str
    f: FDivergenceSpec | None = None
    lam: float = 0.0
    _dom: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in RATIO_KINDS:
            raise ValueError(f"unknown ratio variant {self.kind!r}; choose from {', '.join(RATIO_KINDS)}")
        if self.kind in ("FGAN", "BGAN"):
            if self.f is None:
                object.__setattr__(self, "f", FDivergenceSpec("KL"))
            if not self.f.strictly_convex:
                raise ValueError(f"{self.kind} needs a strictly convex f")
        object.__setattr__(self, "_dom", _domain(self))

    @property
    def name(self) -> str:
        if self.kind in ("FGAN", "BGAN"):
            return f"{self.kind}({self.f.kind})"
        if self.kind == "GeneralizedEBMKL":
            return f"{self.kind}(lambda={self.lam:g})"
        return self.kind

    @property
    def d_star(self) -> str:
        return D_STAR[self.kind]

    @property
    def condition(self) -> int:
        """Which sufficient condition for a unique maximizer the pair satisfies (1 or 2)."""
        return 2 if self.kind == "BGAN" else 1

    @property
    def domain(self) -> tuple[float, float]:
        """Open interval of admissible discriminator outputs."""
        return self._dom

    def phi(self, d):
        return phi_eval(self, d)

    def psi(self, d):
        return psi_eval(self, d)


def _domain(v: RatioVariant) -> tuple[float, float]:
    if v.kind == "BGAN":
        return (0.0, np.inf)
    if v.kind == "FGAN":
        return {
            "KL": (-np.inf, 0.0),
            "ForwardKL": (-np.inf, np.inf),
            "ChiSquare": (-2.0, np.inf),
            "Hellinger": (-np.inf, 1.0),
            "JensenShannon": (-np.inf, float(np.log(2.0))),
        }[v.f.kind]
    return (-np.inf, np.inf)


def all_variants() -> list[RatioVariant]:
    return [
        RatioVariant("VanillaGAN"),
        RatioVariant("NonSaturatedGAN"),
        RatioVariant("FGAN", FDivergenceSpec("KL")),
        RatioVariant("BGAN", FDivergenceSpec("KL")),
        RatioVariant("LeastSquares"),
        RatioVariant("GeneralizedEBMKL", lam=0.0),
    ]


def _in_domain(v: RatioVariant, d):
    d = np.asarray(d, dtype=float)
    lo, hi = v.domain
    bad = ~((d > lo) & (d < hi))
    if np.any(bad):
        idx = int(np.flatnonzero(np.ravel(bad))[0])
        raise DomainError(f"{v.name}: discriminator output {np.ravel(d)[idx]:.6g} at index {idx} is outside {v.domain}")
    return d


def _out(x):
    return x if np.ndim(x) else float(x)


def fgan_conjugate(spec: FDivergenceSpec, d):
    """Vectorized convex conjugate for the strictly convex registry entries."""
    d = np.asarray(d, dtype=float)
    if spec.kind == "ChiSquare":
        return _out(np.where(d >= -2.0, d + 0.25 * d * d, -1.0))
    r = np.asarray(f_prime_inverse(spec, d))
    return _out(r * d - np.asarray(f_eval(spec, r)))


def phi_eval(v: RatioVariant, d):
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = log_expit(d)
    elif k == "FGAN":
        out = d.copy()
    elif k == "BGAN":
        out = np.asarray(f_prime(v.f, d))
    elif k == "LeastSquares":
        out = -(d - 1.0) ** 2
    else:
        out = -(d + v.lam)
    return _out(out)


def psi_eval(v: RatioVariant, d):
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = log_expit(-d)
    elif k == "FGAN":
        out = -np.asarray(fgan_conjugate(v.f, d))
    elif k == "BGAN":
        out = np.asarray(f_eval(v.f, d)) - d * np.asarray(f_prime(v.f, d))
    elif k == "LeastSquares":
        out = -d * d
    else:
        out = -np.exp(-d - v.lam)
    return _out(out)


def phi_prime(v: RatioVariant, d):
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = expit(-d)
    elif k == "FGAN":
        out = np.ones_like(d)
    elif k == "BGAN":
        out = np.asarray(f_second(v.f, d))
    elif k == "LeastSquares":
        out = -2.0 * (d - 1.0)
    else:
        out = -np.ones_like(d)
    return _out(out)


def psi_prime(v: RatioVariant, d):
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = -expit(d)
    elif k == "FGAN":
        out = -np.asarray(f_prime_inverse(v.f, d))
    elif k == "BGAN":
        out = -d * np.asarray(f_second(v.f, d))
    elif k == "LeastSquares":
        out = -2.0 * d
    else:
        out = np.exp(-d - v.lam)
    return _out(out)


def t_map(v: RatioVariant, d):
    """Ratio estimate ``T(d) = -psi'(d) / phi'(d)``."""
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = np.exp(d)
    elif k == "FGAN":
        out = np.asarray(f_prime_inverse(v.f, d))
    elif k == "BGAN":
        out = d.copy()
    elif k == "LeastSquares":
        if np.any(d == 1.0):
            raise DomainError("LeastSquares: T is singular at d = 1")
        out = d / (1.0 - d)
    else:
        out = np.exp(-d - v.lam)
    return _out(out)


def t_inverse(v: RatioVariant, r):
    """Optimal discriminator output for density ratio ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("density ratio must be positive")
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        out = np.log(r)
    elif k == "FGAN":
        out = np.asarray(f_prime(v.f, r))
    elif k == "BGAN":
        out = r.copy()
    elif k == "LeastSquares":
        out = r / (1.0 + r)
    else:
        out = -np.log(r) - v.lam
    return _out(out)


def log_ratio_from_output(v: RatioVariant, d):
    """``(log T(d), d log T / dd)``: turns a discriminator output into a log-ratio."""
    d = _in_domain(v, d)
    k = v.kind
    if k in ("VanillaGAN", "NonSaturatedGAN"):
        u, slope = d.copy(), np.ones_like(d)
    elif k == "FGAN":
        r = np.asarray(f_prime_inverse(v.f, d))
        u, slope = np.log(r), 1.0 / (r * np.asarray(f_second(v.f, r)))
    elif k == "BGAN":
        u, slope = np.log(d), 1.0 / d
    elif k == "LeastSquares":
        if np.any((d <= 0) | (d >= 1)):
            raise DomainError("LeastSquares output must lie in (0, 1) to be read as a ratio")
        u, slope = np.log(d) - np.log1p(-d), 1.0 / d + 1.0 / (1.0 - d)
    else:
        u, slope = -d - v.lam, -np.ones_like(d)
    return _out(u), _out(slope)


def pointwise_objective(v: RatioVariant, r: float, d):
    """``r phi(d) + psi(d)``: the objective conditional on a single x."""
    return r * phi_eval(v, d) + psi_eval(v, d)


def scan_range(v: RatioVariant) -> tuple[float, float]:
    lo, hi = v.domain
    lo = SCAN_LO if lo == -np.inf else lo + _EDGE
    hi = SCAN_HI if hi == np.inf else hi - _EDGE
    return max(lo, SCAN_LO), min(hi, SCAN_HI)


def lemma_oracle(v: RatioVariant, r: float, tol: float = 1e-7) -> float:
    """Brute-force argmax over d of ``r phi(d) + psi(d)``.

    Grid-scans the variant's domain clipped to [-30, 30] and polishes with
    golden-section search.
    """
    if not r > 0:
        raise DomainError("density ratio must be positive")
    lo, hi = scan_range(v)
    return bracket_and_maximize(lambda d: pointwise_objective(v, r, d), lo, hi, tol=tol)


def mc_objective(v: RatioVariant, d_fn, samples_p, samples_q, return_se: bool = False):
    """Monte Carlo ``mean phi(d(x_p)) + mean psi(d(x_q))``."""
    sp, sq = np.atleast_2d(samples_p), np.atleast_2d(samples_q)
    if len(sp) == 0 or len(sq) == 0:
        raise ValueError("both sample sets must be nonempty")
    a = np.asarray(phi_eval(v, d_fn(sp)), dtype=float)
    b = np.asarray(psi_eval(v, d_fn(sq)), dtype=float)
    val = float(a.mean() + b.mean())
    if not return_se:
        return val
    se = float(np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)) if min(a.size, b.size) > 1 else np.inf
    return val, se


def fenchel_lower_bound(spec: FDivergenceSpec, d_fn, samples_p, samples_q, return_se: bool = False):
    """``E_p[d(x)] - E_q[conj_f(d(x))]``; tight at ``d = f'(p/q)``."""
    return mc_objective(RatioVariant("FGAN", spec), d_fn, samples_p, samples_q, return_se=return_se)


def check_condition(v: RatioVariant, n: int = 2001) -> bool:
    """Numerically verify the sufficient condition the variant claims, on a d-grid."""
    lo, hi = scan_range(v)
    # tails of the logistic terms are flat to rounding; check the informative range
    lo, hi = max(lo, -10.0), min(hi, 10.0)
    if v.kind == "BGAN":
        lo, hi = max(lo, 0.05), min(hi, 20.0)
    d = np.linspace(lo, hi, n)
    step = d[1] - d[0]
    if v.condition == 1:
        phi, psi = np.asarray(phi_eval(v, d)), np.asarray(psi_eval(v, d))
        d2phi = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / step**2
        d2psi = (psi[2:] - 2 * psi[1:-1] + psi[:-2]) / step**2
        scale = 1e-8 * max(1.0, float(np.max(np.abs(phi))))
        return bool(np.all(d2phi <= scale) and np.all(d2psi < 0))
    t = np.asarray(t_map(v, d))
    return bool(np.all(np.asarray(phi_prime(v, d)) > 0) and np.all(np.diff(t) > 0))


__all__ = [
    "RatioVariant", "all_variants", "phi_eval", "psi_eval", "phi_prime", "psi_prime",
    "t_map", "t_inverse", "lemma_oracle", "mc_objective", "fenchel_lower_bound",
    "log_ratio_from_output", "check_condition", "convex_conjugate", "pointwise_objective",
]
