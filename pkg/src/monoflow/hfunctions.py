"""Monotone rescalings ``h(u)`` of the log density ratio ``u = log r``, the
f-divergence generators they pair with, and numerical h -> f reconstruction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import DomainError, NotMonotone, NumericOverflow, Unbounded
from .search import golden_section_max

U_LIMIT = 500.0
LOG2 = float(np.log(2.0))

H_KINDS = (
    "Identity", "ForwardKL", "ChiSquare", "Hellinger", "JensenShannon", "Exp15",
    "Vanilla", "NonSaturated", "MLE", "Logit", "Arcsinh", "ShiftedVanilla",
    "ChiSquareFlow", "HellingerFlow",
)
NON_MONOTONE = frozenset({"ForwardKL", "ChiSquare", "Hellinger", "JensenShannon"})
# the five losses compared for gradient vanishing
GENERATOR_LOSSES = ("Vanilla", "NonSaturated", "MLE", "Logit", "Arcsinh")


@dataclass(frozen=True)
class HFunction:
    kind: str
    C: float = 0.0

    def __post_init__(self):
        if self.kind not in H_KINDS:
            raise ValueError(f"unknown h kind {self.kind!r}; choose from {', '.join(H_KINDS)}")

    @property
    def monotone(self) -> bool:
        return self.kind not in NON_MONOTONE

    @property
    def name(self) -> str:
        return f"ShiftedVanilla(C={self.C:g})" if self.kind == "ShiftedVanilla" else self.kind

    def __call__(self, u):
        return h_eval(self, u)

    def prime(self, u):
        return h_prime(self, u)


def parse_h(name: str) -> HFunction:
    """``"Vanilla"`` or ``"ShiftedVanilla(3)"`` / ``"ShiftedVanilla(C=3)"``."""
    name = name.strip()
    if name.startswith("ShiftedVanilla"):
        rest = name[len("ShiftedVanilla"):].strip()
        if not rest:
            return HFunction("ShiftedVanilla", 0.0)
        if not (rest.startswith("(") and rest.endswith(")")):
            raise ValueError(f"cannot parse h {name!r}")
        arg = rest[1:-1].split("=")[-1]
        return HFunction("ShiftedVanilla", float(arg))
    return HFunction(name)


def monotone_registry() -> list[HFunction]:
    """One instance of every monotone variant (ShiftedVanilla at C = 0, 1, 3, 5)."""
    out = [HFunction(k) for k in H_KINDS if k not in NON_MONOTONE and k != "ShiftedVanilla"]
    out += [HFunction("ShiftedVanilla", c) for c in (0.0, 1.0, 3.0, 5.0)]
    return out


def _softplus(u):
    return np.logaddexp(0.0, u)


def _checked(u):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(np.abs(u) > U_LIMIT):
        raise NumericOverflow(f"log-ratio outside [-{U_LIMIT:g}, {U_LIMIT:g}]; clip before evaluating h")
    return u


def _finish(out):
    if np.any(~np.isfinite(out)):
        raise NumericOverflow("h evaluation overflowed")
    return out if np.ndim(out) else float(out)


def h_eval(h: HFunction, u):
    u = _checked(u)
    k = h.kind
    with np.errstate(over="ignore", invalid="ignore"):
        if k in ("Identity", "Logit"):
            out = u.copy()
        elif k == "ForwardKL":
            out = -u * np.exp(u)
        elif k == "ChiSquare":
            out = -np.expm1(u) ** 2
        elif k == "Hellinger":
            out = -np.expm1(0.5 * u) ** 2
        elif k == "JensenShannon":
            sp = _softplus(u)
            out = -np.exp(u) * (LOG2 + u - sp) - (LOG2 - sp)
        elif k == "Exp15":
            out = np.exp(1.5 * u)
        elif k == "Vanilla":
            out = _softplus(u)
        elif k == "NonSaturated":
            out = -_softplus(-u)
        elif k == "MLE":
            out = np.exp(u)
        elif k == "Arcsinh":
            out = np.arcsinh(u)
        elif k == "ShiftedVanilla":
            out = _softplus(u + h.C)
        elif k == "ChiSquareFlow":
            out = np.expm1(2.0 * u)
        elif k == "HellingerFlow":
            out = np.expm1(0.5 * u)
    return _finish(out)


def h_prime(h: HFunction, u):
    u = _checked(u)
    k = h.kind
    with np.errstate(over="ignore", invalid="ignore"):
        if k in ("Identity", "Logit"):
            out = np.ones_like(u)
        elif k == "ForwardKL":
            out = -np.exp(u) * (1.0 + u)
        elif k == "ChiSquare":
            out = -2.0 * np.expm1(u) * np.exp(u)
        elif k == "Hellinger":
            out = -np.expm1(0.5 * u) * np.exp(0.5 * u)
        elif k == "JensenShannon":
            out = -np.exp(u) * (LOG2 + u - _softplus(u))
        elif k == "Exp15":
            out = 1.5 * np.exp(1.5 * u)
        elif k == "Vanilla":
            out = expit(u)
        elif k == "NonSaturated":
            out = expit(-u)
        elif k == "MLE":
            out = np.exp(u)
        elif k == "Arcsinh":
            out = 1.0 / np.sqrt(1.0 + u * u)
        elif k == "ShiftedVanilla":
            out = expit(u + h.C)
        elif k == "ChiSquareFlow":
            out = 2.0 * np.exp(2.0 * u)
        elif k == "HellingerFlow":
            out = 0.5 * np.exp(0.5 * u)
    return _finish(out)


# ---------------------------------------------------------------------------
# f-divergence generators

F_KINDS = ("KL", "ForwardKL", "ChiSquare", "Hellinger", "JensenShannon", "Exp")


@dataclass(frozen=True)
class FDivergenceSpec:
    """Generator ``f`` of ``D_f(p||q) = E_q[f(p/q)]``.

    ``Exp`` is ``f(r) = -r**1.5`` exactly as tabulated; it is concave and has
    ``f(1) = -1``, so it is not a divergence and is kept only as a negative case.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in F_KINDS:
            raise ValueError(f"unknown divergence {self.kind!r}; choose from {', '.join(F_KINDS)}")

    @property
    def strictly_convex(self) -> bool:
        return self.kind != "Exp"

    def f(self, r):
        return f_eval(self, r)

    def f_prime(self, r):
        return f_prime(self, r)

    def f_second(self, r):
        return f_second(self, r)


def _positive(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("f is defined for r > 0 only")
    return r


def _out(x):
    return x if np.ndim(x) else float(x)


def f_eval(spec: FDivergenceSpec, r):
    r = _positive(r)
    k = spec.kind
    if k == "KL":
        out = -np.log(r)
    elif k == "ForwardKL":
        out = r * np.log(r)
    elif k == "ChiSquare":
        out = (r - 1.0) ** 2
    elif k == "Hellinger":
        out = (np.sqrt(r) - 1.0) ** 2
    elif k == "JensenShannon":
        out = r * np.log(2.0 * r / (1.0 + r)) + np.log(2.0 / (1.0 + r))
    else:
        out = -r ** 1.5
    return _out(out)


def f_prime(spec: FDivergenceSpec, r):
    r = _positive(r)
    k = spec.kind
    if k == "KL":
        out = -1.0 / r
    elif k == "ForwardKL":
        out = np.log(r) + 1.0
    elif k == "ChiSquare":
        out = 2.0 * (r - 1.0)
    elif k == "Hellinger":
        out = 1.0 - 1.0 / np.sqrt(r)
    elif k == "JensenShannon":
        out = np.log(2.0 * r / (1.0 + r))
    else:
        out = -1.5 * np.sqrt(r)
    return _out(out)


def f_second(spec: FDivergenceSpec, r):
    r = _positive(r)
    k = spec.kind
    if k == "KL":
        out = 1.0 / r ** 2
    elif k == "ForwardKL":
        out = 1.0 / r
    elif k == "ChiSquare":
        out = 2.0 * np.ones_like(r)
    elif k == "Hellinger":
        out = 0.5 * r ** -1.5
    elif k == "JensenShannon":
        out = 1.0 / (r * (1.0 + r))
    else:
        out = -0.75 / np.sqrt(r)
    return _out(out)


def loss_h(spec: FDivergenceSpec) -> HFunction:
    """The h with ``h(log r) = -f(r)``, used as a generator loss."""
    return HFunction({"KL": "Identity", "Exp": "Exp15"}.get(spec.kind, spec.kind))


def flow_h(spec: FDivergenceSpec) -> HFunction:
    """The h with ``h(log r) = r f'(r) - f(r)`` up to a constant, so that
    ``h'(log r) = r**2 f''(r)``: the rescaling of the f-divergence gradient flow."""
    table = {
        "KL": "Identity",
        "ForwardKL": "MLE",
        "ChiSquare": "ChiSquareFlow",
        "Hellinger": "HellingerFlow",
        "JensenShannon": "Vanilla",
    }
    if spec.kind not in table:
        raise NotMonotone(f"{spec.kind} has f'' < 0; no monotone flow rescaling")
    return HFunction(table[spec.kind])


def flow_rescaling(spec: FDivergenceSpec, r):
    """``r**2 f''(r)``."""
    r = _positive(r)
    return _out(r * r * np.asarray(f_second(spec, r)))


# ---------------------------------------------------------------------------
# h -> f reconstruction


@dataclass(frozen=True)
class FTable:
    r: np.ndarray
    f: np.ndarray
    f_prime: np.ndarray


def default_r_grid(r_min: float = 0.02, r_max: float = 50.0, n: int = 100_001) -> np.ndarray:
    """Geometric grid on ``[r_min, r_max]`` that contains 1 exactly."""
    lo, hi = np.log(r_min), np.log(r_max)
    step = (hi - lo) / (n - 1)
    n_lo = max(int(round(-lo / step)), 1)
    n_hi = max(int(round(hi / step)), 1)
    u = np.concatenate([np.linspace(lo, 0.0, n_lo + 1)[:-1], np.linspace(0.0, hi, n_hi + 1)])
    return np.exp(u)


def _cumtrapz_from(x, y, i0):
    """Trapezoid integral of y dx from x[i0] to every x[i]."""
    seg = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
    c = np.concatenate([[0.0], np.cumsum(seg)])
    return c - c[i0]


def reconstruct_f_from_h(h: HFunction, r_grid=None) -> FTable:
    """Tabulate the convex f with ``r f'(r) - f(r) = h(log r)``.

    Integrates ``f''(r) = h'(log r) / r**2`` twice with ``f'(1) = h(0)`` and
    ``f(1) = 0``. The integrals are taken in ``u = log r`` so a geometric grid
    is uniform.
    """
    r = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size < 3 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be ascending positive values")
    hits = np.flatnonzero(np.isclose(r, 1.0, rtol=0, atol=1e-12))
    if hits.size == 0:
        raise ValueError("r_grid must contain 1")
    i0 = int(hits[0])
    u = np.log(r)
    hp = np.asarray(h_prime(h, u))
    if np.any(hp <= 0):
        bad = u[np.argmax(hp <= 0)]
        raise NotMonotone(f"{h.name}: h'(u) <= 0 at u = {bad:.4g}")
    # f'(e^u) = h(0) + int_0^u h'(v) e^{-v} dv ;  f(e^u) = int_0^u f'(e^v) e^v dv
    fp = float(h_eval(h, 0.0)) + _cumtrapz_from(u, hp * np.exp(-u), i0)
    f = _cumtrapz_from(u, fp * r, i0)
    return FTable(r=r, f=f, f_prime=fp)


def check_h_f_identity(h: HFunction, table: FTable) -> float:
    """Max over the grid of ``|r f'(r) - f(r) - h(log r)|``."""
    lhs = table.r * table.f_prime - table.f
    return float(np.max(np.abs(lhs - h_eval(h, np.log(table.r)))))


# ---------------------------------------------------------------------------
# convex conjugate

CONJ_R_MIN, CONJ_R_MAX = 1e-6, 1e3


def conjugate_grid(spec: FDivergenceSpec, d: float, n: int = 200_001) -> tuple[float, float]:
    """Brute-force ``(max, argmax)`` of ``r d - f(r)`` over a geometric grid in (1e-6, 1e3)."""
    r = np.geomspace(CONJ_R_MIN, CONJ_R_MAX, n)
    vals = r * d - f_eval(spec, r)
    i = int(np.argmax(vals))
    # golden refinement between grid neighbours
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, n - 1)]
    if 0 < i < n - 1:
        rs = golden_section_max(lambda x: x * d - f_eval(spec, x), lo, hi, tol=1e-12)
        return float(rs * d - f_eval(spec, rs)), float(rs)
    return float(vals[i]), float(r[i])


def f_prime_inverse(spec: FDivergenceSpec, d):
    """The ``r`` solving ``f'(r) = d`` (the derivative of the conjugate at ``d``)."""
    d = np.asarray(d, dtype=float)
    k = spec.kind
    with np.errstate(divide="ignore", invalid="ignore"):
        if k == "KL":
            ok = d < 0
            out = -1.0 / d
        elif k == "ForwardKL":
            ok = np.isfinite(d)
            out = np.exp(d - 1.0)
        elif k == "ChiSquare":
            ok = d > -2.0
            out = 1.0 + 0.5 * d
        elif k == "Hellinger":
            ok = d < 1.0
            out = (1.0 - d) ** -2
        elif k == "JensenShannon":
            ok = d < LOG2
            out = np.exp(d) / (2.0 - np.exp(d))
        else:
            raise Unbounded("f is concave; f' is not invertible onto a maximizer")
    if np.any(~ok):
        raise DomainError(f"{spec.kind}: d outside the range of f'")
    return _out(out)


def _solve_stationary(spec: FDivergenceSpec, d: float):
    g = lambda r: f_prime(spec, r) - d  # noqa: E731
    lo, hi = 1e-12, 1e12
    glo, ghi = g(lo), g(hi)
    if glo > 0:
        return None  # maximizer pinned at r -> 0
    if ghi < 0:
        raise Unbounded(f"{spec.kind}: sup of r*d - f(r) diverges at d = {d}")
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)


def convex_conjugate(spec: FDivergenceSpec, d: float) -> float:
    """``sup_{r > 0} r d - f(r)``."""
    d = float(d)
    k = spec.kind
    if k == "KL":
        if d >= 0:
            raise Unbounded("KL: conjugate is finite only for d < 0")
        return -1.0 - np.log(-d)
    if k == "ChiSquare":
        return d + 0.25 * d * d if d >= -2.0 else -1.0
    if spec.strictly_convex:
        r = _solve_stationary(spec, d)
        if r is None:
            return float(-f_eval(spec, CONJ_R_MIN * 1e-6))
        return float(r * d - f_eval(spec, r))
    val, arg = conjugate_grid(spec, d)
    if arg >= CONJ_R_MAX * (1 - 1e-9):
        raise Unbounded(f"{k}: sup of r*d - f(r) reaches the search boundary at d = {d}")
    return val
