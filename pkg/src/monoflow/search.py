"""Derivative-free scalar maximization used as a brute-force oracle."""
from __future__ import annotations

import math

import numpy as np

from .errors import NoInteriorMaximum

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(fn, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Argmax of a unimodal ``fn`` on ``[lo, hi]`` to absolute tolerance ``tol``."""
    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def bracket_and_maximize(fn, lo: float, hi: float, n_scan: int = 6001, tol: float = 1e-9) -> float:
    """Grid-scan ``fn`` on ``[lo, hi]``, then golden-section inside the best cell.

    ``fn`` must accept an array. Raises NoInteriorMaximum if the scan peaks at
    either end of the range.
    """
    grid = np.linspace(lo, hi, n_scan)
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(grid), dtype=float)
    vals[~np.isfinite(vals)] = -np.inf
    i = int(np.argmax(vals))
    if i == 0 or i == n_scan - 1:
        raise NoInteriorMaximum(f"maximum on the boundary of [{lo}, {hi}]")
    return golden_section_max(fn, grid[i - 1], grid[i + 1], tol=tol)
