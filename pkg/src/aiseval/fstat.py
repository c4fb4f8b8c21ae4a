"""F-distribution critical values for confidence regions.

The quantile is obtained by inverting the regularized incomplete beta
representation of the F CDF with bracketing plus bisection, which is robust
for every (d1, d2) this package produces and has no dependency on the less
portable inverse-beta routines.
"""
from __future__ import annotations

import math

from scipy.special import betainc

__all__ = ["f_cdf", "f_critical"]


def f_cdf(x: float, d1: float, d2: float) -> float:
    """P(F <= x) for an F(d1, d2) variable."""
    if x <= 0.0:
        return 0.0
    z = d1 * x / (d1 * x + d2)
    return float(betainc(0.5 * d1, 0.5 * d2, z))


def f_critical(alpha: float, d1: float, d2: float, tol: float = 1e-10) -> float:
    """Upper-tail critical value: the x with P(F > x) = alpha.

    alpha=1 gives 0 (the region collapses to a point) and alpha=0 gives +inf.
    Solved by expanding an upper bracket, then bisecting to ``tol``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"significance level must be in [0, 1], got {alpha}")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if alpha >= 1.0:
        return 0.0
    if alpha <= 0.0:
        return math.inf

    target = 1.0 - alpha
    lo, hi = 0.0, 1.0
    while f_cdf(hi, d1, d2) < target:
        lo = hi
        hi *= 2.0
        if hi > 1e300:  # pragma: no cover - unreachable for sane alpha
            return math.inf
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, d1, d2) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
