"""Scalar numeric kernels behind the Gaussian conditioning machinery.

Everything here is written against plain ``math`` so the same bodies can be
compiled with numba. By default the kernels are jitted; setting the
environment variable ``BOUNDSELECT_NO_NUMBA=1`` (or a failed numba import)
selects the pure-Python/numpy fallback path. ``USING_NUMBA`` records which
path is active; ``benchmarks/bench_kernels.py`` compares the two.

Solver status codes (see ``SOLVE_OK`` etc.): kernels return codes instead of
raising so they stay nopython-compatible; the wrappers in ``gauss`` raise.
"""

from __future__ import annotations

import math
import os

SOLVE_OK = 0
SOLVE_BRACKET_LOW = 1   # target unreachable within t - 60 sd (mu diverges down)
SOLVE_BRACKET_HIGH = 4  # target unreachable within t + 60 sd (mu diverges up)
SOLVE_DEGENERATE = 2
SOLVE_NO_CONVERGE = 3

# bisection bracket schedule, in units of sigma
_BRACKET_START = 10.0
_BRACKET_MAX = 60.0
_MAX_BISECT = 300


def _ndtr(z: float) -> float:
    """Standard normal CDF via erfc, accurate in both tails down to ~1e-308."""
    x = z / math.sqrt(2.0)
    if abs(x) < 0.7071067811865476:
        return 0.5 + 0.5 * math.erf(x)
    y = 0.5 * math.erfc(abs(x))
    if x > 0.0:
        y = 1.0 - y
    return y


def _ndtr_upper(z: float) -> float:
    """Upper tail P(Z > z), accurate in relative terms for z >= 0."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _ndtr_diff(a: float, b: float) -> float:
    """P(a < Z <= b) without cancellation: worked on the complementary side
    when the interval sits in the upper tail (the lower-tail CDF is already
    relative-accurate through erfc)."""
    if a >= 0.0:
        return _ndtr_upper(a) - _ndtr_upper(b)
    return _ndtr(b) - _ndtr(a)


def _log_ndtr(z: float) -> float:
    """log of the standard normal CDF, finite for z down to about -1e4."""
    if z > 6.0:
        # log(1 - Q) with Q < 1e-9
        return math.log1p(-_ndtr(-z))
    if z > -20.0:
        return math.log(_ndtr(z))
    # asymptotic expansion of Mills ratio for the deep lower tail
    lead = -0.5 * z * z - math.log(-z) - 0.5 * math.log(2.0 * math.pi)
    series = 1.0
    term = 1.0
    zsq_inv = 1.0 / (z * z)
    sign = 1.0
    num = 1.0
    for i in range(1, 40):
        sign = -sign
        num *= 2.0 * i - 1.0
        term *= zsq_inv
        delta = sign * num * term
        new_series = series + delta
        if new_series == series:
            break
        series = new_series
    return lead + math.log(series)


def tn_cdf_raw(t: float, mu: float, sd: float, lo: float, hi: float) -> float:
    """CDF at ``t`` of N(mu, sd^2) truncated to [lo, hi].

    Returns NaN when the window mass underflows (caller raises). ``t`` at or
    beyond the window edges maps to exactly 0 or 1.
    """
    if t >= hi:
        return 1.0
    if t <= lo:
        return 0.0
    z_t = (t - mu) / sd
    z_lo = (lo - mu) / sd if lo > -math.inf else -math.inf
    z_hi = (hi - mu) / sd if hi < math.inf else math.inf

    if z_lo > 6.0:
        # whole window in the upper tail: work with log survival functions
        lq_lo = _log_ndtr(-z_lo)
        lq_t = _log_ndtr(-z_t)
        lq_hi = _log_ndtr(-z_hi) if z_hi < math.inf else -math.inf
        num = -math.expm1(lq_t - lq_lo)
        den = -math.expm1(lq_hi - lq_lo)
    elif z_hi < -6.0:
        # whole window in the lower tail: log CDFs
        lp_hi = _log_ndtr(z_hi)
        lp_t = _log_ndtr(z_t)
        lp_lo = _log_ndtr(z_lo) if z_lo > -math.inf else -math.inf
        e_lo = math.expm1(lp_lo - lp_hi)
        num = math.expm1(lp_t - lp_hi) - e_lo
        den = -e_lo
    else:
        num = _ndtr_diff(z_lo, z_t)
        den = _ndtr_diff(z_lo, z_hi)

    if not den > 0.0:
        return math.nan
    f = num / den
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    return f


def _hybrid_cdf(
    t: float, mu: float, sd: float, lo: float, hi: float, offset: float, side_lower: bool
) -> float:
    """tn_cdf with the mu-dependent window edge used by the hybrid solve."""
    if side_lower:
        hi_eff = mu + offset
        if hi > -math.inf and hi < hi_eff:
            hi_eff = hi
        if t >= hi_eff:
            return 1.0
        return tn_cdf_raw(t, mu, sd, lo, hi_eff)
    lo_eff = mu - offset
    if lo > lo_eff:
        lo_eff = lo
    if t <= lo_eff:
        return 0.0
    return tn_cdf_raw(t, mu, sd, lo_eff, hi)


def _solve_monotone(
    t: float,
    target: float,
    sd: float,
    lo: float,
    hi: float,
    offset: float,
    side_lower: bool,
    hybrid: bool,
    tol: float,
):
    """Bisection in mu for F(mu) = target, F strictly decreasing in mu.

    Returns (mu, n_evals, status). The bracket starts at t +- 10 sd and the
    half-width doubles up to 60 sd before giving up.
    """
    w = _BRACKET_START * sd
    a = t - w
    b = t + w
    if hybrid:
        fa = _hybrid_cdf(t, a, sd, lo, hi, offset, side_lower)
        fb = _hybrid_cdf(t, b, sd, lo, hi, offset, side_lower)
    else:
        fa = tn_cdf_raw(t, a, sd, lo, hi)
        fb = tn_cdf_raw(t, b, sd, lo, hi)
    evals = 2
    if math.isnan(fa) or math.isnan(fb):
        return math.nan, evals, SOLVE_DEGENERATE
    while fa < target or fb > target:
        if w >= _BRACKET_MAX * sd:
            return math.nan, evals, (SOLVE_BRACKET_LOW if fa < target else SOLVE_BRACKET_HIGH)
        w = min(w * 2.0, _BRACKET_MAX * sd)
        if fa < target:
            a = t - w
            fa = (
                _hybrid_cdf(t, a, sd, lo, hi, offset, side_lower)
                if hybrid
                else tn_cdf_raw(t, a, sd, lo, hi)
            )
            evals += 1
            if math.isnan(fa):
                return math.nan, evals, SOLVE_DEGENERATE
        if fb > target:
            b = t + w
            fb = (
                _hybrid_cdf(t, b, sd, lo, hi, offset, side_lower)
                if hybrid
                else tn_cdf_raw(t, b, sd, lo, hi)
            )
            evals += 1
            if math.isnan(fb):
                return math.nan, evals, SOLVE_DEGENERATE

    mid = 0.5 * (a + b)
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (a + b)
        fm = (
            _hybrid_cdf(t, mid, sd, lo, hi, offset, side_lower)
            if hybrid
            else tn_cdf_raw(t, mid, sd, lo, hi)
        )
        evals += 1
        if math.isnan(fm):
            return math.nan, evals, SOLVE_DEGENERATE
        if abs(fm - target) <= tol:
            return mid, evals, SOLVE_OK
        if fm > target:
            a = mid
        else:
            b = mid
        if b - a <= 1e-15 * sd:
            break
    return mid, evals, SOLVE_NO_CONVERGE


def solve_location_raw(t, target, sd, lo, hi, tol):
    return _solve_monotone(t, target, sd, lo, hi, math.inf, True, False, tol)


def solve_location_hybrid_raw(t, target, sd, lo, hi, offset, side_lower, tol):
    return _solve_monotone(t, target, sd, lo, hi, offset, side_lower, True, tol)


def window_scan(a, r, tau):
    """Truncation window from row coefficients a and slacks r.

    v_minus = max over a_k < -tau of r_k/a_k, v_plus = min over a_k > tau,
    v_zero = min slack over |a_k| <= tau; empty categories give infinities.
    """
    v_minus = -math.inf
    v_plus = math.inf
    v_zero = math.inf
    for k in range(a.shape[0]):
        ak = a[k]
        if ak < -tau:
            q = r[k] / ak
            if q > v_minus:
                v_minus = q
        elif ak > tau:
            q = r[k] / ak
            if q < v_plus:
                v_plus = q
        else:
            if r[k] < v_zero:
                v_zero = r[k]
    return v_minus, v_plus, v_zero


def _env_disables_numba() -> bool:
    return os.environ.get("BOUNDSELECT_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


USING_NUMBA = False
if not _env_disables_numba():
    try:
        from numba import njit

        _jit = njit(cache=True)
        # rebind callees first so callers compile against the jitted versions
        _ndtr = _jit(_ndtr)
        _ndtr_upper = _jit(_ndtr_upper)
        _ndtr_diff = _jit(_ndtr_diff)
        _log_ndtr = _jit(_log_ndtr)
        tn_cdf_raw = _jit(tn_cdf_raw)
        _hybrid_cdf = _jit(_hybrid_cdf)
        _solve_monotone = _jit(_solve_monotone)
        solve_location_raw = _jit(solve_location_raw)
        solve_location_hybrid_raw = _jit(solve_location_hybrid_raw)
        window_scan = _jit(window_scan)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False
