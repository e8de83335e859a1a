"""Scalar truncated-Gaussian kernel and quantile-unbiased location solvers.

All quantities live on the sqrt(n) scale of the studied bound statistic.
The location solvers exploit that the truncated-normal CDF at a fixed point
is strictly decreasing in the location parameter, so monotone bisection on
an expanding bracket is exact and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BracketError, NumericalError, TruncationMassError, ValidationError

SOLVE_TOL = 1e-8


@dataclass(frozen=True)
class TruncatedNormal:
    """N(mu, sigma2) truncated to [lower, upper]; bounds may be infinite."""

    mu: float
    sigma2: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not (self.sigma2 > 0.0 and math.isfinite(self.sigma2)):
            raise ValidationError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if not self.lower < self.upper:
            raise ValidationError(
                f"truncation window is empty: [{self.lower}, {self.upper}]"
            )

    @property
    def sd(self) -> float:
        return math.sqrt(self.sigma2)


def tn_cdf(t: float, tn: TruncatedNormal) -> float:
    """CDF of ``tn`` at ``t``; ``t`` outside the window clamps to 0 or 1."""
    f = _kernels.tn_cdf_raw(float(t), tn.mu, tn.sd, tn.lower, tn.upper)
    if math.isnan(f):
        raise TruncationMassError(
            f"window [{tn.lower}, {tn.upper}] has no mass under "
            f"N({tn.mu}, {tn.sigma2})"
        )
    return f


def solve_location(
    t: float, target: float, sigma2: float, lower: float, upper: float
) -> float:
    """Location mu with tn_cdf(t; mu, sigma2, lower, upper) = target.

    target must be in (0, 1) and t strictly inside the window, otherwise no
    finite solution exists.
    """
    _check_solve_args(t, target, sigma2, lower, upper)
    sd = math.sqrt(sigma2)
    mu, _, status = _kernels.solve_location_raw(
        float(t), float(target), sd, float(lower), float(upper), SOLVE_TOL
    )
    _raise_on_status(status, t, lower, upper)
    return mu


def solve_location_hybrid(
    t: float,
    target: float,
    sigma2: float,
    v_minus: float,
    v_plus: float,
    offset: float,
    side: str,
) -> float:
    """Location solve where one window edge moves with mu.

    side="lower" solves F(t; mu, sigma2, v_minus, min(v_plus, mu + offset)),
    side="upper" uses max(v_minus, mu - offset) as the lower edge. The
    mu-dependent edge preserves monotonicity in mu, so the same bisection
    applies. ``offset`` is the scaled simultaneous critical value and must be
    nonnegative (infinite offset recovers the plain solve).
    """
    if side not in ("lower", "upper"):
        raise ValidationError(f"side must be 'lower' or 'upper', got {side!r}")
    if not offset >= 0.0:
        raise ValidationError(f"offset must be nonnegative, got {offset}")
    _check_solve_args(t, target, sigma2, v_minus, v_plus)
    sd = math.sqrt(sigma2)
    mu, _, status = _kernels.solve_location_hybrid_raw(
        float(t),
        float(target),
        sd,
        float(v_minus),
        float(v_plus),
        float(offset),
        side == "lower",
        SOLVE_TOL,
    )
    _raise_on_status(status, t, v_minus, v_plus)
    return mu


def _check_solve_args(t, target, sigma2, lower, upper):
    if not 0.0 < target < 1.0:
        raise ValidationError(f"target must be in (0, 1), got {target}")
    if not (sigma2 > 0.0 and math.isfinite(sigma2)):
        raise ValidationError(f"sigma2 must be positive and finite, got {sigma2}")
    if not lower < upper:
        raise ValidationError(f"truncation window is empty: [{lower}, {upper}]")
    if not lower < t < upper:
        raise BracketError(
            f"statistic {t} is not interior to the window [{lower}, {upper}]"
        )


def _raise_on_status(status, t, lower, upper):
    if status == _kernels.SOLVE_OK:
        return
    if status in (_kernels.SOLVE_BRACKET_LOW, _kernels.SOLVE_BRACKET_HIGH):
        raise BracketError(
            f"bracket expansion exhausted at t={t}, window [{lower}, {upper}]"
        )
    if status == _kernels.SOLVE_DEGENERATE:
        raise TruncationMassError(
            f"window [{lower}, {upper}] lost all mass during the solve at t={t}"
        )
    raise NumericalError(
        f"bisection failed to reach tolerance at t={t}, window [{lower}, {upper}]"
    )


def max_gauss_quantile(
    cov: np.ndarray,
    level: float,
    draws: int = 100_000,
    seed: int | None = None,
) -> float:
    """Monte Carlo quantile of the studentized max of a centered Gaussian.

    Draws zeta ~ N(0, cov) through a symmetric eigenvalue square root and
    returns the order statistic ceil(level * draws) of max_i zeta_i /
    sqrt(cov_ii). The statistic is computed on the correlation scale, so
    positive rescalings of ``cov`` cannot change the result for a fixed seed.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    stats = max_gauss_sample(corr_root(cov), draws, seed)
    return float(order_statistic(stats, level))


def corr_root(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of the correlation matrix of ``cov``.

    Tiny negative eigenvalues from rank-deficient inputs are clipped; a
    violation beyond -1e-8 * trace is a validation error.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"cov must be square, got shape {cov.shape}")
    diag = np.diag(cov)
    if np.any(diag <= 0.0):
        raise ValidationError("cov has nonpositive diagonal entries")
    scale = np.sqrt(diag)
    corr = cov / np.outer(scale, scale)
    eigval, eigvec = np.linalg.eigh(corr)
    if eigval[0] < -1e-8 * np.trace(corr):
        raise ValidationError(
            f"cov is not positive semidefinite: min eigenvalue {eigval[0]:.3e}"
        )
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def max_gauss_sample(root: np.ndarray, draws: int, seed) -> np.ndarray:
    """Sorted sample of the studentized max statistic for a correlation root."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = root.shape[0]
    stats = np.empty(draws)
    # chunked so memory stays flat for large draw counts
    chunk = 1 << 16
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        x = rng.standard_normal((stop - start, k))
        stats[start:stop] = (x @ root.T).max(axis=1)
    stats.sort()
    return stats


def order_statistic(sorted_stats: np.ndarray, level: float) -> float:
    """Empirical level-quantile as the ceil(level * n)-th order statistic."""
    idx = math.ceil(level * sorted_stats.shape[0]) - 1
    return float(sorted_stats[max(idx, 0)])
