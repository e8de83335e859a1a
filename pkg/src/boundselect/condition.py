"""Sufficient statistics and truncation windows for polyhedral conditioning.

Given a studied affine statistic s = sqrt(n)(offset + coef.p_hat) and a
conditioning event {A p_hat <= c}, the event constrains s to an interval
[v_minus, v_plus] along the regression direction b, holding the sufficient
statistic z = sqrt(n) p_hat - b s fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError
from .model import Polyhedron, ReducedForm

# rows whose direction coefficient is within ZERO_BAND * (1 + |a|_inf) of
# zero feed the v_zero slack instead of a window edge; misclassifying a tiny
# coefficient as nonzero only produces a huge finite edge, which is safe
ZERO_BAND = 1e-10


@dataclass(frozen=True)
class ConditioningWindow:
    v_minus: float
    v_plus: float
    v_zero: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.v_minus, self.v_plus, self.v_zero)


@dataclass(frozen=True)
class DirectionData:
    """Regression direction and sufficient statistic for one bound piece."""

    b: np.ndarray
    z_stat: np.ndarray
    s_obs: float
    var_s: float

    def reconstruct(self) -> np.ndarray:
        """sqrt(n) p_hat recovered from (z_stat, b, s_obs)."""
        return self.z_stat + self.b * self.s_obs


def direction(coef: np.ndarray, offset: float, rf: ReducedForm) -> DirectionData:
    """Direction b = Sigma coef' / (coef Sigma coef') and the statistic split.

    The identity sqrt(n) p_hat = z_stat + b * s_obs holds by construction and
    coef.b = 1, so z_stat is invariant to the studied statistic.
    """
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (rf.dim_p,):
        raise ValidationError(
            f"coefficient shape {coef.shape} does not match dim_p {rf.dim_p}"
        )
    sig_coef = rf.sigma_hat @ coef
    var_s = float(coef @ sig_coef)
    if not var_s > 0.0:
        raise ValidationError(f"studied statistic has nonpositive variance {var_s}")
    b = sig_coef / var_s
    s_obs = rf.sqrt_n * (float(offset) + float(coef @ rf.p_hat))
    z_stat = rf.sqrt_n * rf.p_hat - b * s_obs
    return DirectionData(b=b, z_stat=z_stat, s_obs=s_obs, var_s=var_s)


def truncation_bounds(poly: Polyhedron, dd: DirectionData, n: int) -> ConditioningWindow:
    """Window of the studied statistic consistent with {A p_hat <= c}.

    With a = A b and r = sqrt(n) c - A z_stat the event reads a*s <= r
    row-wise; negative coefficients floor s, positive ones cap it, and
    (near-)zero rows only contribute the sign condition v_zero >= 0.
    """
    if poly.num_rows == 0:
        return ConditioningWindow(-math.inf, math.inf, math.inf)
    a = poly.a @ dd.b
    r = math.sqrt(n) * poly.c - poly.a @ dd.z_stat
    tau = ZERO_BAND * (1.0 + float(np.abs(a).max()))
    v_minus, v_plus, v_zero = _kernels.window_scan(
        np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(r, dtype=float), tau
    )
    return ConditioningWindow(v_minus, v_plus, v_zero)


def assert_event_realized(win: ConditioningWindow, s_obs: float, slack: float = 1e-7):
    """Sanity check that the observed statistic lies inside its own window.

    Holds by construction whenever the conditioning event occurred at the
    observed data; a violation indicates inconsistent polyhedron rows.
    """
    scale = 1.0 + abs(s_obs)
    if not (
        win.v_minus <= s_obs + slack * scale
        and s_obs - slack * scale <= win.v_plus
        and win.v_zero >= -slack * scale
    ):
        raise ValidationError(
            f"observed statistic {s_obs} outside its conditioning window "
            f"[{win.v_minus}, {win.v_plus}] (v_zero={win.v_zero})"
        )
