"""Interval constructions: conditional, projection, hybrid, conventional.

All four cover the identified interval [L(d_hat), U(d_hat)] of the selected
option at joint level 1 - alpha1 - alpha2. Internally everything runs on the
sqrt(n) scale of the studied piece statistics; endpoints are rescaled at the
end. Endpoint crossing (lower > upper) is possible for the conditional and
hybrid kinds under extreme truncation and is reported, never clamped:
clamping would bias coverage experiments.
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .condition import assert_event_realized, direction, truncation_bounds
from .errors import NumericalError, TruncationMassError, ValidationError
from .gauss import SOLVE_TOL, corr_root, max_gauss_sample, order_statistic
from .model import BoundsSpec, ReducedForm, estimate_bounds
from .select import SelectionOutcome

KINDS = ("conditional", "projection", "hybrid", "conventional")

DEFAULT_DRAWS = 100_000
DEFAULT_BETA_FRAC = 0.1


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    kind: str
    alpha1: float
    alpha2: float
    beta: float | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def is_crossed(self) -> bool:
        # +inf lower or -inf upper means the interval is empty no matter what
        # the other endpoint did
        return self.lower > self.upper or self.lower == math.inf or self.upper == -math.inf

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, lo: float, hi: float) -> bool:
        return (not self.is_crossed) and self.lower <= lo and hi <= self.upper

    def to_dict(self) -> dict:
        doc = {
            "kind": self.kind,
            "lower": self.lower,
            "upper": self.upper,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "crossed": self.is_crossed,
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.beta is not None:
            doc["beta"] = self.beta
        return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _check_levels(alpha1, alpha2):
    if not (0.0 < alpha1 < 0.5 and 0.0 < alpha2 < 0.5):
        raise ValidationError(f"tail levels must be in (0, .5), got ({alpha1}, {alpha2})")


# ---------------------------------------------------------------------------
# critical values: one sorted max-statistic sample per (cov, draws, seed) is
# shared by the projection and hybrid constructions; safe for concurrent
# readers, single-writer insertion
_CV_CACHE: OrderedDict[tuple, np.ndarray] = OrderedDict()
_CV_LOCK = threading.Lock()
_CV_MAXSIZE = 16


def _stat_sample(cov: np.ndarray, draws: int, seed) -> np.ndarray:
    if seed is None:
        return max_gauss_sample(corr_root(cov), draws, None)
    key = (
        hashlib.sha256(np.ascontiguousarray(cov).tobytes()).hexdigest(),
        cov.shape[0],
        int(draws),
        int(seed),
    )
    with _CV_LOCK:
        if key in _CV_CACHE:
            _CV_CACHE.move_to_end(key)
            return _CV_CACHE[key]
    stats = max_gauss_sample(corr_root(cov), draws, int(seed))
    with _CV_LOCK:
        _CV_CACHE[key] = stats
        while len(_CV_CACHE) > _CV_MAXSIZE:
            _CV_CACHE.popitem(last=False)
    return stats


def _endpoint_solve(t, target, var, win, offset=None, hybrid_side=None):
    """Location solve with the window-boundary limits made explicit.

    Discrete data puts the observed statistic exactly on a truncation edge
    with positive probability (tied pieces); the solve then has no finite
    root but a well-defined limit: -inf when the statistic pins the window
    bottom (the beta-projection bound instead, for the hybrid lower solve,
    whose moving edge steps there), +inf when it pins the top, and mirrored
    for the hybrid upper solve. Bracket exhaustion at the 60 sigma guard is
    the same divergence observed at finite precision and maps to the same
    limit. Returns (mu, diverged_flag).
    """
    sd = math.sqrt(var)
    snap = 1e-9 * (1.0 + abs(t) + sd)
    if win.v_plus - win.v_minus <= snap:
        raise TruncationMassError(
            f"window [{win.v_minus}, {win.v_plus}] is degenerate at t={t}"
        )
    if t >= win.v_plus - snap:
        if hybrid_side == "upper":
            return t + offset, True
        return math.inf, True
    if t <= win.v_minus + snap:
        if hybrid_side == "lower":
            return t - offset, True
        return -math.inf, True
    if hybrid_side is None:
        mu, _, status = _kernels.solve_location_raw(
            t, target, sd, win.v_minus, win.v_plus, SOLVE_TOL
        )
    else:
        mu, _, status = _kernels.solve_location_hybrid_raw(
            t, target, sd, win.v_minus, win.v_plus, offset, hybrid_side == "lower", SOLVE_TOL
        )
    if status == _kernels.SOLVE_OK:
        return mu, False
    if status == _kernels.SOLVE_BRACKET_LOW:
        return (t - offset, True) if hybrid_side == "lower" else (-math.inf, True)
    if status == _kernels.SOLVE_BRACKET_HIGH:
        return (t + offset, True) if hybrid_side == "upper" else (math.inf, True)
    if status == _kernels.SOLVE_NO_CONVERGE and hybrid_side is not None:
        # the moving edge makes F a near-step; the bisection midpoint is the
        # step location, which is the correct limiting endpoint
        return mu, True
    if status == _kernels.SOLVE_DEGENERATE:
        raise TruncationMassError(
            f"window [{win.v_minus}, {win.v_plus}] lost all mass during the solve at t={t}"
        )
    raise NumericalError(
        f"bisection failed at t={t}, window [{win.v_minus}, {win.v_plus}]"
    )


def _piece(spec, sel, side):
    if side == "lower":
        return spec.lower[sel.d_hat][sel.j_lower]
    return spec.upper[sel.d_hat][sel.j_upper]


def _side_stats(spec, rf, sel, side):
    piece = _piece(spec, sel, side)
    dd = direction(piece.coef, piece.offset, rf)
    poly = sel.poly_lower if side == "lower" else sel.poly_upper
    win = truncation_bounds(poly, dd, rf.n)
    assert_event_realized(win, dd.s_obs)
    return dd, win


def _proj_row(spec, sel, side):
    if side == "lower":
        return sel.d_hat * spec.j_lower + sel.j_lower
    return sel.d_hat * spec.j_upper + sel.j_upper


def _proj_cov(spec, rf, side):
    mat = spec.lower_matrix() if side == "lower" else spec.upper_matrix()
    return mat @ rf.sigma_hat @ mat.T


def conditional_ci(
    spec: BoundsSpec,
    rf: ReducedForm,
    sel: SelectionOutcome,
    alpha1: float = 0.025,
    alpha2: float = 0.025,
) -> ConfidenceInterval:
    """Quantile-unbiased endpoints given the realized selection event.

    The lower endpoint solves F_TN(s_obs; mu, var, window) = 1 - alpha1 in mu
    on the lower side's truncation window; the upper endpoint solves the same
    equation with target alpha2 on the upper side.
    """
    _check_levels(alpha1, alpha2)
    dd_l, win_l = _side_stats(spec, rf, sel, "lower")
    dd_u, win_u = _side_stats(spec, rf, sel, "upper")
    mu_l, div_l = _endpoint_solve(dd_l.s_obs, 1.0 - alpha1, dd_l.var_s, win_l)
    mu_u, div_u = _endpoint_solve(dd_u.s_obs, alpha2, dd_u.var_s, win_u)
    rn = rf.sqrt_n
    return ConfidenceInterval(
        lower=mu_l / rn,
        upper=mu_u / rn,
        kind="conditional",
        alpha1=alpha1,
        alpha2=alpha2,
        diagnostics={
            "window_lower": win_l.as_tuple(),
            "window_upper": win_u.as_tuple(),
            "s_obs_lower": dd_l.s_obs,
            "s_obs_upper": dd_u.s_obs,
            "var_lower": dd_l.var_s,
            "var_upper": dd_u.var_s,
            "diverged_lower": div_l,
            "diverged_upper": div_u,
        },
    )


def projection_ci(
    spec: BoundsSpec,
    rf: ReducedForm,
    sel: SelectionOutcome,
    alpha1: float = 0.025,
    alpha2: float = 0.025,
    draws: int = DEFAULT_DRAWS,
    seed: int | None = None,
) -> ConfidenceInterval:
    """Simultaneous confidence bounds over all pieces, projected onto the
    selected one; valid regardless of how the option was selected."""
    _check_levels(alpha1, alpha2)
    est = estimate_bounds(spec, rf)
    out = {}
    for side, alpha in (("lower", alpha1), ("upper", alpha2)):
        cov = _proj_cov(spec, rf, side)
        stats = _stat_sample(cov, draws, seed)
        crit = order_statistic(stats, 1.0 - alpha)
        row = _proj_row(spec, sel, side)
        se = math.sqrt(cov[row, row] / rf.n)
        out[side] = (crit, se)
    lo_crit, lo_se = out["lower"]
    up_crit, up_se = out["upper"]
    return ConfidenceInterval(
        lower=float(est.lower_value[sel.d_hat]) - lo_crit * lo_se,
        upper=float(est.upper_value[sel.d_hat]) + up_crit * up_se,
        kind="projection",
        alpha1=alpha1,
        alpha2=alpha2,
        diagnostics={
            "crit_lower": lo_crit,
            "crit_upper": up_crit,
            "draws": draws,
            "seed": seed,
        },
    )


def hybrid_ci(
    spec: BoundsSpec,
    rf: ReducedForm,
    sel: SelectionOutcome,
    alpha1: float = 0.025,
    alpha2: float = 0.025,
    beta_frac: float = DEFAULT_BETA_FRAC,
    draws: int = DEFAULT_DRAWS,
    seed: int | None = None,
) -> ConfidenceInterval:
    """Conditional construction additionally conditioned on a level-beta
    projection event, which caps the truncation window at mu +/- the scaled
    simultaneous critical value.

    Per-side beta is beta_frac * (2 * alpha_side), so the default
    alpha1 = alpha2 = .025 with beta_frac = 1/10 gives beta = .005 per side
    (overall alpha/10). The lower endpoint solves for target
    (1 - alpha1)/(1 - beta_L); the upper for alpha2/(1 - beta_U). By
    construction the endpoints never escape the level-beta projection bounds.
    """
    _check_levels(alpha1, alpha2)
    beta_l = beta_frac * 2.0 * alpha1
    beta_u = beta_frac * 2.0 * alpha2
    if max(beta_l, beta_u) >= min(alpha1, alpha2):
        raise ValidationError(
            f"per-side beta ({beta_l}, {beta_u}) must stay below min(alpha1, alpha2)"
        )
    est = estimate_bounds(spec, rf)
    rn = rf.sqrt_n

    dd_l, win_l = _side_stats(spec, rf, sel, "lower")
    cov_l = _proj_cov(spec, rf, "lower")
    crit_l = order_statistic(_stat_sample(cov_l, draws, seed), 1.0 - beta_l)
    row_l = _proj_row(spec, sel, "lower")
    offset_l = crit_l * math.sqrt(cov_l[row_l, row_l])
    mu_l, div_l = _endpoint_solve(
        dd_l.s_obs,
        (1.0 - alpha1) / (1.0 - beta_l),
        dd_l.var_s,
        win_l,
        offset=offset_l,
        hybrid_side="lower",
    )

    dd_u, win_u = _side_stats(spec, rf, sel, "upper")
    cov_u = _proj_cov(spec, rf, "upper")
    crit_u = order_statistic(_stat_sample(cov_u, draws, seed), 1.0 - beta_u)
    row_u = _proj_row(spec, sel, "upper")
    offset_u = crit_u * math.sqrt(cov_u[row_u, row_u])
    mu_u, div_u = _endpoint_solve(
        dd_u.s_obs,
        alpha2 / (1.0 - beta_u),
        dd_u.var_s,
        win_u,
        offset=offset_u,
        hybrid_side="upper",
    )

    proj_beta_lower = (dd_l.s_obs - offset_l) / rn
    proj_beta_upper = (dd_u.s_obs + offset_u) / rn
    lower = mu_l / rn
    upper = mu_u / rn
    tol = 1e-9 * (1.0 + abs(dd_l.s_obs) + abs(dd_u.s_obs)) / rn
    if lower < proj_beta_lower - tol or upper > proj_beta_upper + tol:
        raise ValidationError(
            "hybrid endpoints escaped the level-beta projection bounds: "
            f"[{lower}, {upper}] vs [{proj_beta_lower}, {proj_beta_upper}]"
        )
    return ConfidenceInterval(
        lower=lower,
        upper=upper,
        kind="hybrid",
        alpha1=alpha1,
        alpha2=alpha2,
        beta=beta_l,
        diagnostics={
            "beta_lower": beta_l,
            "beta_upper": beta_u,
            "window_lower": win_l.as_tuple(),
            "window_upper": win_u.as_tuple(),
            "offset_lower": offset_l,
            "offset_upper": offset_u,
            "proj_beta_lower": proj_beta_lower,
            "proj_beta_upper": proj_beta_upper,
            "diverged_lower": div_l,
            "diverged_upper": div_u,
            "draws": draws,
            "seed": seed,
        },
    )


def conventional_ci(
    spec: BoundsSpec,
    rf: ReducedForm,
    sel: SelectionOutcome,
    alpha1: float = 0.025,
    alpha2: float = 0.025,
) -> ConfidenceInterval:
    """Naive normal interval around the selected piece estimates; ignores both
    the max/min structure and the selection, and under-covers accordingly."""
    _check_levels(alpha1, alpha2)
    est = estimate_bounds(spec, rf)
    lo_piece = _piece(spec, sel, "lower")
    up_piece = _piece(spec, sel, "upper")
    var_l = float(lo_piece.coef @ rf.sigma_hat @ lo_piece.coef)
    var_u = float(up_piece.coef @ rf.sigma_hat @ up_piece.coef)
    z_l = float(ndtri(1.0 - alpha1))
    z_u = float(ndtri(1.0 - alpha2))
    return ConfidenceInterval(
        lower=float(est.lower_value[sel.d_hat]) - z_l * math.sqrt(var_l / rf.n),
        upper=float(est.upper_value[sel.d_hat]) + z_u * math.sqrt(var_u / rf.n),
        kind="conventional",
        alpha1=alpha1,
        alpha2=alpha2,
        diagnostics={"z_lower": z_l, "z_upper": z_u},
    )


def compute_cis(
    spec: BoundsSpec,
    rf: ReducedForm,
    sel: SelectionOutcome,
    kinds=KINDS,
    alpha1: float = 0.025,
    alpha2: float = 0.025,
    beta_frac: float = DEFAULT_BETA_FRAC,
    draws: int = DEFAULT_DRAWS,
    seed: int | None = None,
) -> dict[str, ConfidenceInterval]:
    """All requested interval kinds for one selection outcome."""
    out = {}
    for kind in kinds:
        if kind == "conditional":
            out[kind] = conditional_ci(spec, rf, sel, alpha1, alpha2)
        elif kind == "projection":
            out[kind] = projection_ci(spec, rf, sel, alpha1, alpha2, draws, seed)
        elif kind == "hybrid":
            out[kind] = hybrid_ci(spec, rf, sel, alpha1, alpha2, beta_frac, draws, seed)
        elif kind == "conventional":
            out[kind] = conventional_ci(spec, rf, sel, alpha1, alpha2)
        else:
            raise ValidationError(f"unknown CI kind {kind!r}")
    return out
