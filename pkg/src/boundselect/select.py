"""Selection rules and the polyhedra certifying their realized outcomes.

Each rule returns a :class:`SelectionOutcome` carrying the selected option,
the realized argmax/argmin piece indices, the auxiliary conditioning vectors
(kept minimal: conditioning beyond what certifies the event only lengthens
the intervals), and one polyhedron per inference side. The lower-side
polyhedron certifies {selection, j_lower realized, gamma_lower realized} and
symmetrically for the upper side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .model import (
    BoundsSpec,
    Polyhedron,
    ReducedForm,
    UndominatedSet,
    argmax_lower_rows,
    argmin_upper_rows,
    estimate_bounds,
    piece_values,
    _stack_nonempty,
)


@dataclass(frozen=True)
class SelectionOutcome:
    d_hat: int
    j_lower: int
    j_upper: int
    gamma_lower: tuple[int, ...]
    gamma_upper: tuple[int, ...]
    poly_lower: Polyhedron
    poly_upper: Polyhedron
    rule: str
    noise: np.ndarray | None = field(default=None, compare=False)

    def validate_at(self, p_hat: np.ndarray):
        if not (self.poly_lower.contains(p_hat) and self.poly_upper.contains(p_hat)):
            raise ValidationError(
                f"realized p_hat violates the certifying polyhedra of rule {self.rule!r}"
            )

    def to_json(self) -> str:
        doc = {
            "rule": self.rule,
            "d_hat": self.d_hat,
            "j_lower": self.j_lower,
            "j_upper": self.j_upper,
            "gamma_lower": list(self.gamma_lower),
            "gamma_upper": list(self.gamma_upper),
            "poly_lower": self.poly_lower.to_dict(),
            "poly_upper": self.poly_upper.to_dict(),
        }
        if self.noise is not None:
            doc["noise"] = self.noise.tolist()
        return json.dumps(doc, indent=2, sort_keys=True)


def rule_weighted(
    spec: BoundsSpec, rf: ReducedForm, w_lower: float, w_upper: float
) -> SelectionOutcome:
    """Pick the option maximizing w_lower * L_hat(d) + w_upper * U_hat(d).

    The certifying rows depend on which weights are active: with w_upper=0
    the cross-option comparisons against the winning lower piece already pin
    down both the winner and its argmax piece; with w_lower=0 the comparisons
    run across the realized argmin pieces of every option and each of those
    argmins is certified separately; with both weights active the weighted
    piece comparison needs every option's argmax and argmin certified.
    """
    if w_lower < 0 or w_upper < 0 or (w_lower == 0 and w_upper == 0):
        raise ValidationError(f"weights must be nonnegative and not both zero: ({w_lower}, {w_upper})")
    est = estimate_bounds(spec, rf)
    score = w_lower * est.lower_value + w_upper * est.upper_value
    d_hat = int(score.argmax())
    jl = est.lower_index
    ju = est.upper_index
    dim = spec.dim_p

    if w_upper == 0.0:
        # winner's lower piece beats every (d', j) lower piece
        target = spec.lower[d_hat][jl[d_hat]]
        rows, offs, labels = [], [], []
        for dp in range(spec.num_options):
            for j, piece in enumerate(spec.lower[dp]):
                if dp == d_hat and j == jl[d_hat]:
                    continue
                rows.append(piece.coef - target.coef)
                offs.append(target.offset - piece.offset)
                labels.append(f"maxlower d'={dp} j={j}")
        common = Polyhedron(np.array(rows), np.array(offs), tuple(labels))
        poly_l = common
        poly_u = _stack_nonempty(common, argmin_upper_rows(spec, d_hat, int(ju[d_hat])))
        gamma_l: tuple[int, ...] = ()
        gamma_u = (int(jl[d_hat]),)
    elif w_lower == 0.0:
        parts = [_cross_rows(spec, d_hat, jl, ju, 0.0, w_upper)]
        for dp in range(spec.num_options):
            parts.append(argmin_upper_rows(spec, dp, int(ju[dp])))
        common = _stack_nonempty(*parts)
        poly_u = common
        poly_l = _stack_nonempty(common, argmax_lower_rows(spec, d_hat, int(jl[d_hat])))
        gamma_l = gamma_u = tuple(int(j) for j in ju)
    else:
        parts = [_cross_rows(spec, d_hat, jl, ju, w_lower, w_upper)]
        for dp in range(spec.num_options):
            parts.append(argmax_lower_rows(spec, dp, int(jl[dp])))
            parts.append(argmin_upper_rows(spec, dp, int(ju[dp])))
        common = _stack_nonempty(*parts)
        poly_l = poly_u = common
        gamma_l = gamma_u = tuple(int(j) for j in jl) + tuple(int(j) for j in ju)

    out = SelectionOutcome(
        d_hat=d_hat,
        j_lower=int(jl[d_hat]),
        j_upper=int(ju[d_hat]),
        gamma_lower=gamma_l,
        gamma_upper=gamma_u,
        poly_lower=poly_l if poly_l.num_rows else Polyhedron.empty(dim),
        poly_upper=poly_u if poly_u.num_rows else Polyhedron.empty(dim),
        rule=f"weighted({w_lower},{w_upper})",
    )
    out.validate_at(rf.p_hat)
    return out


def _cross_rows(spec, d_hat, jl, ju, w_lower, w_upper) -> Polyhedron:
    """Weighted score of the winner beats every other option's score, all at
    the realized piece indices."""
    win_coef = np.zeros(spec.dim_p)
    win_off = 0.0
    if w_lower:
        piece = spec.lower[d_hat][jl[d_hat]]
        win_coef = win_coef + w_lower * piece.coef
        win_off += w_lower * piece.offset
    if w_upper:
        piece = spec.upper[d_hat][ju[d_hat]]
        win_coef = win_coef + w_upper * piece.coef
        win_off += w_upper * piece.offset
    rows, offs, labels = [], [], []
    for dp in range(spec.num_options):
        if dp == d_hat:
            continue
        coef = np.zeros(spec.dim_p)
        off = 0.0
        if w_lower:
            piece = spec.lower[dp][jl[dp]]
            coef = coef + w_lower * piece.coef
            off += w_lower * piece.offset
        if w_upper:
            piece = spec.upper[dp][ju[dp]]
            coef = coef + w_upper * piece.coef
            off += w_upper * piece.offset
        rows.append(coef - win_coef)
        offs.append(win_off - off)
        labels.append(f"score d'={dp}")
    if not rows:
        return Polyhedron.empty(spec.dim_p)
    return Polyhedron(np.array(rows), np.array(offs), tuple(labels))


def fixed_target(spec: BoundsSpec, rf: ReducedForm, d_star: int) -> SelectionOutcome:
    """No data-dependent selection: condition only on the realized pieces."""
    if not 0 <= d_star < spec.num_options:
        raise ValidationError(f"d_star {d_star} out of range for {spec.num_options} options")
    est = estimate_bounds(spec, rf)
    jl = int(est.lower_index[d_star])
    ju = int(est.upper_index[d_star])
    out = SelectionOutcome(
        d_hat=d_star,
        j_lower=jl,
        j_upper=ju,
        gamma_lower=(),
        gamma_upper=(),
        poly_lower=argmax_lower_rows(spec, d_star, jl),
        poly_upper=argmin_upper_rows(spec, d_star, ju),
        rule=f"fixed({d_star})",
    )
    out.validate_at(rf.p_hat)
    return out


def cms_statistic(spec: BoundsSpec, p: np.ndarray, eps: np.ndarray) -> float:
    """Mean of max(upper, 0) + min(lower, 0) over the perturbed draws."""
    total = 0.0
    for e in eps:
        low, up = piece_values(spec, p + e)
        total += max(up[0].min(), 0.0) + min(low[0].max(), 0.0)
    return total / eps.shape[0]


def rule_cms(
    spec: BoundsSpec,
    rf: ReducedForm,
    m: int,
    rng: np.random.Generator | int | None,
) -> SelectionOutcome:
    """Quasi-Bayesian treat/don't-treat rule for a single interval-identified
    effect: treat when the average of max(b_U,0)+min(b_L,0) over m Gaussian
    perturbations of p_hat is nonnegative.

    ``spec`` must describe one option (the effect's lower/upper piece
    families). The conditioning event records the draws, the per-draw
    argmax/argmin indices, and the per-draw signs; the emitted rows certify
    exactly these together with the aggregate threshold.
    """
    if spec.num_options != 1:
        raise ValidationError("the quasi-Bayesian rule applies to a single-parameter spec")
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    try:
        chol = np.linalg.cholesky(rf.sigma_hat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"sigma_hat factorization failed: {exc}") from exc
    eps = gen.standard_normal((m, rf.dim_p)) @ chol.T

    k_lo = np.empty(m, dtype=int)   # argmax piece of the lower family per draw
    k_up = np.empty(m, dtype=int)   # argmin piece of the upper family per draw
    s_lo = np.empty(m, dtype=int)   # sign of the perturbed lower bound (0 -> +)
    s_up = np.empty(m, dtype=int)
    rows, offs, labels = [], [], []
    agg_coef = np.zeros(rf.dim_p)
    agg_const = 0.0
    for i in range(m):
        low, up = piece_values(spec, rf.p_hat + eps[i])
        k_lo[i] = low[0].argmax()
        k_up[i] = up[0].argmin()
        s_lo[i] = 1 if low[0, k_lo[i]] >= 0 else -1
        s_up[i] = 1 if up[0, k_up[i]] >= 0 else -1

        best_up = spec.upper[0][k_up[i]]
        for k, piece in enumerate(spec.upper[0]):
            if k == k_up[i]:
                continue
            rows.append(best_up.coef - piece.coef)
            offs.append(piece.offset - best_up.offset + float((piece.coef - best_up.coef) @ eps[i]))
            labels.append(f"cms draw={i} upper argmin vs k={k}")
        best_lo = spec.lower[0][k_lo[i]]
        for k, piece in enumerate(spec.lower[0]):
            if k == k_lo[i]:
                continue
            rows.append(piece.coef - best_lo.coef)
            offs.append(best_lo.offset - piece.offset + float((best_lo.coef - piece.coef) @ eps[i]))
            labels.append(f"cms draw={i} lower argmax vs k={k}")

        # sign rows: value >= 0 encodes as -coef p <= offset + coef eps
        if s_lo[i] > 0:
            rows.append(-best_lo.coef)
            offs.append(best_lo.offset + float(best_lo.coef @ eps[i]))
        else:
            rows.append(best_lo.coef)
            offs.append(-best_lo.offset - float(best_lo.coef @ eps[i]))
            agg_coef = agg_coef + best_lo.coef
            agg_const += best_lo.offset + float(best_lo.coef @ eps[i])
        labels.append(f"cms draw={i} lower sign {'+' if s_lo[i] > 0 else '-'}")
        if s_up[i] > 0:
            rows.append(-best_up.coef)
            offs.append(best_up.offset + float(best_up.coef @ eps[i]))
            agg_coef = agg_coef + best_up.coef
            agg_const += best_up.offset + float(best_up.coef @ eps[i])
        else:
            rows.append(best_up.coef)
            offs.append(-best_up.offset - float(best_up.coef @ eps[i]))
        labels.append(f"cms draw={i} upper sign {'+' if s_up[i] > 0 else '-'}")

    stat = cms_statistic(spec, rf.p_hat, eps)
    d_hat = 1 if stat >= 0.0 else 0
    # aggregate threshold: sum over positive-sign uppers and negative-sign
    # lowers of the perturbed piece values, compared against zero
    if d_hat == 1:
        rows.append(-agg_coef)
        offs.append(agg_const)
    else:
        rows.append(agg_coef.copy())
        offs.append(-agg_const)
    labels.append(f"cms aggregate d_hat={d_hat}")

    est = estimate_bounds(spec, rf)
    gamma = (
        tuple(int(k) for k in k_lo)
        + tuple(int(k) for k in k_up)
        + tuple(int(s) for s in s_lo)
        + tuple(int(s) for s in s_up)
    )
    cms_poly = Polyhedron(np.array(rows), np.array(offs), tuple(labels))
    jl = int(est.lower_index[0])
    ju = int(est.upper_index[0])
    out = SelectionOutcome(
        d_hat=d_hat,
        j_lower=jl,
        j_upper=ju,
        gamma_lower=gamma,
        gamma_upper=gamma,
        poly_lower=_stack_nonempty(cms_poly, argmax_lower_rows(spec, 0, jl)),
        poly_upper=_stack_nonempty(cms_poly, argmin_upper_rows(spec, 0, ju)),
        rule=f"cms(m={m})",
        noise=eps,
    )
    out.validate_at(rf.p_hat)
    return out


def from_undominated(uset: UndominatedSet, d: int, rule: str = "undominated") -> SelectionOutcome:
    """Wrap an undominated-set member as a selection outcome for the CIs."""
    for member in uset.members:
        if member.option == d:
            return SelectionOutcome(
                d_hat=d,
                j_lower=member.j_lower,
                j_upper=member.j_upper,
                gamma_lower=(),
                gamma_upper=(),
                poly_lower=member.poly_lower,
                poly_upper=member.poly_upper,
                rule=rule,
            )
    raise ValidationError(f"option {d} is not in the estimated undominated set")
