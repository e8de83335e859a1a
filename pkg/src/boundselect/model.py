"""Domain types for max/min affine bound families and their plug-in estimates.

A bound family assigns each option d a lower bound max_j {c + v.p} and an
upper bound min_j {c + v.p} over a reduced-form parameter p. Selection and
argmax/argmin events are certified by polyhedra {A p <= c} whose rows are
assembled here and in :mod:`boundselect.select`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CovarianceError, ValidationError

# Argmax/argmin ties are broken toward the lowest piece index everywhere
# (np.argmax/argmin already return the first maximizer). Ties are
# measure-zero under the model but the rule must be deterministic.

MEMBERSHIP_TOL = 1e-9


def _frozen_array(x, ndim, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    if arr.ndim != ndim:
        raise ValidationError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Piece:
    """One affine piece c + v.p of a bound family."""

    offset: float
    coef: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "coef", _frozen_array(self.coef, 1))

    def value(self, p: np.ndarray) -> float:
        return self.offset + float(self.coef @ p)


@dataclass(frozen=True)
class BoundsSpec:
    """Rectangular family of lower/upper pieces across options.

    ``lower[d]`` / ``upper[d]`` are ordered piece tuples; every option has
    the same number of pieces per side. With ``strict=True`` (the default)
    each coefficient vector must be nonzero and pairwise distinct within an
    option, matching the identification assumptions; conversions from LP
    duals may legitimately produce constant pieces and use ``strict=False``.
    """

    lower: tuple[tuple[Piece, ...], ...]
    upper: tuple[tuple[Piece, ...], ...]
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        lower = tuple(tuple(p if isinstance(p, Piece) else Piece(*p) for p in opt) for opt in self.lower)
        upper = tuple(tuple(p if isinstance(p, Piece) else Piece(*p) for p in opt) for opt in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if not lower or not upper:
            raise ValidationError("spec needs at least one option")
        if len(lower) != len(upper):
            raise ValidationError("lower and upper must cover the same options")
        dims = {p.coef.shape[0] for opt in lower + upper for p in opt}
        if len(dims) != 1:
            raise ValidationError(f"inconsistent coefficient dimensions: {sorted(dims)}")
        if len({len(opt) for opt in lower}) != 1 or len({len(opt) for opt in upper}) != 1:
            raise ValidationError("piece counts must match across options")
        if min(len(lower[0]), len(upper[0])) < 1:
            raise ValidationError("each side needs at least one piece")
        if self.strict:
            self._check_pieces(lower, "lower")
            self._check_pieces(upper, "upper")

    @staticmethod
    def _check_pieces(sides, name):
        for d, opt in enumerate(sides):
            for j, piece in enumerate(opt):
                if not np.any(piece.coef):
                    raise ValidationError(f"{name}[{d}][{j}] has a zero coefficient vector")
            for j in range(len(opt)):
                for jj in range(j + 1, len(opt)):
                    if np.array_equal(opt[j].coef, opt[jj].coef):
                        raise ValidationError(
                            f"{name}[{d}] pieces {j} and {jj} share a coefficient vector"
                        )

    @property
    def num_options(self) -> int:
        return len(self.lower)

    @property
    def dim_p(self) -> int:
        return self.lower[0][0].coef.shape[0]

    @property
    def j_lower(self) -> int:
        return len(self.lower[0])

    @property
    def j_upper(self) -> int:
        return len(self.upper[0])

    def lower_matrix(self) -> np.ndarray:
        """All lower coefficient vectors stacked in (d, j) order."""
        return np.array([p.coef for opt in self.lower for p in opt])

    def upper_matrix(self) -> np.ndarray:
        return np.array([p.coef for opt in self.upper for p in opt])

    def to_json(self) -> str:
        doc = {
            "num_options": self.num_options,
            "dim_p": self.dim_p,
            "lower": [
                [{"c": p.offset, "v": p.coef.tolist()} for p in opt] for opt in self.lower
            ],
            "upper": [
                [{"c": p.offset, "v": p.coef.tolist()} for p in opt] for opt in self.upper
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, strict: bool = True) -> "BoundsSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed spec JSON: {exc}") from exc
        try:
            lower = tuple(
                tuple(Piece(p["c"], p["v"]) for p in opt) for opt in doc["lower"]
            )
            upper = tuple(
                tuple(Piece(p["c"], p["v"]) for p in opt) for opt in doc["upper"]
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"spec JSON missing field: {exc}") from exc
        spec = cls(lower, upper, strict=strict)
        if doc.get("num_options") not in (None, spec.num_options):
            raise ValidationError("num_options does not match piece table")
        if doc.get("dim_p") not in (None, spec.dim_p):
            raise ValidationError("dim_p does not match piece table")
        return spec


@dataclass(frozen=True)
class ReducedForm:
    """Sample size, estimate p_hat, and covariance estimate of sqrt(n)(p_hat - p)."""

    n: int
    p_hat: np.ndarray
    sigma_hat: np.ndarray
    lam_bar: float = field(default=1e6, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "p_hat", _frozen_array(self.p_hat, 1))
        object.__setattr__(self, "sigma_hat", _frozen_array(self.sigma_hat, 2))
        if self.n < 1:
            raise ValidationError(f"sample size must be positive, got {self.n}")
        k = self.p_hat.shape[0]
        if self.sigma_hat.shape != (k, k):
            raise ValidationError(
                f"sigma_hat shape {self.sigma_hat.shape} does not match p_hat length {k}"
            )
        sym_gap = np.abs(self.sigma_hat - self.sigma_hat.T).max()
        scale = max(np.abs(self.sigma_hat).max(), 1e-300)
        if sym_gap > 1e-10 * scale:
            raise ValidationError(f"sigma_hat is asymmetric (relative gap {sym_gap / scale:.2e})")
        eig = np.linalg.eigvalsh(self.sigma_hat)
        if eig[0] < 1.0 / self.lam_bar or eig[-1] > self.lam_bar:
            raise CovarianceError(
                "sigma_hat eigenvalues "
                f"[{eig[0]:.3e}, {eig[-1]:.3e}] outside [{1.0 / self.lam_bar:.1e}, "
                f"{self.lam_bar:.1e}]"
            )

    @property
    def dim_p(self) -> int:
        return self.p_hat.shape[0]

    @property
    def sqrt_n(self) -> float:
        return float(np.sqrt(self.n))


@dataclass(frozen=True)
class Polyhedron:
    """Event {A p <= c}; zero rows mean the full space."""

    a: np.ndarray
    c: np.ndarray
    row_labels: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.size == 0:
            a = a.reshape(0, a.shape[1] if a.ndim == 2 else 0)
        if a.ndim != 2:
            raise ValidationError(f"A must be 2-d, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", _frozen_array(np.atleast_1d(self.c), 1))
        if self.a.shape[0] != self.c.shape[0]:
            raise ValidationError(
                f"A has {self.a.shape[0]} rows but c has {self.c.shape[0]}"
            )
        if self.row_labels and len(self.row_labels) != self.a.shape[0]:
            raise ValidationError("row_labels length does not match row count")
        object.__setattr__(self, "row_labels", tuple(self.row_labels))

    @property
    def num_rows(self) -> int:
        return self.a.shape[0]

    def margins(self, p: np.ndarray) -> np.ndarray:
        return self.a @ p - self.c

    def contains(self, p: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
        if self.num_rows == 0:
            return True
        return bool(self.margins(p).max() <= tol)

    @staticmethod
    def empty(dim_p: int) -> "Polyhedron":
        return Polyhedron(np.zeros((0, dim_p)), np.zeros(0))

    @staticmethod
    def stack(*polys: "Polyhedron") -> "Polyhedron":
        polys = [p for p in polys if p.num_rows > 0]
        if not polys:
            raise ValidationError("cannot stack zero nonempty polyhedra")
        labels = tuple(lbl for p in polys for lbl in (p.row_labels or ("",) * p.num_rows))
        return Polyhedron(
            np.vstack([p.a for p in polys]),
            np.concatenate([p.c for p in polys]),
            labels,
        )

    def to_dict(self) -> dict:
        return {
            "A": self.a.tolist(),
            "c": self.c.tolist(),
            "row_labels": list(self.row_labels),
        }


@dataclass(frozen=True)
class BoundEstimate:
    """Plug-in bound values and attaining piece indices per option."""

    lower_value: np.ndarray
    lower_index: np.ndarray
    upper_value: np.ndarray
    upper_index: np.ndarray

    def interval(self, d: int) -> tuple[float, float]:
        return float(self.lower_value[d]), float(self.upper_value[d])


def piece_values(spec: BoundsSpec, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values of all pieces at p, shaped (num_options, J) per side."""
    p = np.asarray(p, dtype=float)
    lower = np.array([[piece.value(p) for piece in opt] for opt in spec.lower])
    upper = np.array([[piece.value(p) for piece in opt] for opt in spec.upper])
    return lower, upper


def evaluate_bounds(spec: BoundsSpec, p: np.ndarray) -> BoundEstimate:
    """Plug-in bounds at an arbitrary parameter value (ties to lowest index)."""
    if np.asarray(p).shape != (spec.dim_p,):
        raise ValidationError(
            f"parameter has shape {np.asarray(p).shape}, spec expects ({spec.dim_p},)"
        )
    low, up = piece_values(spec, p)
    jl = low.argmax(axis=1)
    ju = up.argmin(axis=1)
    rng = np.arange(spec.num_options)
    return BoundEstimate(low[rng, jl], jl, up[rng, ju], ju)


def estimate_bounds(spec: BoundsSpec, rf: ReducedForm) -> BoundEstimate:
    if rf.dim_p != spec.dim_p:
        raise ValidationError(
            f"reduced form dimension {rf.dim_p} does not match spec dim_p {spec.dim_p}"
        )
    return evaluate_bounds(spec, rf.p_hat)


def argmax_lower_rows(spec: BoundsSpec, d: int, j: int) -> Polyhedron:
    """Rows certifying that lower piece j attains the max at option d."""
    target = spec.lower[d][j]
    rows, offs, labels = [], [], []
    for jj, piece in enumerate(spec.lower[d]):
        if jj == j:
            continue
        rows.append(piece.coef - target.coef)
        offs.append(target.offset - piece.offset)
        labels.append(f"lower_argmax d={d} j={j} vs j={jj}")
    if not rows:
        return Polyhedron.empty(spec.dim_p)
    return Polyhedron(np.array(rows), np.array(offs), tuple(labels))


def argmin_upper_rows(spec: BoundsSpec, d: int, j: int) -> Polyhedron:
    """Rows certifying that upper piece j attains the min at option d."""
    target = spec.upper[d][j]
    rows, offs, labels = [], [], []
    for jj, piece in enumerate(spec.upper[d]):
        if jj == j:
            continue
        rows.append(target.coef - piece.coef)
        offs.append(piece.offset - target.offset)
        labels.append(f"upper_argmin d={d} j={j} vs j={jj}")
    if not rows:
        return Polyhedron.empty(spec.dim_p)
    return Polyhedron(np.array(rows), np.array(offs), tuple(labels))


def membership_rows(spec: BoundsSpec, d: int, include_self: bool = True) -> Polyhedron:
    """Rows for {U_hat(d) >= L_hat(d')}: every lower piece of every d' sits
    below every upper piece of d. ``include_self=False`` drops the d'=d
    comparisons (the maximal-element form used by the dynamic example)."""
    rows, offs, labels = [], [], []
    for dp in range(spec.num_options):
        if not include_self and dp == d:
            continue
        for jp, lo_piece in enumerate(spec.lower[dp]):
            for j, up_piece in enumerate(spec.upper[d]):
                rows.append(lo_piece.coef - up_piece.coef)
                offs.append(up_piece.offset - lo_piece.offset)
                labels.append(f"dominance d={d} upper j={j} vs d'={dp} lower j'={jp}")
    return Polyhedron(np.array(rows), np.array(offs), tuple(labels))


@dataclass(frozen=True)
class UndominatedMember:
    option: int
    j_lower: int
    j_upper: int
    membership: Polyhedron
    poly_lower: Polyhedron
    poly_upper: Polyhedron


@dataclass(frozen=True)
class UndominatedSet:
    members: tuple[UndominatedMember, ...]
    estimate: BoundEstimate

    @property
    def options(self) -> tuple[int, ...]:
        return tuple(m.option for m in self.members)


def undominated_set(spec: BoundsSpec, rf: ReducedForm) -> UndominatedSet:
    """Options whose estimated upper bound weakly exceeds every estimated
    lower bound, each with the polyhedra certifying membership and the
    realized argmax/argmin piece events."""
    est = estimate_bounds(spec, rf)
    max_lower = est.lower_value.max()
    members = []
    for d in range(spec.num_options):
        if est.upper_value[d] < max_lower:
            continue
        membership = membership_rows(spec, d)
        jl = int(est.lower_index[d])
        ju = int(est.upper_index[d])
        poly_l = _stack_nonempty(membership, argmax_lower_rows(spec, d, jl))
        poly_u = _stack_nonempty(membership, argmin_upper_rows(spec, d, ju))
        members.append(
            UndominatedMember(d, jl, ju, membership, poly_l, poly_u)
        )
    return UndominatedSet(tuple(members), est)


def _stack_nonempty(*polys: Polyhedron) -> Polyhedron:
    nonempty = [p for p in polys if p.num_rows > 0]
    if not nonempty:
        return Polyhedron.empty(polys[0].a.shape[1])
    return Polyhedron.stack(*nonempty)
