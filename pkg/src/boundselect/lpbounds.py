"""Convert LP-characterized bounds into max/min affine piece families.

A latent linear program W(d) = A_d q with data constraint B q = p and q in
the simplex has dual bounds L(d) = max over vertices of {B~' lam >= -A_d'}
of -p~'lam (and the min analogue for U). Enumerating the dual vertices once
turns the LP bounds into the affine families the inference machinery
consumes, with every vertex lam = (lam^1, lam^0) contributing the piece
offset -lam^0, coefficients -lam^1 (signs flipped for the upper side).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import EnumerationCapError, ValidationError
from .model import BoundsSpec, Piece

DEFAULT_SUBSET_CAP = 2_000_000
FEAS_TOL = 1e-9
DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class LatentLp:
    """Objective rows (one per option) and the data map of a latent LP."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.array(self.a, dtype=float))
        b = np.atleast_2d(np.array(self.b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise ValidationError(
                f"objective width {a.shape[1]} does not match constraint width {b.shape[1]}"
            )
        if b.shape[1] < 1:
            raise ValidationError("latent dimension must be at least 1")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if np.linalg.matrix_rank(b) < b.shape[0]:
            warnings.warn(
                "constraint matrix has linearly dependent rows; dependent rows "
                "are dropped during enumeration and their multipliers set to zero",
                stacklevel=2,
            )

    @property
    def num_options(self) -> int:
        return self.a.shape[0]

    @property
    def dim_p(self) -> int:
        return self.b.shape[0]

    @property
    def dim_q(self) -> int:
        return self.b.shape[1]

    @classmethod
    def from_json(cls, text: str) -> "LatentLp":
        try:
            doc = json.loads(text)
            return cls(np.array(doc["A"], dtype=float), np.array(doc["B"], dtype=float))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed latent LP JSON: {exc}") from exc
        except KeyError as exc:
            raise ValidationError(f"latent LP JSON missing field {exc}") from exc

    def to_json(self) -> str:
        return json.dumps({"A": self.a.tolist(), "B": self.b.tolist()}, indent=2)


def _independent_rows(btilde: np.ndarray) -> list[int]:
    """Maximal independent row subset, preferring the simplex row so that
    constants land in the piece offsets rather than in dropped multipliers."""
    order = [btilde.shape[0] - 1] + list(range(btilde.shape[0] - 1))
    kept: list[int] = []
    basis = np.zeros((0, btilde.shape[1]))
    for idx in order:
        candidate = np.vstack([basis, btilde[idx]])
        if np.linalg.matrix_rank(candidate) > basis.shape[0]:
            kept.append(idx)
            basis = candidate
    return sorted(kept)


def dual_vertices(lp: LatentLp, rhs: np.ndarray, subset_cap: int = DEFAULT_SUBSET_CAP) -> np.ndarray:
    """All vertices of {lam : B~' lam >= rhs} with B~ = [B; 1'].

    Exhaustive basis enumeration: every subset of rank-many active
    constraints with an invertible active matrix yields a candidate, kept
    when it satisfies the full system within tolerance. Dependent rows of B~
    are excluded from the multiplier space (their entries are zero in the
    returned vertices). Vertices are deduplicated and sorted
    lexicographically, so the output is deterministic.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (lp.dim_q,):
        raise ValidationError(f"rhs must have length {lp.dim_q}, got {rhs.shape}")
    btilde = np.vstack([lp.b, np.ones(lp.dim_q)])
    kept = _independent_rows(btilde)
    k = len(kept)
    n_subsets = comb(lp.dim_q, k)
    if n_subsets > subset_cap:
        raise EnumerationCapError(
            f"C({lp.dim_q}, {k}) = {n_subsets} basis subsets exceed the cap "
            f"{subset_cap}; use an external enumerator"
        )
    cons = btilde[kept].T  # (dim_q, k): rows are constraint normals
    scale = 1.0 + float(np.abs(rhs).max(initial=0.0)) + float(np.abs(cons).max(initial=0.0))
    tol = FEAS_TOL * scale
    found = []
    for subset in combinations(range(lp.dim_q), k):
        mat = cons[list(subset)]
        try:
            lam = np.linalg.solve(mat, rhs[list(subset)])
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(lam)):
            continue
        # guard against ill-conditioned solves passing as exact
        if np.abs(mat @ lam - rhs[list(subset)]).max() > tol:
            continue
        if np.all(cons @ lam >= rhs - tol):
            found.append(lam)
    full = np.zeros((len(found), lp.dim_p + 1))
    if found:
        full[:, kept] = np.array(found)
    return _dedup_sorted(full)


def _dedup_sorted(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return rows
    order = np.lexsort(rows.T[::-1])
    rows = rows[order]
    keep = [0]
    for i in range(1, rows.shape[0]):
        if np.abs(rows[i] - rows[keep[-1]]).max() > DEDUP_TOL:
            keep.append(i)
    return rows[keep]


def lp_to_bounds_spec(lp: LatentLp, subset_cap: int = DEFAULT_SUBSET_CAP) -> BoundsSpec:
    """Dual vertices of every option and side, folded into a bounds family.

    Pieces with coinciding coefficient vectors are merged keeping the binding
    constant (max offset for lower pieces, min for upper). The output may
    contain constant pieces (zero coefficients) for degenerate objectives;
    such a family evaluates fine but cannot feed the conditioning machinery,
    hence strict validation is off.
    """
    lower, upper = [], []
    for d in range(lp.num_options):
        lo_vertices = dual_vertices(lp, -lp.a[d], subset_cap)
        up_vertices = dual_vertices(lp, lp.a[d], subset_cap)
        if lo_vertices.shape[0] == 0 or up_vertices.shape[0] == 0:
            raise ValidationError(
                f"option {d}: dual polyhedron has no vertices; the constraint "
                "system is degenerate"
            )
        lower.append(_merge_pieces(
            [Piece(-v[-1], -v[:-1]) for v in lo_vertices], keep_max=True
        ))
        upper.append(_merge_pieces(
            [Piece(v[-1], v[:-1]) for v in up_vertices], keep_max=False
        ))
    # rectangular family: options with fewer vertices get value-preserving
    # duplicates of their first piece (duplicates force non-strict validation)
    j_low = max(len(p) for p in lower)
    j_up = max(len(p) for p in upper)
    padded = False
    for opts, j_target in ((lower, j_low), (upper, j_up)):
        for pieces in opts:
            while len(pieces) < j_target:
                pieces.append(pieces[0])
                padded = True
    strict = not padded and all(
        np.any(piece.coef) for side in (lower, upper) for opt in side for piece in opt
    )
    return BoundsSpec(tuple(tuple(p) for p in lower), tuple(tuple(p) for p in upper), strict=strict)


def _merge_pieces(pieces: list[Piece], keep_max: bool) -> list[Piece]:
    merged: list[Piece] = []
    for piece in pieces:
        for i, other in enumerate(merged):
            if np.abs(piece.coef - other.coef).max() <= DEDUP_TOL:
                if (piece.offset > other.offset) == keep_max and piece.offset != other.offset:
                    merged[i] = piece
                break
        else:
            merged.append(piece)
    return merged
