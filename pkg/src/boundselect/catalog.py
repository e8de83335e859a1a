"""Ready-made bound families for binary-instrument designs, plus the
reduced-form estimator that feeds them.

All builders express the parameter in free coordinates only: within each
instrument stratum the residual probability cell is substituted out, so the
multinomial covariance of the remaining cells is nonsingular. For the static
binary design the coordinate order is

    (p^{100}, p^{010}, p^{110}, p^{101}, p^{011}, p^{111})

with p^{ydz} = P(Y=y, D=d | Z=z): stratum z=0 cells (y,d) = (1,0), (0,1),
(1,1) first, then the same cells for z=1. The (0,0) cell of each stratum is
the substituted residual.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataSchemaError, StratumError, ValidationError
from .model import BoundsSpec, Piece, Polyhedron, ReducedForm, membership_rows

# static (y, d) cell order within a stratum; (0, 0) is the residual
_STATIC_CELLS = ((1, 0), (0, 1), (1, 1))
# dynamic (y2, d1, d2) cell order within a stratum; (0, 0, 0) is the residual
_DYN_CELLS = tuple(
    (y2, d1, d2)
    for y2 in (0, 1)
    for d1 in (0, 1)
    for d2 in (0, 1)
    if (y2, d1, d2) != (0, 0, 0)
)

CATALOG_NAMES = ("manski-binary", "manski-continuous", "balke-pearl", "dyntreat")


def _static_index(y: int, d: int, z: int) -> int | None:
    """Free-coordinate index of cell p^{ydz}, or None for a residual cell."""
    if (y, d) == (0, 0):
        return None
    return 3 * z + _STATIC_CELLS.index((y, d))


def _substitute_static(const: float, cells: dict[tuple[int, int, int], float]) -> Piece:
    """Affine expression over all 8 cells -> piece over the 6 free coords,
    using p^{00z} = 1 - sum of the stratum's free cells."""
    coef = np.zeros(6)
    for (y, d, z), w in cells.items():
        idx = _static_index(y, d, z)
        if idx is None:
            const += w
            for cell in _STATIC_CELLS:
                coef[_static_index(*cell, z)] -= w
        else:
            coef[idx] += w
    return Piece(const, coef)


def manski_binary_spec() -> BoundsSpec:
    """Worst-case bounds on the average potential outcome of each treatment
    arm under a binary instrument: L(d) = max_z p^{1dz}, U(d) = min_z
    (1 - p^{0dz}). Piece order within an option is z=0 then z=1."""
    lower = tuple(
        tuple(_substitute_static(0.0, {(1, d, z): 1.0}) for z in (0, 1)) for d in (0, 1)
    )
    upper = tuple(
        tuple(_substitute_static(1.0, {(0, d, z): -1.0}) for z in (0, 1)) for d in (0, 1)
    )
    return BoundsSpec(lower, upper)


def manski_continuous_spec(y_low: float, y_high: float) -> BoundsSpec:
    """Worst-case bounds for a continuous outcome supported on
    [y_low, y_high]. Coordinates: (E[Y|D=0,Z=1]P(D=0|Z=1),
    E[Y|D=0,Z=0]P(D=0|Z=0), E[Y|D=1,Z=1]P(D=1|Z=1),
    E[Y|D=1,Z=0]P(D=1|Z=0), P(D=0|Z=1), P(D=0|Z=0))."""
    if not y_low < y_high:
        raise ValidationError(f"need y_low < y_high, got [{y_low}, {y_high}]")

    def pieces(fill):
        d0 = (
            Piece(fill, np.array([0.0, 1.0, 0.0, 0.0, 0.0, -fill])),
            Piece(fill, np.array([1.0, 0.0, 0.0, 0.0, -fill, 0.0])),
        )
        d1 = (
            Piece(0.0, np.array([0.0, 0.0, 0.0, 1.0, 0.0, fill])),
            Piece(0.0, np.array([0.0, 0.0, 1.0, 0.0, fill, 0.0])),
        )
        return (d0, d1)

    return BoundsSpec(pieces(y_low), pieces(y_high))


# sharp ATE bound systems under full independence, expressed over the raw
# cells p^{ydz}; the residual cells are substituted out below
_BP_LOWER = (
    {(1, 1, 1): 1, (0, 0, 0): 1, "const": -1},
    {(1, 1, 0): 1, (0, 0, 1): 1, "const": -1},
    {(1, 1, 0): 1, (1, 1, 1): -1, (1, 0, 1): -1, (0, 1, 0): -1, (1, 0, 0): -1},
    {(1, 1, 1): 1, (1, 1, 0): -1, (1, 0, 0): -1, (0, 1, 1): -1, (1, 0, 1): -1},
    {(0, 1, 1): -1, (1, 0, 1): -1},
    {(0, 1, 0): -1, (1, 0, 0): -1},
    {(0, 0, 1): 1, (0, 1, 1): -1, (1, 0, 1): -1, (0, 1, 0): -1, (0, 0, 0): -1},
    {(0, 0, 0): 1, (0, 1, 0): -1, (1, 0, 0): -1, (0, 1, 1): -1, (0, 0, 1): -1},
)
_BP_UPPER = (
    {(0, 1, 1): -1, (1, 0, 0): -1, "const": 1},
    {(0, 1, 0): -1, (1, 0, 1): -1, "const": 1},
    {(0, 1, 0): -1, (0, 1, 1): 1, (0, 0, 1): 1, (1, 1, 0): 1, (0, 0, 0): 1},
    {(0, 1, 1): -1, (1, 1, 1): 1, (0, 0, 1): 1, (0, 1, 0): 1, (0, 0, 0): 1},
    {(1, 1, 1): 1, (0, 0, 1): 1},
    {(1, 1, 0): 1, (0, 0, 0): 1},
    {(1, 0, 1): -1, (1, 1, 1): 1, (0, 0, 1): 1, (1, 1, 0): 1, (1, 0, 0): 1},
    {(1, 0, 0): -1, (1, 1, 0): 1, (0, 0, 0): 1, (1, 1, 1): 1, (1, 0, 1): 1},
)


def _bp_piece(raw: dict) -> Piece:
    cells = {k: float(v) for k, v in raw.items() if k != "const"}
    return _substitute_static(float(raw.get("const", 0.0)), cells)


def balke_pearl_ate_spec() -> BoundsSpec:
    """Sharp bounds on the ATE of a binary treatment under full instrument
    independence: eight lower and eight upper pieces for the single
    parameter."""
    lower = (tuple(_bp_piece(raw) for raw in _BP_LOWER),)
    upper = (tuple(_bp_piece(raw) for raw in _BP_UPPER),)
    return BoundsSpec(lower, upper)


def balke_pearl_raw_bounds(p6: np.ndarray) -> tuple[float, float]:
    """Direct evaluation of the displayed ATE bound systems (test oracle
    path; stays independent of the spec machinery)."""
    p100, p010, p110, p101, p011, p111 = np.asarray(p6, dtype=float)
    p000 = 1.0 - p100 - p010 - p110
    p001 = 1.0 - p101 - p011 - p111
    lower = max(
        p111 + p000 - 1,
        p110 + p001 - 1,
        p110 - p111 - p101 - p010 - p100,
        p111 - p110 - p100 - p011 - p101,
        -p011 - p101,
        -p010 - p100,
        p001 - p011 - p101 - p010 - p000,
        p000 - p010 - p100 - p011 - p001,
    )
    upper = min(
        1 - p011 - p100,
        1 - p010 - p101,
        -p010 + p011 + p001 + p110 + p000,
        -p011 + p111 + p001 + p010 + p000,
        p111 + p001,
        p110 + p000,
        -p101 + p111 + p001 + p110 + p100,
        -p100 + p110 + p000 + p111 + p101,
    )
    return float(lower), float(upper)


DYNTREAT_OPTIONS = ((1, 1), (1, 0), (0, 1), (0, 0))


def _dyn_index(y2: int, d1: int, d2: int, z: int) -> int | None:
    if (y2, d1, d2) == (0, 0, 0):
        return None
    return 7 * z + _DYN_CELLS.index((y2, d1, d2))


def _substitute_dyn(const: float, cells: dict) -> Piece:
    coef = np.zeros(14)
    for (y2, d1, d2, z), w in cells.items():
        idx = _dyn_index(y2, d1, d2, z)
        if idx is None:
            const += w
            for cell in _DYN_CELLS:
                coef[_dyn_index(*cell, z)] -= w
        else:
            coef[idx] += w
    return Piece(const, coef)


def dyntreat_spec() -> BoundsSpec:
    """Bounds on the average terminal potential outcome of a two-period
    treatment sequence with a first-period binary instrument.

    Options follow DYNTREAT_OPTIONS; per option the two pieces are the
    z-specific bounds L(d; z) = P(Y2=1, D=d | Z=z) and U(d; z) = L(d; z) +
    sum over d' != d of P(D=d' | Z=z). Coordinates are the 7 free
    (y2, d1, d2) cells of stratum z=0 followed by those of z=1.
    """
    lower, upper = [], []
    for d1, d2 in DYNTREAT_OPTIONS:
        lo, up = [], []
        for z in (0, 1):
            lo.append(_substitute_dyn(0.0, {(1, d1, d2, z): 1.0}))
            cells = {(1, d1, d2, z): 1.0}
            for dp1, dp2 in DYNTREAT_OPTIONS:
                if (dp1, dp2) == (d1, d2):
                    continue
                for y2 in (0, 1):
                    cells[(y2, dp1, dp2, z)] = cells.get((y2, dp1, dp2, z), 0.0) + 1.0
            up.append(_substitute_dyn(0.0, cells))
        lower.append(tuple(lo))
        upper.append(tuple(up))
    return BoundsSpec(tuple(lower), tuple(upper))


def dyntreat_dominance_poly(spec: BoundsSpec, d: int) -> Polyhedron:
    """Maximal-element event for the dynamic design: every other option's
    z-specific lower bound sits below each of d's z-specific upper bounds."""
    return membership_rows(spec, d, include_self=False)


# ---------------------------------------------------------------------------
# data and the reduced-form estimator


@dataclass(frozen=True)
class BinaryIvData:
    """Binary records (y, d, z); two-period designs carry (n, 2) y and d."""

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=np.int64)
        d = np.array(self.d, dtype=np.int64)
        z = np.array(self.z, dtype=np.int64)
        for name, arr in (("y", y), ("d", d), ("z", z)):
            if not np.isin(arr, (0, 1)).all():
                raise DataSchemaError(f"column {name} must be binary 0/1")
        if z.ndim != 1 or z.size == 0:
            raise DataSchemaError("z must be a nonempty 1-d column")
        if y.shape != d.shape or y.shape[0] != z.shape[0]:
            raise DataSchemaError(
                f"record shapes disagree: y {y.shape}, d {d.shape}, z {z.shape}"
            )
        if y.ndim == 2 and y.shape[1] != 2:
            raise DataSchemaError("two-period data needs exactly two y and d columns")
        if y.ndim > 2:
            raise DataSchemaError(f"y has unsupported shape {y.shape}")
        for name, arr in (("y", y), ("d", d), ("z", z)):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def is_dynamic(self) -> bool:
        return self.y.ndim == 2

    @classmethod
    def from_csv(cls, text: str) -> "BinaryIvData":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None:
            raise DataSchemaError("empty CSV")
        fields = [f.strip() for f in reader.fieldnames]
        rows = list(reader)
        if not rows:
            raise DataSchemaError("CSV has a header but no records")

        def column(name):
            try:
                return np.array([int(row[name]) for row in rows])
            except (KeyError, TypeError) as exc:
                raise DataSchemaError(f"missing column {name!r}") from exc
            except ValueError as exc:
                raise DataSchemaError(f"non-integer value in column {name!r}: {exc}") from exc

        if {"y", "d", "z"} <= set(fields):
            return cls(column("y"), column("d"), column("z"))
        if {"y1", "y2", "d1", "d2", "z"} <= set(fields):
            y = np.column_stack([column("y1"), column("y2")])
            d = np.column_stack([column("d1"), column("d2")])
            return cls(y, d, column("z"))
        raise DataSchemaError(
            f"CSV header must be y,d,z or y1,y2,d1,d2,z; got {fields}"
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        if self.is_dynamic:
            writer.writerow(["y1", "y2", "d1", "d2", "z"])
            for i in range(self.n):
                writer.writerow(
                    [self.y[i, 0], self.y[i, 1], self.d[i, 0], self.d[i, 1], self.z[i]]
                )
        else:
            writer.writerow(["y", "d", "z"])
            for i in range(self.n):
                writer.writerow([self.y[i], self.d[i], self.z[i]])
        return out.getvalue()


def stratum_frequencies(
    data: BinaryIvData, smoothing: float = 0.0, min_stratum: int = 5
) -> tuple[np.ndarray, list[tuple[int, np.ndarray]]]:
    """Free-cell frequencies per stratum: (stacked p_hat, [(n_z, pi_z)]).

    ``smoothing`` adds epsilon to every cell count (and cells*epsilon to the
    stratum total), keeping downstream covariances nonsingular when rare
    cells are empty.
    """
    if smoothing < 0:
        raise ValidationError(f"smoothing must be nonnegative, got {smoothing}")
    cells = _DYN_CELLS if data.is_dynamic else _STATIC_CELLS
    num_cells = len(cells) + 1
    strata = []
    for z in (0, 1):
        mask = data.z == z
        n_z = int(mask.sum())
        if n_z < min_stratum:
            raise StratumError(
                f"stratum z={z} has {n_z} records, below the minimum {min_stratum}"
            )
        if data.is_dynamic:
            codes = data.y[mask, 1] * 4 + data.d[mask, 0] * 2 + data.d[mask, 1]
            keys = [y2 * 4 + d1 * 2 + d2 for (y2, d1, d2) in cells]
        else:
            codes = data.y[mask] * 2 + data.d[mask]
            keys = [y * 2 + d for (y, d) in cells]
        counts = np.bincount(codes, minlength=8 if data.is_dynamic else 4)
        pi = (counts[keys] + smoothing) / (n_z + num_cells * smoothing)
        strata.append((n_z, pi))
    return np.concatenate([pi for _, pi in strata]), strata


def multinomial_sigma(pi: np.ndarray, share: float) -> np.ndarray:
    """Covariance block of sqrt(n) * (free-cell frequencies) for one stratum
    with population share ``share``."""
    return (np.diag(pi) - np.outer(pi, pi)) / share


def estimate_reduced_form(
    data: BinaryIvData,
    smoothing: float = 0.0,
    min_stratum: int = 5,
    lam_bar: float = 1e6,
) -> ReducedForm:
    """Cell frequencies and the covariance of sqrt(n)(p_hat - p).

    Within stratum z the free-cell probabilities get the multinomial
    covariance (diag(pi) - pi pi') / q_z with q_z the stratum share; strata
    are independent, so the full matrix is block diagonal.
    """
    p_hat, strata = stratum_frequencies(data, smoothing, min_stratum)
    n = data.n
    k = strata[0][1].shape[0]
    sigma = np.zeros((2 * k, 2 * k))
    for z, (n_z, pi) in enumerate(strata):
        sigma[z * k : (z + 1) * k, z * k : (z + 1) * k] = multinomial_sigma(pi, n_z / n)
    return ReducedForm(n=n, p_hat=p_hat, sigma_hat=sigma, lam_bar=lam_bar)


def catalog_spec(name: str, **kwargs) -> BoundsSpec:
    """Builder lookup for the CLI catalog names."""
    if name == "manski-binary":
        return manski_binary_spec()
    if name == "manski-continuous":
        return manski_continuous_spec(
            kwargs.get("y_low", 0.0), kwargs.get("y_high", 1.0)
        )
    if name == "balke-pearl":
        return balke_pearl_ate_spec()
    if name == "dyntreat":
        return dyntreat_spec()
    raise ValidationError(f"unknown catalog spec {name!r}; choose from {CATALOG_NAMES}")
