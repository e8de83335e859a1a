"""Monte Carlo harness: DGP sampling, replication engine, experiment reports.

Replication r of a run with master seed s draws from a counter-based Philox
stream jumped r times, so results are independent of execution order and of
the worker count; aggregation is indexed by replication. Serialized reports
deliberately omit wall-clock time so identical (config, seed) runs are
byte-identical.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .catalog import (
    BinaryIvData,
    balke_pearl_ate_spec,
    estimate_reduced_form,
    manski_binary_spec,
    multinomial_sigma,
    stratum_frequencies,
)
from .ci import compute_cis
from .errors import NumericalError, ValidationError
from .model import BoundsSpec, ReducedForm, evaluate_bounds
from .select import fixed_target, rule_cms, rule_weighted

LENGTH_QUANTILES = (5, 25, 50, 75, 95)

_CELL_Y = np.array([1, 0, 1, 0])
_CELL_D = np.array([0, 1, 1, 0])


@dataclass(frozen=True)
class Dgp:
    """Stratified multinomial over (Y, D) given the instrument Z."""

    label: str
    p_true: np.ndarray
    q_z: float = 0.5
    n: int = 100

    def __post_init__(self):
        p = np.array(self.p_true, dtype=float)
        if p.shape != (6,):
            raise ValidationError(f"p_true must be the 6 free cells, got shape {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "p_true", p)
        if not 0.0 <= self.q_z <= 1.0:
            raise ValidationError(f"q_z must be in [0, 1], got {self.q_z}")
        if self.n < 1:
            raise ValidationError("n must be positive")
        for z in (0, 1):
            cells = p[3 * z : 3 * z + 3]
            if cells.min() < 0 or cells.sum() > 1.0 + 1e-12:
                raise ValidationError(
                    f"stratum z={z} cells {cells.tolist()} are not a subprobability vector"
                )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "p_true": self.p_true.tolist(),
            "q_z": self.q_z,
            "n": self.n,
        }

    def sigma(self) -> np.ndarray:
        """Asymptotic covariance of sqrt(n)(p_hat - p) at the true cells."""
        out = np.zeros((6, 6))
        for z in (0, 1):
            share = self.q_z if z == 1 else 1.0 - self.q_z
            out[3 * z : 3 * z + 3, 3 * z : 3 * z + 3] = multinomial_sigma(
                self.p_true[3 * z : 3 * z + 3], share
            )
        return out


def sample(dgp: Dgp, rng: np.random.Generator) -> BinaryIvData:
    """n i.i.d. draws: Z ~ Bernoulli(q_z), then the stratum's 4-cell
    multinomial with the residual (0,0) cell closing each stratum."""
    z = (rng.random(dgp.n) < dgp.q_z).astype(np.int64)
    u = rng.random(dgp.n)
    cums = np.cumsum(dgp.p_true.reshape(2, 3), axis=1)
    cell = (u[:, None] >= cums[z]).sum(axis=1)
    return BinaryIvData(y=_CELL_Y[cell], d=_CELL_D[cell], z=z)


@dataclass(frozen=True)
class RuleSpec:
    """Picklable description of a selection rule for the engine and configs."""

    name: str
    w_lower: float = 1.0
    w_upper: float = 0.0
    m: int = 1
    d_star: int = 0

    def apply(self, spec: BoundsSpec, rf, rng):
        if self.name == "maxlower":
            return rule_weighted(spec, rf, 1.0, 0.0)
        if self.name == "maxupper":
            return rule_weighted(spec, rf, 0.0, 1.0)
        if self.name == "weighted":
            return rule_weighted(spec, rf, self.w_lower, self.w_upper)
        if self.name == "cms":
            return rule_cms(spec, rf, self.m, rng)
        if self.name == "fixed":
            return fixed_target(spec, rf, self.d_star)
        raise ValidationError(f"unknown rule {self.name!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "RuleSpec":
        if isinstance(doc, str):
            return cls(name=doc)
        return cls(**doc)


@dataclass
class RepRecord:
    rep: int
    d_hat: int = -1
    intervals: dict = field(default_factory=dict)  # kind -> (lower, upper, crossed)
    containment_violation: bool = False
    error: str | None = None


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(rep))


def _derived_seed(seed: int, tag: int) -> int:
    state = np.random.SeedSequence(entropy=seed, spawn_key=(tag,)).generate_state(2)
    return (int(state[0]) << 32) | int(state[1])


@dataclass(frozen=True)
class EngineConfig:
    spec_name: str  # "manski-binary" or "balke-pearl"
    dgp: Dgp
    rule: RuleSpec
    kinds: tuple[str, ...]
    alpha: float
    seed: int
    smoothing: float = 0.0
    draws: int = 200_000
    beta_frac: float = 0.1
    # "true" plugs the DGP's asymptotic covariance into the intervals (the
    # experiments' covariance is then constant across replications, so one
    # critical-value simulation serves the whole run); "estimate" re-estimates
    # it from each sample and requires smoothing > 0 when rare cells can be
    # empty
    sigma_mode: str = "true"
    # "gaussian" draws the reduced form from its limiting normal distribution
    # (the experiment design behind the reported coverage table); "multinomial"
    # samples individual records and estimates the reduced form from them
    data_mode: str = "gaussian"

    def build_spec(self) -> BoundsSpec:
        return manski_binary_spec() if self.spec_name == "manski-binary" else balke_pearl_ate_spec()

    def draw_reduced_form(self, rng: np.random.Generator) -> ReducedForm:
        if self.data_mode == "gaussian":
            sigma = self.dgp.sigma()
            chol = np.linalg.cholesky(sigma)
            p_hat = self.dgp.p_true + chol @ rng.standard_normal(6) / math.sqrt(self.dgp.n)
            return ReducedForm(n=self.dgp.n, p_hat=p_hat, sigma_hat=sigma)
        if self.data_mode != "multinomial":
            raise ValidationError(f"unknown data_mode {self.data_mode!r}")
        data = sample(self.dgp, rng)
        if self.sigma_mode == "estimate":
            return estimate_reduced_form(data, smoothing=self.smoothing)
        if self.sigma_mode != "true":
            raise ValidationError(f"unknown sigma_mode {self.sigma_mode!r}")
        p_hat, _ = stratum_frequencies(data, self.smoothing)
        return ReducedForm(n=data.n, p_hat=p_hat, sigma_hat=self.dgp.sigma())


def _run_one(cfg: EngineConfig, spec: BoundsSpec, rep: int) -> RepRecord:
    rec = RepRecord(rep=rep)
    try:
        rng = _rep_rng(cfg.seed, rep)
        rf = cfg.draw_reduced_form(rng)
        sel = cfg.rule.apply(spec, rf, rng)
        rec.d_hat = sel.d_hat
        a_half = cfg.alpha / 2.0
        cis = compute_cis(
            spec,
            rf,
            sel,
            kinds=cfg.kinds,
            alpha1=a_half,
            alpha2=a_half,
            beta_frac=cfg.beta_frac,
            draws=cfg.draws,
            seed=_derived_seed(cfg.seed, 0xC5),
        )
        for kind, ci in cis.items():
            rec.intervals[kind] = (ci.lower, ci.upper, ci.is_crossed)
        if "hybrid" in cis and "projection" in cis:
            hyb = cis["hybrid"]
            lo_beta = hyb.diagnostics["proj_beta_lower"]
            up_beta = hyb.diagnostics["proj_beta_upper"]
            tol = 1e-9 * (1.0 + abs(lo_beta) + abs(up_beta))
            rec.containment_violation = (
                hyb.lower < lo_beta - tol or hyb.upper > up_beta + tol
            )
    except Exception as exc:  # per-replication failures are data, not crashes
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_chunk(cfg: EngineConfig, reps: list[int]) -> list[RepRecord]:
    spec = cfg.build_spec()
    return [_run_one(cfg, spec, r) for r in reps]


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("BOUNDSELECT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_replications(cfg: EngineConfig, reps: int, threads: int | None = None) -> list[RepRecord]:
    threads = _resolve_threads(threads)
    indices = list(range(reps))
    if threads == 1:
        return _run_chunk(cfg, indices)
    chunks = [indices[i::threads] for i in range(threads)]
    chunks = [c for c in chunks if c]
    records: list[RepRecord | None] = [None] * reps
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        for result in pool.map(_run_chunk, [cfg] * len(chunks), chunks):
            for rec in result:
                records[rec.rep] = rec
    return records  # type: ignore[return-value]


@dataclass
class ExperimentReport:
    experiment: str
    dgp: dict
    rule: dict
    kinds: tuple[str, ...]
    alpha: float
    reps: int
    seed: int
    smoothing: float
    draws: int
    beta_frac: float
    sigma_mode: str = "true"
    data_mode: str = "gaussian"
    coverage: dict = field(default_factory=dict)
    per_option: dict = field(default_factory=dict)
    lengths: dict = field(default_factory=dict)
    power: dict | None = None
    failures: int = 0
    failure_messages: list = field(default_factory=list)
    containment_violations: int = 0
    runtime_seconds: float = 0.0  # in-memory only, excluded from reports

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("runtime_seconds")  # wall clock would break byte-determinism
        doc["version"] = __version__
        return doc


def _summarize(cfg: EngineConfig, records: list[RepRecord], experiment: str) -> ExperimentReport:
    reps = len(records)
    failures = [r for r in records if r.error is not None]
    if len(failures) > 0.01 * reps:
        raise NumericalError(
            f"{len(failures)} of {reps} replications failed; first: {failures[0].error}"
        )
    ok = [r for r in records if r.error is None]
    spec = cfg.build_spec()
    truth = evaluate_bounds(spec, cfg.dgp.p_true)
    report = ExperimentReport(
        experiment=experiment,
        dgp=cfg.dgp.to_dict(),
        rule=cfg.rule.to_dict(),
        kinds=cfg.kinds,
        alpha=cfg.alpha,
        reps=reps,
        seed=cfg.seed,
        smoothing=cfg.smoothing,
        draws=cfg.draws,
        beta_frac=cfg.beta_frac,
        sigma_mode=cfg.sigma_mode,
        data_mode=cfg.data_mode,
        failures=len(failures),
        failure_messages=[r.error for r in failures[:5]],
        containment_violations=sum(r.containment_violation for r in ok),
    )

    for kind in cfg.kinds:
        covered = 0
        crossed = 0
        lengths = []
        for rec in ok:
            lo, hi, is_crossed = rec.intervals[kind]
            t_lo, t_hi = truth.interval(rec.d_hat)
            if is_crossed:
                crossed += 1
            elif lo <= t_lo and t_hi <= hi:
                covered += 1
            if not is_crossed:
                lengths.append(hi - lo)
        eff = len(ok)
        freq = covered / eff if eff else math.nan
        report.coverage[kind] = {
            "coverage": freq,
            "mc_se": math.sqrt(freq * (1.0 - freq) / eff) if eff else math.nan,
            "covered": covered,
            "effective_reps": eff,
            "crossed": crossed,
        }
        if lengths:
            qs = np.percentile(np.array(lengths), LENGTH_QUANTILES, method="lower")
            report.lengths[kind] = {
                "quantiles": {str(q): float(v) for q, v in zip(LENGTH_QUANTILES, qs)},
                "crossed_excluded": crossed,
            }

    if "projection" in report.lengths:
        proj = report.lengths["projection"]["quantiles"]
        for kind in report.lengths:
            report.lengths[kind]["ratio_vs_projection"] = {
                str(q): report.lengths[kind]["quantiles"][str(q)] / proj[str(q)]
                for q in LENGTH_QUANTILES
            }

    for d in sorted({rec.d_hat for rec in ok}):
        sub = [rec for rec in ok if rec.d_hat == d]
        entry = {"count": len(sub)}
        for kind in cfg.kinds:
            cov = sum(
                1
                for rec in sub
                if not rec.intervals[kind][2]
                and rec.intervals[kind][0] <= truth.interval(d)[0]
                and truth.interval(d)[1] <= rec.intervals[kind][1]
            )
            entry[kind] = cov / len(sub)
        report.per_option[str(d)] = entry
    return report


def coverage_experiment(
    dgp: Dgp,
    rule: RuleSpec | None = None,
    kinds: tuple[str, ...] = ("conventional", "conditional", "projection", "hybrid"),
    alpha: float = 0.05,
    reps: int = 2000,
    seed: int = 0,
    smoothing: float = 0.0,
    draws: int = 200_000,
    beta_frac: float = 0.1,
    threads: int | None = None,
    spec_name: str = "manski-binary",
    sigma_mode: str = "true",
    data_mode: str = "gaussian",
) -> ExperimentReport:
    """Unconditional coverage of [L(d_hat), U(d_hat)] at the true parameter,
    with the interval evaluated at the realized selection; crossed or failed
    intervals count against coverage. Length quantiles ride along for free.
    """
    if reps < 100:
        raise ValidationError("coverage experiments need reps >= 100")
    rule = rule or RuleSpec("maxlower")
    cfg = EngineConfig(
        spec_name, dgp, rule, tuple(kinds), alpha, seed, smoothing, draws, beta_frac,
        sigma_mode, data_mode,
    )
    start = time.perf_counter()
    records = run_replications(cfg, reps, threads)
    report = _summarize(cfg, records, "coverage")
    report.runtime_seconds = time.perf_counter() - start
    return report


def length_experiment(
    dgp: Dgp,
    rule: RuleSpec | None = None,
    reps: int = 2000,
    alpha: float = 0.05,
    kinds: tuple[str, ...] = ("conditional", "projection", "hybrid"),
    seed: int = 0,
    smoothing: float = 0.0,
    draws: int = 200_000,
    beta_frac: float = 0.1,
    threads: int | None = None,
    sigma_mode: str = "true",
    data_mode: str = "gaussian",
) -> ExperimentReport:
    """Same replication loop; the headline table is the per-kind length
    quantiles and their ratios against the projection interval."""
    rule = rule or RuleSpec("maxlower")
    kinds = tuple(kinds) if "projection" in kinds else tuple(kinds) + ("projection",)
    cfg = EngineConfig(
        "manski-binary", dgp, rule, kinds, alpha, seed, smoothing, draws, beta_frac,
        sigma_mode, data_mode,
    )
    start = time.perf_counter()
    records = run_replications(cfg, reps, threads)
    report = _summarize(cfg, records, "length")
    report.runtime_seconds = time.perf_counter() - start
    return report


def power_experiment(
    dgp: Dgp,
    w0_grid,
    alpha: float = 0.05,
    reps: int = 1000,
    seed: int = 0,
    smoothing: float = 0.0,
    draws: int = 200_000,
    beta_frac: float = 0.1,
    threads: int | None = None,
    sigma_mode: str = "true",
    data_mode: str = "gaussian",
) -> ExperimentReport:
    """Rejection frequency of the hybrid-interval test of H0: effect = w0
    over a grid, for the a-priori-fixed sharp ATE bounds; reports the true
    identified interval alongside."""
    w0_grid = [float(w) for w in w0_grid]
    rule = RuleSpec("fixed", d_star=0)
    cfg = EngineConfig(
        "balke-pearl", dgp, rule, ("hybrid",), alpha, seed, smoothing, draws, beta_frac,
        sigma_mode, data_mode,
    )
    start = time.perf_counter()
    records = run_replications(cfg, reps, threads)
    report = _summarize(cfg, records, "power")
    spec = cfg.build_spec()
    truth = evaluate_bounds(spec, dgp.p_true)
    ok = [r for r in records if r.error is None]
    rejections = []
    ses = []
    for w0 in w0_grid:
        rej = 0
        for rec in ok:
            lo, hi, crossed = rec.intervals["hybrid"]
            if crossed or w0 < lo or w0 > hi:
                rej += 1
        freq = rej / len(ok) if ok else math.nan
        rejections.append(freq)
        ses.append(math.sqrt(freq * (1.0 - freq) / len(ok)) if ok else math.nan)
    report.power = {
        "w0": w0_grid,
        "rejection": rejections,
        "mc_se": ses,
        "true_interval": list(truth.interval(0)),
    }
    report.runtime_seconds = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# report serialization; repr() keeps floats round-trippable and deterministic


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _provenance_lines(provenance: dict | None) -> list[str]:
    prov = {"tool": "boundselect", "version": __version__}
    prov.update(provenance or {})
    return ["# " + " ".join(f"{k}={v}" for k, v in prov.items())]


def coverage_csv(reports: list[ExperimentReport], provenance: dict | None = None) -> str:
    lines = _provenance_lines(provenance)
    lines.append("dgp,kind,coverage,mc_se,effective_reps,failures,crossed")
    for rep in reports:
        for kind, row in rep.coverage.items():
            lines.append(
                ",".join(
                    [
                        rep.dgp["label"],
                        kind,
                        _fmt(row["coverage"]),
                        _fmt(row["mc_se"]),
                        str(row["effective_reps"]),
                        str(rep.failures),
                        str(row["crossed"]),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def length_csv(reports: list[ExperimentReport], provenance: dict | None = None) -> str:
    lines = _provenance_lines(provenance)
    lines.append("dgp,kind,quantile,length,ratio_vs_projection")
    for rep in reports:
        for kind, row in rep.lengths.items():
            for q in LENGTH_QUANTILES:
                ratio = row.get("ratio_vs_projection", {}).get(str(q), math.nan)
                lines.append(
                    ",".join(
                        [
                            rep.dgp["label"],
                            kind,
                            str(q),
                            _fmt(row["quantiles"][str(q)]),
                            _fmt(ratio),
                        ]
                    )
                )
    return "\n".join(lines) + "\n"


def power_csv(reports: list[ExperimentReport], provenance: dict | None = None) -> str:
    lines = _provenance_lines(provenance)
    lines.append("dgp,w0,rejection,mc_se")
    for rep in reports:
        if rep.power is None:
            continue
        for w0, freq, se in zip(rep.power["w0"], rep.power["rejection"], rep.power["mc_se"]):
            lines.append(",".join([rep.dgp["label"], _fmt(w0), _fmt(freq), _fmt(se)]))
    return "\n".join(lines) + "\n"


def reports_json(reports: list[ExperimentReport], provenance: dict | None = None) -> str:
    doc = {
        "provenance": dict({"tool": "boundselect", "version": __version__}, **(provenance or {})),
        "reports": [rep.to_json_dict() for rep in reports],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def gnuplot_dat(report: ExperimentReport) -> str:
    """Whitespace table for plotting: power grid, or length ratios."""
    lines = [f"# boundselect {report.experiment} dgp={report.dgp['label']}"]
    if report.power is not None:
        lines.append("# w0 rejection mc_se")
        for w0, freq, se in zip(
            report.power["w0"], report.power["rejection"], report.power["mc_se"]
        ):
            lines.append(f"{_fmt(w0)} {_fmt(freq)} {_fmt(se)}")
        lo, hi = report.power["true_interval"]
        lines.append(f"# true_interval {_fmt(lo)} {_fmt(hi)}")
    else:
        lines.append("# quantile " + " ".join(report.lengths.keys()))
        for q in LENGTH_QUANTILES:
            vals = [
                _fmt(report.lengths[kind].get("ratio_vs_projection", {}).get(str(q), math.nan))
                for kind in report.lengths
            ]
            lines.append(f"{q} " + " ".join(vals))
    return "\n".join(lines) + "\n"
