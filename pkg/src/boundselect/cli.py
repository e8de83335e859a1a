"""Command-line front end: compute intervals from data, run experiments from
configs, convert latent LPs to bound families, validate inputs.

Exit codes: 0 success, 2 validation failure, 3 numerical failure. Failures
emit a machine-readable ``{"error": {"code", "message"}}`` object on stderr.
Outputs carry a provenance header (tool version, config hash, master seed)
and contain no wall-clock fields, so identical configs and seeds reproduce
byte-identical files regardless of thread count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import (
    BinaryIvData,
    CATALOG_NAMES,
    catalog_spec,
    estimate_reduced_form,
)
from .ci import DEFAULT_BETA_FRAC, DEFAULT_DRAWS, compute_cis
from .errors import BoundSelectError, NumericalError, ValidationError
from .lpbounds import DEFAULT_SUBSET_CAP, LatentLp, lp_to_bounds_spec
from .model import BoundsSpec, undominated_set
from .sim import (
    Dgp,
    RuleSpec,
    coverage_experiment,
    coverage_csv,
    gnuplot_dat,
    length_csv,
    length_experiment,
    power_csv,
    power_experiment,
    reports_json,
)


def _config_hash(doc) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _parse_rule(text: str) -> RuleSpec:
    name, _, arg = text.partition(":")
    if name == "maxlower":
        return RuleSpec("maxlower")
    if name == "maxupper":
        return RuleSpec("maxupper")
    if name == "weighted":
        try:
            w_lower, w_upper = (float(x) for x in arg.split(","))
        except ValueError as exc:
            raise ValidationError(f"weighted rule needs 'weighted:WL,WU', got {text!r}") from exc
        return RuleSpec("weighted", w_lower=w_lower, w_upper=w_upper)
    if name == "cms":
        return RuleSpec("cms", m=int(arg) if arg else 1)
    if name == "fixed":
        return RuleSpec("fixed", d_star=int(arg) if arg else 0)
    raise ValidationError(f"unknown rule {text!r}")


def _load_spec(args) -> BoundsSpec:
    if args.catalog:
        kwargs = {}
        if args.catalog == "manski-continuous":
            kwargs = {"y_low": args.y_low, "y_high": args.y_high}
        return catalog_spec(args.catalog, **kwargs)
    if args.spec:
        return BoundsSpec.from_json(Path(args.spec).read_text())
    raise ValidationError("provide --catalog or --spec")


def cmd_ci(args) -> int:
    spec = _load_spec(args)
    data = BinaryIvData.from_csv(Path(args.data).read_text())
    rf = estimate_reduced_form(data, smoothing=args.smoothing)
    rule = _parse_rule(args.rule)
    rng = np.random.default_rng(args.seed)
    sel = rule.apply(spec, rf, rng)
    a_half = args.alpha / 2.0
    cis = compute_cis(
        spec,
        rf,
        sel,
        alpha1=a_half,
        alpha2=a_half,
        beta_frac=args.beta_frac,
        draws=args.draws,
        seed=args.seed,
    )
    uset = undominated_set(spec, rf)
    report = {
        "provenance": {
            "tool": "boundselect",
            "version": __version__,
            "seed": args.seed,
            "config_hash": _config_hash(vars(args) | {"func": None}),
        },
        "n": rf.n,
        "p_hat": rf.p_hat.tolist(),
        "sigma_hat": rf.sigma_hat.tolist(),
        "undominated_options": list(uset.options),
        "selection": {
            "rule": sel.rule,
            "d_hat": sel.d_hat,
            "j_lower": sel.j_lower,
            "j_upper": sel.j_upper,
            "gamma_lower": list(sel.gamma_lower),
            "gamma_upper": list(sel.gamma_upper),
        },
        "intervals": {kind: ci.to_dict() for kind, ci in cis.items()},
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _dgps_from_config(doc) -> list[Dgp]:
    return [
        Dgp(
            label=entry.get("label", f"dgp{i}"),
            p_true=np.array(entry["p_true"], dtype=float),
            q_z=entry.get("q_z", 0.5),
            n=entry.get("n", 100),
        )
        for i, entry in enumerate(doc["dgps"])
    ]


def cmd_simulate(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config JSON: {exc}") from exc
    if args.reps is not None:
        doc["reps"] = args.reps
    if args.seed is not None:
        doc["seed"] = args.seed
    experiment = doc.get("experiment", "coverage")
    rule = RuleSpec.from_dict(doc.get("rule", "maxlower"))
    common = dict(
        alpha=doc.get("alpha", 0.05),
        reps=doc.get("reps", 2000),
        seed=doc.get("seed", 0),
        smoothing=doc.get("smoothing", 0.0),
        draws=doc.get("draws", 200_000),
        beta_frac=doc.get("beta_frac", DEFAULT_BETA_FRAC),
        sigma_mode=doc.get("sigma", "true"),
        data_mode=doc.get("data", "gaussian"),
        threads=args.threads,
    )
    reports = []
    for dgp in _dgps_from_config(doc):
        if experiment == "coverage":
            rep = coverage_experiment(
                dgp, rule, kinds=tuple(doc.get("kinds", ("conventional", "conditional", "projection", "hybrid"))), **common
            )
        elif experiment == "length":
            rep = length_experiment(
                dgp, rule, kinds=tuple(doc.get("kinds", ("conditional", "projection", "hybrid"))), **common
            )
        elif experiment == "power":
            rep = power_experiment(dgp, doc["w0_grid"], **common)
        else:
            raise ValidationError(f"unknown experiment {experiment!r}")
        reports.append(rep)
        print(
            f"[{experiment}] {dgp.label}: reps={rep.reps} failures={rep.failures} "
            f"runtime={rep.runtime_seconds:.1f}s",
            file=sys.stderr,
        )

    prefix = Path(args.out_prefix or doc.get("output_prefix", "boundselect_out"))
    prefix.parent.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": _config_hash(doc), "seed": common["seed"]}
    if experiment == "coverage":
        csv_text = coverage_csv(reports, provenance)
    elif experiment == "length":
        csv_text = length_csv(reports, provenance)
    else:
        csv_text = power_csv(reports, provenance)
    Path(f"{prefix}_{experiment}.csv").write_text(csv_text)
    Path(f"{prefix}.json").write_text(reports_json(reports, provenance) + "\n")
    if experiment in ("length", "power"):
        for rep in reports:
            Path(f"{prefix}_{rep.dgp['label']}.dat").write_text(gnuplot_dat(rep))
    return 0


def cmd_lp2spec(args) -> int:
    lp = LatentLp.from_json(Path(args.input).read_text())
    spec = lp_to_bounds_spec(lp, subset_cap=args.cap)
    Path(args.out).write_text(spec.to_json() + "\n")
    summary = {
        "options": spec.num_options,
        "dim_p": spec.dim_p,
        "j_lower": spec.j_lower,
        "j_upper": spec.j_upper,
        "output": str(args.out),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    checked = []
    if args.spec:
        BoundsSpec.from_json(Path(args.spec).read_text())
        checked.append(f"spec {args.spec}")
    if args.data:
        data = BinaryIvData.from_csv(Path(args.data).read_text())
        checked.append(f"data {args.data} ({data.n} records)")
    if args.latent:
        LatentLp.from_json(Path(args.latent).read_text())
        checked.append(f"latent {args.latent}")
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        _dgps_from_config(doc)
        RuleSpec.from_dict(doc.get("rule", "maxlower"))
        alpha = doc.get("alpha", 0.05)
        if not 0.0 < alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
        checked.append(f"config {args.config}")
    if not checked:
        raise ValidationError("nothing to validate; pass --spec/--data/--latent/--config")
    for line in checked:
        print(f"ok: {line}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boundselect",
        description="Confidence intervals for interval-identified parameters selected from data",
    )
    parser.add_argument("--version", action="version", version=f"boundselect {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ci = sub.add_parser("ci", help="compute intervals from a data file")
    p_ci.add_argument("--catalog", choices=CATALOG_NAMES)
    p_ci.add_argument("--spec", help="bounds spec JSON file")
    p_ci.add_argument("--data", required=True, help="CSV with header y,d,z (or y1,y2,d1,d2,z)")
    p_ci.add_argument("--rule", default="maxlower", help="maxlower|maxupper|weighted:WL,WU|cms:M|fixed:D")
    p_ci.add_argument("--alpha", type=float, default=0.05)
    p_ci.add_argument("--beta-frac", type=float, default=DEFAULT_BETA_FRAC)
    p_ci.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    p_ci.add_argument("--seed", type=int, default=0)
    p_ci.add_argument("--smoothing", type=float, default=0.0)
    p_ci.add_argument("--y-low", type=float, default=0.0)
    p_ci.add_argument("--y-high", type=float, default=1.0)
    p_ci.add_argument("--out", help="write the JSON report here instead of stdout")
    p_ci.set_defaults(func=cmd_ci)

    p_sim = sub.add_parser("simulate", help="run experiments from a config file")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--reps", type=int, help="override config reps")
    p_sim.add_argument("--seed", type=int, help="override config seed")
    p_sim.add_argument("--threads", type=int, help="worker count (default: BOUNDSELECT_THREADS or cores)")
    p_sim.add_argument("--out-prefix", help="output path prefix")
    p_sim.set_defaults(func=cmd_simulate)

    p_lp = sub.add_parser("lp2spec", help="convert a latent LP to a bounds spec")
    p_lp.add_argument("--input", required=True, help="latent LP JSON {A, B}")
    p_lp.add_argument("--out", required=True, help="bounds spec JSON output")
    p_lp.add_argument("--cap", type=int, default=DEFAULT_SUBSET_CAP)
    p_lp.set_defaults(func=cmd_lp2spec)

    p_val = sub.add_parser("validate", help="validate inputs without running")
    p_val.add_argument("--spec")
    p_val.add_argument("--data")
    p_val.add_argument("--latent")
    p_val.add_argument("--config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        _emit_error(exc)
        return 2
    except NumericalError as exc:
        _emit_error(exc)
        return 3
    except BoundSelectError as exc:  # pragma: no cover - defensive
        _emit_error(exc)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(
            json.dumps({"error": {"code": "IO", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 2


def _emit_error(exc: BoundSelectError):
    print(
        json.dumps({"error": {"code": exc.code, "message": str(exc)}}),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
