"""Command-line front end.

Subcommands:
  audit     compute metrics, intervals, and the threshold test on a table
  validate  run the coverage / adjudication / bootstrap validation suites
  plotdata  turn a JSON report into a CSV series for external plotting

Exit codes are a stable contract: 0 the run completed, 1 usage or
configuration errors, 2 the data could not support the computation
(empty inputs, degenerate cells, integrity failures).

Every text summary prints the confidence interval next to the point
estimate: an audit number without its uncertainty is not reportable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import (
    DegenerateDenominator,
    DegenerateDistribution,
    DigestMismatch,
    EmptyFile,
    EmptyInput,
    FairnessAuditError,
    InvalidAlpha,
    InvalidSchema,
    IoError,
    LabelsMissing,
    MissingColumn,
    MixedLabelPresence,
    NetworkError,
    RaggedRow,
    TooManyDegenerateResamples,
    UnknownPreset,
    UnknownReferenceGroup,
    UnmappableValue,
    UnreadableReport,
    ZeroSigma,
)
from .ingest import (
    SchemaConfig,
    apply_schema_multigroup,
    fetch_dataset,
    load_table,
    parse_table,
)
from .metrics import (
    CellCounts,
    Metric,
    MetricEstimate,
    count_cells,
    estimate_metric,
    pairwise_audits,
    statistical_parity_gap,
    test_disparate_impact,
)
from .validation import (
    CellDistribution,
    adjudicate_matrix,
    bootstrap_sigma,
    coverage_simulation,
    default_scenario,
    true_metric_value,
)

REPORT_SCHEMA_VERSION = "1"

_USAGE_ERRORS = (
    UnknownPreset,
    InvalidSchema,
    MissingColumn,
    IoError,
    UnreadableReport,
    InvalidAlpha,
    UnknownReferenceGroup,
)
_DATA_ERRORS = (
    EmptyInput,
    EmptyFile,
    RaggedRow,
    UnmappableValue,
    MixedLabelPresence,
    LabelsMissing,
    DegenerateDenominator,
    ZeroSigma,
    DigestMismatch,
    NetworkError,
    DegenerateDistribution,
    TooManyDegenerateResamples,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairaudit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fairaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="audit a table or preset")
    audit.add_argument("--data", help="delimited text file to audit")
    audit.add_argument("--schema", help="JSON schema mapping columns to (g, Y, S)")
    audit.add_argument("--preset", help="dataset preset id from the registry")
    audit.add_argument("--metric", default="all",
                       choices=["di", "di-true", "ca", "cu", "parity-gap", "all"])
    audit.add_argument("--alpha", type=float, default=0.05)
    audit.add_argument("--beta", type=float, default=None,
                       help="run the one-sided test against this threshold")
    audit.add_argument("--delimiter", default=",")
    audit.add_argument("--no-header", action="store_true")
    audit.add_argument("--group-col", help="multi-class group column for pairwise audits")
    audit.add_argument("--reference-group", help="reference group for pairwise audits")
    audit.add_argument("--cache-dir", help="dataset cache directory (default $FAIRAUDIT_DATA)")
    audit.add_argument("--offline", action="store_true", help="never touch the network")
    audit.add_argument("--out", help="write the JSON report here")
    audit.set_defaults(func=cmd_audit)

    validate = sub.add_parser("validate", help="run validation suites")
    vsub = validate.add_subparsers(dest="suite", required=True)

    cov = vsub.add_parser("coverage", help="Monte Carlo interval coverage")
    cov.add_argument("--metric", default="di", choices=[m.value for m in Metric])
    cov.add_argument("--n", type=int, default=5000)
    cov.add_argument("--reps", type=int, default=2000)
    cov.add_argument("--alpha", type=float, default=0.05)
    cov.add_argument("--seed", type=int, default=0)
    cov.add_argument("--dist", help="JSON file with {has_labels, probs} overriding the built-in scenario")
    cov.add_argument("--out", help="write the JSON report here")
    cov.set_defaults(func=cmd_validate_coverage)

    adj = vsub.add_parser("adjudicate", help="covariance closed form vs oracle")
    adj.add_argument("--metric", default="ca1", choices=["ca1", "ca0", "cu1", "cu0"])
    adj.add_argument("--trials", type=int, default=100)
    adj.add_argument("--seed", type=int, default=0)
    adj.add_argument("--out", help="write the JSON report here")
    adj.set_defaults(func=cmd_validate_adjudicate)

    boot = vsub.add_parser("bootstrap", help="bootstrap sigma vs closed-form sigma")
    boot.add_argument("--data", help="delimited text file")
    boot.add_argument("--schema", help="JSON schema file")
    boot.add_argument("--preset", help="dataset preset id")
    boot.add_argument("--metric", default="di", choices=[m.value for m in Metric])
    boot.add_argument("--resamples", type=int, default=500)
    boot.add_argument("--seed", type=int, default=0)
    boot.add_argument("--delimiter", default=",")
    boot.add_argument("--no-header", action="store_true")
    boot.add_argument("--cache-dir", help="dataset cache directory")
    boot.add_argument("--offline", action="store_true")
    boot.add_argument("--out", help="write the JSON report here")
    boot.set_defaults(func=cmd_validate_bootstrap)

    plot = sub.add_parser("plotdata", help="CSV series from a JSON report")
    plot.add_argument("--report", required=True, help="JSON report produced by audit or validate")
    plot.add_argument("--out", required=True, help="CSV output path")
    plot.set_defaults(func=cmd_plotdata)

    return parser


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(document: dict, path: str | None) -> None:
    if path:
        Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _cells_dict(cells: CellCounts) -> dict:
    out = {}
    for atom, count in cells.atoms():
        g, y, s = atom
        key = f"g{g}s{s}" if y is None else f"g{g}y{y}s{s}"
        out[key] = count
    return out


def _estimate_dict(est: MetricEstimate, group=None) -> dict:
    doc = {
        "metric": est.metric.value,
        "point": est.point,
        "sigma": est.sigma,
        "n": est.n,
        "alpha": est.ci.alpha,
        "lower": est.ci.lower,
        "upper": est.ci.upper,
        "warnings": list(est.warnings),
        "moments": list(est.moments.as_tuple()) if est.moments else None,
    }
    if group is not None:
        doc["group"] = str(group)
    return doc


def _load_audit_input(args):
    if args.preset and (args.data or args.schema):
        raise InvalidSchema("give either --preset or --data/--schema, not both")
    if args.preset:
        return fetch_dataset(args.preset, cache_dir=args.cache_dir, offline=args.offline)
    if not args.data or not args.schema:
        raise InvalidSchema("audit needs --preset, or both --data and --schema")
    schema = SchemaConfig.from_json_file(args.schema)
    return load_table(args.data, schema, delimiter=args.delimiter,
                      has_header=not args.no_header)


def _requested_metrics(choice: str, has_labels: bool) -> list[Metric]:
    if choice == "di":
        return [Metric.DI]
    if choice == "di-true":
        return [Metric.DI_TRUE]
    if choice == "ca":
        return [Metric.CA1, Metric.CA0]
    if choice == "cu":
        return [Metric.CU1, Metric.CU0]
    if choice == "parity-gap":
        return []
    if has_labels:
        return [Metric.DI, Metric.DI_TRUE, Metric.CA1, Metric.CA0, Metric.CU1, Metric.CU0]
    return [Metric.DI]


def cmd_audit(args) -> int:
    table = _load_audit_input(args)

    if args.reference_group is not None:
        return _cmd_audit_pairwise(args, table)

    cells = count_cells(list(table.records))
    metrics = _requested_metrics(args.metric, cells.has_labels)
    estimates = [estimate_metric(m, cells, args.alpha) for m in metrics]
    gap = None
    if args.metric in ("parity-gap", "all"):
        gap = statistical_parity_gap(cells)
    tests = []
    if args.beta is not None:
        tests = [(est, test_disparate_impact(est, args.beta, args.alpha))
                 for est in estimates]

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "audit",
        "tool": "fairaudit",
        "tool_version": __version__,
        "generated_at": _timestamp(),
        "dataset": {
            "source": table.source,
            "checksum": table.checksum,
            "n": cells.n,
            "n_dropped": table.n_dropped,
            "has_labels": cells.has_labels,
            "cells": _cells_dict(cells),
        },
        "alpha": args.alpha,
        "beta": args.beta,
        "metrics": [_estimate_dict(est) for est in estimates],
        "parity_gap": gap,
        "tests": [
            {
                "metric": est.metric.value,
                "beta": res.beta,
                "alpha": res.alpha,
                "statistic": res.statistic,
                "p_value": res.p_value,
                "reject_h0": res.reject_h0,
            }
            for est, res in tests
        ],
        "pairwise": None,
        "seed": None,
    }
    _write_json(report, args.out)

    print(f"fairaudit audit: {table.source} "
          f"(n={cells.n}, dropped={table.n_dropped})")
    level = 100 * (1 - args.alpha)
    for est in estimates:
        flags = f"  [{', '.join(est.warnings)}]" if est.warnings else ""
        print(f"  {est.metric.value:8s} {est.point:.4f}  "
              f"{level:g}% CI [{est.ci.lower:.4f}, {est.ci.upper:.4f}]{flags}")
    if gap is not None:
        print(f"  parity gap {gap:+.4f}")
    for est, res in tests:
        verdict = "reject H0" if res.reject_h0 else "fail to reject H0"
        print(f"  test {est.metric.value} <= {res.beta:g}: statistic {res.statistic:.3f}, "
              f"p={res.p_value:.4f} -> {verdict} at alpha={res.alpha:g}")
    return 0


def _cmd_audit_pairwise(args, table) -> int:
    if not args.data or not args.schema:
        raise InvalidSchema("pairwise audits need --data and --schema "
                            "(presets are binary-coded already)")
    schema = SchemaConfig.from_json_file(args.schema)
    raw = parse_table(args.data, delimiter=args.delimiter,
                      has_header=not args.no_header,
                      ragged_policy=schema.missing_policy)
    records = apply_schema_multigroup(raw, schema, group_column=args.group_col)
    results = pairwise_audits(records, args.reference_group, args.alpha)

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "audit",
        "tool": "fairaudit",
        "tool_version": __version__,
        "generated_at": _timestamp(),
        "dataset": {
            "source": str(args.data),
            "checksum": None,
            "n": len(records),
            "n_dropped": raw.n_dropped,
            "has_labels": schema.label_column is not None,
            "cells": {},
        },
        "alpha": args.alpha,
        "beta": args.beta,
        "metrics": [],
        "parity_gap": None,
        "tests": [],
        "pairwise": [_estimate_dict(est, group=g) for g, est in results],
        "seed": None,
    }
    _write_json(report, args.out)

    print(f"fairaudit pairwise audit vs reference {args.reference_group!r} "
          f"(n={len(records)})")
    level = 100 * (1 - args.alpha)
    for group, est in results:
        print(f"  {group!s:12s} di {est.point:.4f}  "
              f"{level:g}% CI [{est.ci.lower:.4f}, {est.ci.upper:.4f}]")
    return 0


def _load_distribution(path: str) -> CellDistribution:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return CellDistribution.from_flat(doc["probs"], bool(doc["has_labels"]))
    except OSError as err:
        raise IoError(f"cannot read distribution {path}: {err}") from err
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise InvalidSchema(f"distribution file {path} malformed: {err}") from err


def cmd_validate_coverage(args) -> int:
    metric = Metric(args.metric)
    dist = _load_distribution(args.dist) if args.dist else default_scenario(metric)
    report = coverage_simulation(dist, metric, args.n, args.reps, args.alpha, args.seed)
    truth = true_metric_value(dist, metric)
    document = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "validate-coverage",
        "tool": "fairaudit",
        "tool_version": __version__,
        "generated_at": _timestamp(),
        "seed": args.seed,
        "params": {"metric": metric.value, "n": args.n, "replicates": args.reps,
                   "alpha": args.alpha, "true_value": truth},
        "results": {
            "nominal": report.nominal,
            "empirical": report.empirical,
            "discarded": report.discarded,
        },
    }
    _write_json(document, args.out)
    print(f"coverage[{metric}]: nominal {report.nominal:.3f}, "
          f"empirical {report.empirical:.4f} over {args.reps} replicates "
          f"(n={args.n}, discarded={report.discarded}, seed={args.seed})")
    return 0


def cmd_validate_adjudicate(args) -> int:
    result = adjudicate_matrix(Metric(args.metric), args.trials, args.seed)
    document = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "validate-adjudicate",
        "tool": "fairaudit",
        "tool_version": __version__,
        "generated_at": _timestamp(),
        "seed": args.seed,
        "params": {"metric": result.metric.value, "trials": result.trials},
        "results": {
            "corrected_max_dev": result.corrected_max_dev,
            "sign_slipped_max_dev": result.sign_slipped_max_dev,
            "deviating_entries": [list(e) for e in result.deviating_entries],
        },
    }
    _write_json(document, args.out)
    print(f"adjudicate[{result.metric}]: corrected form max dev "
          f"{result.corrected_max_dev:.2e}; sign-slipped variant max dev "
          f"{result.sign_slipped_max_dev:.3g} at entries {list(result.deviating_entries)}")
    return 0


def cmd_validate_bootstrap(args) -> int:
    table = _load_audit_input(args)
    metric = Metric(args.metric)
    records = list(table.records)
    cells = count_cells(records)
    est = estimate_metric(metric, cells, 0.05)
    boot = bootstrap_sigma(records, metric, args.resamples, args.seed)
    gap = abs(boot - est.sigma) / est.sigma if est.sigma > 0 else float("nan")
    document = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "validate-bootstrap",
        "tool": "fairaudit",
        "tool_version": __version__,
        "generated_at": _timestamp(),
        "seed": args.seed,
        "params": {"metric": metric.value, "resamples": args.resamples,
                   "source": table.source, "n": cells.n},
        "results": {
            "closed_form_sigma": est.sigma,
            "bootstrap_sigma": boot,
            "relative_gap": gap,
        },
    }
    _write_json(document, args.out)
    print(f"bootstrap[{metric}]: closed-form sigma {est.sigma:.4f}, "
          f"bootstrap sigma {boot:.4f}, relative gap {gap:.2%}")
    return 0


# ---- plotdata ---------------------------------------------------------------

_COMMON_KEYS = {"schema_version", "kind", "tool", "tool_version", "generated_at", "seed"}
_AUDIT_KEYS = _COMMON_KEYS | {"dataset", "alpha", "beta", "metrics", "parity_gap",
                              "tests", "pairwise"}
_VALIDATE_KEYS = _COMMON_KEYS | {"params", "results"}
_METRIC_KEYS = {"metric", "point", "sigma", "n", "alpha", "lower", "upper",
                "warnings", "moments", "group"}


def _validate_report(doc: dict) -> str:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise UnreadableReport("not a fairaudit report")
    kind = doc["kind"]
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise UnreadableReport(f"unsupported schema_version {doc.get('schema_version')!r}")
    allowed = _AUDIT_KEYS if kind == "audit" else _VALIDATE_KEYS
    unknown = set(doc) - allowed
    if unknown:
        raise UnreadableReport(f"unknown report fields: {sorted(unknown)}")
    if kind == "audit":
        for entry in (doc.get("metrics") or []) + (doc.get("pairwise") or []):
            bad = set(entry) - _METRIC_KEYS
            if bad:
                raise UnreadableReport(f"unknown metric fields: {sorted(bad)}")
    return kind


def cmd_plotdata(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except OSError as err:
        raise UnreadableReport(f"cannot read report {args.report}: {err}") from err
    except json.JSONDecodeError as err:
        raise UnreadableReport(f"report {args.report} is not valid JSON: {err}") from err
    kind = _validate_report(doc)

    rows: list[tuple[str, float, float, float]] = []
    if kind == "audit":
        for entry in doc.get("metrics") or []:
            rows.append((entry["metric"], entry["point"], entry["lower"], entry["upper"]))
        for entry in doc.get("pairwise") or []:
            rows.append((f"{entry['metric']}:{entry['group']}",
                         entry["point"], entry["lower"], entry["upper"]))
    elif kind == "validate-coverage":
        p = doc["results"]["empirical"]
        reps = doc["params"]["replicates"]
        half = 1.959963984540054 * (p * (1 - p) / reps) ** 0.5
        rows.append((f"coverage:{doc['params']['metric']}", p, p - half, p + half))
    elif kind == "validate-adjudicate":
        r = doc["results"]
        rows.append(("corrected_max_dev", r["corrected_max_dev"],
                     r["corrected_max_dev"], r["corrected_max_dev"]))
        rows.append(("sign_slipped_max_dev", r["sign_slipped_max_dev"],
                     r["sign_slipped_max_dev"], r["sign_slipped_max_dev"]))
    elif kind == "validate-bootstrap":
        r = doc["results"]
        rows.append(("closed_form_sigma", r["closed_form_sigma"],
                     r["closed_form_sigma"], r["closed_form_sigma"]))
        rows.append(("bootstrap_sigma", r["bootstrap_sigma"],
                     r["bootstrap_sigma"], r["bootstrap_sigma"]))
    else:
        raise UnreadableReport(f"unknown report kind {kind!r}")

    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "point", "lower", "upper"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} series row(s) to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as err:
        print(f"fairaudit: error[{type(err).__name__}]: {err}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as err:
        print(f"fairaudit: error[{type(err).__name__}]: {err}", file=sys.stderr)
        return 2
    except FairnessAuditError as err:  # anything else from this package
        print(f"fairaudit: error[{type(err).__name__}]: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
