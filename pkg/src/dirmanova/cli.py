"""Command-line front end.

Subcommands: ``test`` runs a battery on a CSV file, ``simulate`` runs an
empirical-size campaign from a JSON config, ``report`` re-renders a stored
JSON report.  Exit codes: 0 ok, 1 usage, 2 data/config errors, 3 numerical
errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .core import GroupedSample, SummaryStats, summarize
from .exceptions import DataError, DirManovaError, NumericalError
from .heteroscedastic import (
    behrens_fisher,
    directional_p_hetero,
    fit_heteroscedastic,
    lrt_hetero,
    skovgaard_hetero,
)
from .homoscedastic import (
    bartlett,
    clt_test,
    directional_p,
    fit_homoscedastic,
    hotelling,
    lrt,
    skovgaard,
)
from .results import TestResult, format_pvalue
from .simulation import (
    CovarianceSpec,
    EmpiricalSizeReport,
    GeneratorSpec,
    HETEROSCEDASTIC_METHODS,
    HOMOSCEDASTIC_METHODS,
    SimulationConfig,
    TWO_GROUP_METHODS,
    report_csv_text,
    report_json_dict,
    run_empirical_size,
)

_MODELS = {"homo": "homoscedastic", "hetero": "heteroscedastic"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract wants 1
    def error(self, message):
        raise _UsageError(message)


def read_grouped_csv(path: str, group_col: str):
    """Parse a CSV with a header row into a grouped sample.

    The group column is selected by name; every other column is a numeric
    coordinate.  Groups are ordered by first appearance of their label.
    Returns (sample, labels, column names).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    import csv as _csv

    with fh:
        reader = _csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if group_col not in header:
            raise DataError(
                f"{path}: group column {group_col!r} not found "
                f"(columns: {', '.join(header)})"
            )
        gi = header.index(group_col)
        value_cols = [(i, name) for i, name in enumerate(header) if i != gi]
        if not value_cols:
            raise DataError(f"{path}: no value columns besides the group column")
        by_label: dict[str, list[list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            label = row[gi].strip()
            vals = []
            for i, name in value_cols:
                cell = row[i].strip()
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column {name!r}: not numeric: {cell!r}"
                    ) from None
                if not math.isfinite(x):
                    raise DataError(
                        f"{path}: line {lineno}, column {name!r}: non-finite value {cell!r}"
                    )
                vals.append(x)
            by_label.setdefault(label, []).append(vals)
    if len(by_label) < 2:
        raise DataError(
            f"{path}: need at least 2 distinct group labels, found {len(by_label)}"
        )
    sample = GroupedSample(groups=tuple(np.asarray(v) for v in by_label.values()))
    return sample, tuple(by_label.keys()), tuple(name for _, name in value_cols)


def write_sample_csv(
    sample: GroupedSample,
    path: str,
    group_col: str = "group",
    labels=None,
    columns=None,
) -> None:
    """Export a grouped sample so that ``test`` reproduces it exactly."""
    labels = labels or [f"g{i + 1}" for i in range(sample.g)]
    columns = columns or [f"x{j + 1}" for j in range(sample.p)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([group_col, *columns]) + "\n")
        for label, block in zip(labels, sample.groups):
            for row in block:
                fh.write(",".join([str(label), *[repr(float(v)) for v in row]]) + "\n")


def default_methods(model: str, g: int) -> tuple[str, ...]:
    if model == "homoscedastic":
        return ("DT", "CLT", "LRT", "BC", "Sko1", "Sko2")
    base = ("DT", "LRT", "Sko1", "Sko2")
    return base + ("BF",) if g == 2 else base


def run_battery(
    stats: SummaryStats, model: str, methods: tuple[str, ...]
) -> list[TestResult]:
    """Run the requested tests on one dataset, in the requested order."""
    allowed = (
        HOMOSCEDASTIC_METHODS if model == "homoscedastic" else HETEROSCEDASTIC_METHODS
    )
    for m in methods:
        if m not in allowed:
            raise DataError(
                f"method {m!r} is not available under the {model} model "
                f"(allowed: {', '.join(allowed)})"
            )
        if m in TWO_GROUP_METHODS and stats.g != 2:
            raise DataError(f"method {m!r} needs exactly 2 groups, got {stats.g}")

    results: dict[str, TestResult] = {}
    if model == "homoscedastic":
        fit = fit_homoscedastic(stats)
        runners = {
            "DT": lambda: directional_p(fit),
            "CLT": lambda: clt_test(fit),
            "LRT": lambda: lrt(fit),
            "BC": lambda: bartlett(fit),
            "Hotelling": lambda: hotelling(fit),
        }
        adjusted = skovgaard
    else:
        fit = fit_heteroscedastic(stats)
        runners = {
            "DT": lambda: directional_p_hetero(fit),
            "LRT": lambda: lrt_hetero(fit),
            "BF": lambda: behrens_fisher(stats),
        }
        adjusted = skovgaard_hetero
    if "Sko1" in methods or "Sko2" in methods:
        one, two = adjusted(fit)
        results["Sko1"] = one
        results["Sko2"] = two
    for m in methods:
        if m not in results:
            results[m] = runners[m]()
    return [results[m] for m in methods]


def _render_results(results: list[TestResult], alpha: float, fmt: str) -> str:
    if fmt == "json":
        payload = [
            {
                "method": r.method,
                "statistic": r.statistic,
                "reference": r.reference,
                "pvalue": r.pvalue,
                "reject": r.rejects(alpha),
                "diagnostics": {
                    k: (v if isinstance(v, (str, bool, int)) else float(v))
                    for k, v in r.diagnostics.items()
                },
            }
            for r in results
        ]
        return json.dumps({"alpha": alpha, "results": payload}, indent=2) + "\n"
    if fmt == "csv":
        lines = ["method,statistic,reference,pvalue,reject"]
        for r in results:
            lines.append(
                f"{r.method},{r.statistic!r},\"{r.reference}\","
                f"{r.pvalue!r},{int(r.rejects(alpha))}"
            )
        return "\n".join(lines) + "\n"
    width = max(len(r.reference) for r in results)
    lines = [f"{'method':<10} {'statistic':>12} {'reference':<{width}} {'p-value':>10}"]
    for r in results:
        flag = " *" if r.rejects(alpha) else ""
        lines.append(
            f"{r.method:<10} {r.statistic:>12.6g} {r.reference:<{width}} "
            f"{format_pvalue(r.pvalue):>10}{flag}"
        )
    lines.append(f"(* rejected at alpha = {alpha:g})")
    return "\n".join(lines) + "\n"


def cmd_test(args) -> int:
    sample, labels, _ = read_grouped_csv(args.input, args.group_col)
    model = _MODELS[args.model]
    stats = summarize(sample)
    methods = (
        tuple(args.methods.split(",")) if args.methods else default_methods(model, stats.g)
    )
    results = run_battery(stats, model, methods)
    sys.stdout.write(
        f"groups: {', '.join(f'{l} (n={n})' for l, n in zip(labels, stats.sizes))}; "
        f"p = {stats.p}; model = {model}\n"
    )
    sys.stdout.write(_render_results(results, args.alpha, args.format))
    return 0


_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["n_i", "p", "methods"],
    "additionalProperties": False,
    "properties": {
        "generator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["normal", "student_t", "skew_normal", "laplace"]},
                "covariance": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {
                            "enum": [
                                "identity",
                                "ar1",
                                "compound_symmetry",
                                "explicit",
                            ]
                        },
                        "rho": {
                            "anyOf": [
                                {"type": "number"},
                                {"type": "array", "items": {"type": "number"}},
                                {"const": "spaced"},
                            ]
                        },
                        "matrix": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                },
                "means": {
                    "type": "array",
                    "items": {
                        "anyOf": [
                            {"type": "number"},
                            {"type": "array", "items": {"type": "number"}},
                        ]
                    },
                },
                "df": {"type": "number", "exclusiveMinimum": 2},
                "shape": {"type": "number"},
            },
        },
        "n_i": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2},
        "p": {"type": "integer", "minimum": 1},
        "variance_model": {"enum": ["homoscedastic", "heteroscedastic"]},
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {
                "enum": ["DT", "CLT", "LRT", "BC", "Sko1", "Sko2", "BF", "Hotelling"]
            },
        },
        "replications": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer"},
        "retain_pvalues": {"type": "boolean"},
        "out_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}


def load_simulation_config(path: str) -> tuple[SimulationConfig, dict]:
    """Parse and validate a campaign config; returns (config, execution knobs)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc

    validator = jsonschema.Draft202012Validator(_CONFIG_SCHEMA)
    problems = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if problems:
        listing = "\n  ".join(
            f"$.{'.'.join(str(p) for p in e.absolute_path) or '(root)'}: {e.message}"
            for e in problems
        )
        raise DataError(f"{path}: invalid config:\n  {listing}")

    gen_raw = raw.get("generator", {})
    cov_raw = gen_raw.get("covariance", {})
    rho = cov_raw.get("rho")
    covariance = CovarianceSpec(
        kind=cov_raw.get("kind", "identity"),
        rho=tuple(rho) if isinstance(rho, list) else rho,
        matrix=np.asarray(cov_raw["matrix"], dtype=float) if "matrix" in cov_raw else None,
    )
    generator = GeneratorSpec(
        family=gen_raw.get("family", "normal"),
        covariance=covariance,
        means=np.asarray(gen_raw["means"], dtype=float) if "means" in gen_raw else None,
        df=float(gen_raw.get("df", 5.0)),
        shape=float(gen_raw.get("shape", 1.0)),
    )
    cfg = SimulationConfig(
        generator=generator,
        n_i=tuple(raw["n_i"]),
        p=int(raw["p"]),
        methods=tuple(raw["methods"]),
        variance_model=raw.get("variance_model", "homoscedastic"),
        replications=int(raw.get("replications", 2000)),
        alpha=float(raw.get("alpha", 0.05)),
        seed=int(raw.get("seed", 0)),
        retain_pvalues=bool(raw.get("retain_pvalues", False)),
    )
    knobs = {"out_dir": raw.get("out_dir", "."), "threads": int(raw.get("threads", 1))}
    return cfg, knobs


def _summary_text(report: EmpiricalSizeReport) -> str:
    cfg = report.config
    lines = [
        f"empirical size at alpha = {cfg.alpha:g} "
        f"({cfg.variance_model}, g = {cfg.g}, p = {cfg.p}, "
        f"n_i = {list(cfg.n_i)}, R = {cfg.replications}, seed = {cfg.seed})",
        f"{'method':<10} {'rejections':>10} {'rate':>8} {'mc_se':>8}  failures",
    ]
    for s in report.methods:
        failed = sum(s.failures.values())
        note = "" if not failed else f"{failed} ({', '.join(sorted(s.failures))})"
        lines.append(
            f"{s.method:<10} {s.rejections:>10} {s.rate:>8.4f} {s.mc_se:>8.4f}  {note}"
        )
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg, knobs = load_simulation_config(args.config)
    if args.seed is not None:
        cfg = _replace_cfg(cfg, seed=args.seed)
    if args.reps is not None:
        cfg = _replace_cfg(cfg, replications=args.reps)
    if args.alpha is not None:
        cfg = _replace_cfg(cfg, alpha=args.alpha)
    out_dir = Path(args.out_dir if args.out_dir is not None else knobs["out_dir"])
    threads = args.threads if args.threads is not None else knobs["threads"]
    cfg.validate()

    report = run_empirical_size(cfg, threads=threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report_json_dict(report)
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.csv").write_text(report_csv_text(report), encoding="utf-8")
    if cfg.retain_pvalues:
        lines = ["method,bin_lo,bin_hi,count"]
        for method, diag in payload.get("diagnostics", {}).items():
            for b, count in enumerate(diag["histogram"]):
                lines.append(f"{method},{b / 20!r},{(b + 1) / 20!r},{count}")
        (out_dir / "histograms.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(_summary_text(report))
    sys.stdout.write(
        f"wrote {out_dir / 'report.json'}, {out_dir / 'report.csv'} "
        f"in {report.elapsed_seconds:.1f}s ({threads} thread(s))\n"
    )
    return 0


def _replace_cfg(cfg: SimulationConfig, **kwargs) -> SimulationConfig:
    from dataclasses import replace

    return replace(cfg, **kwargs)


def cmd_report(args) -> int:
    try:
        with open(args.input, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.input}: invalid JSON: {exc}") from exc
    try:
        methods = payload["methods"]
        if args.format == "csv":
            lines = ["method,rejections,R,rate,mc_se"]
            for s in methods:
                lines.append(
                    f"{s['method']},{s['rejections']},{s['replications']},"
                    f"{s['rate']!r},{s['mc_se']!r}"
                )
            sys.stdout.write("\n".join(lines) + "\n")
        else:
            cfg = payload["config"]
            sys.stdout.write(
                f"empirical size at alpha = {cfg['alpha']:g} "
                f"({cfg['variance_model']}, p = {cfg['p']}, n_i = {cfg['n_i']}, "
                f"R = {cfg['replications']}, seed = {cfg['seed']})\n"
            )
            sys.stdout.write(
                f"{'method':<10} {'rejections':>10} {'rate':>8} {'mc_se':>8}\n"
            )
            for s in methods:
                sys.stdout.write(
                    f"{s['method']:<10} {s['rejections']:>10} {s['rate']:>8.4f} "
                    f"{s['mc_se']:>8.4f}\n"
                )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{args.input}: not a report file ({exc})") from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dirmanova", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    t = sub.add_parser("test", help="run a test battery on CSV data")
    t.add_argument("--input", required=True, help="CSV file with a header row")
    t.add_argument("--group-col", required=True, help="name of the group column")
    t.add_argument("--model", choices=["homo", "hetero"], default="homo")
    t.add_argument("--methods", help="comma-separated subset, e.g. DT,LRT,BC")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--format", choices=["text", "json", "csv"], default="text")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run an empirical-size campaign")
    s.add_argument("--config", required=True, help="JSON campaign config")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--reps", type=int, help="override the replication count")
    s.add_argument("--alpha", type=float, help="override the nominal level")
    s.add_argument("--out-dir", help="directory for report files")
    s.add_argument("--threads", type=int, help="worker processes")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="re-render a stored JSON report")
    r.add_argument("--input", required=True, help="report.json path")
    r.add_argument("--format", choices=["text", "csv"], default="text")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return 2
    except NumericalError as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return 3
    except DirManovaError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
