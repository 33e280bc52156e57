"""Command-line front end: ``ordcl {fit, test, enumerate, simulate, shrinkage}``.

Exit codes: 0 success, 1 error, 2 fit converged with boundary flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import OrderedDict

import numpy as np

from . import datasets
from .estimation import (
    FitControl,
    FitResult,
    fit,
    fit_ml,
    fit_rb,
)
from .inference import (
    ContrastMatrix,
    adjusted_score_test,
    embed,
    wald_ci,
    wald_contrast_test,
)
from .links import LinkFamily
from .model import ModelSpec, OrdinalData, OrdinalError
from .studies import (
    EnumConfig,
    default_threads,
    n_tables,
    run_enumeration,
    run_simulation,
    shrinkage_csv,
    shrinkage_scan,
    shrinkage_summary,
    symmetry_check,
)

log = logging.getLogger("ordcl")

EXIT_OK, EXIT_ERROR, EXIT_BOUNDARY = 0, 1, 2


class IngestionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ingestion


def _split(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_split(v))
        return out
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _covariate(rows, spec: str, line0: int):
    """Column values; ``col:level`` gives the indicator of ``col == level``."""
    col, _, level = spec.partition(":")
    if rows and col not in rows[0]:
        raise IngestionError(f"unknown covariate column {col!r}")
    out = []
    for i, row in enumerate(rows):
        raw = row[col].strip()
        if level:
            out.append(1.0 if raw == level else 0.0)
            continue
        try:
            out.append(float(raw))
        except ValueError:
            raise IngestionError(
                f"row {line0 + i}: column {col!r} value {raw!r} is not numeric"
            ) from None
    return np.array(out)


def ingest_csv(path, layout="grouped", covariates=(), response=None, levels=None,
               freq=None, standardize=()) -> OrdinalData:
    """Read GROUPED (covariates and count columns) or LONG (one row per observation) CSV.

    ``response`` lists the count columns for GROUPED data and names the
    category column for LONG data, whose ordered labels are given by
    ``levels``. LONG rows are aggregated over distinct covariate vectors in
    order of first appearance.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestionError(str(exc)) from None
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    covariates = _split(covariates)
    standardize = set(_split(standardize))
    unknown = standardize - set(covariates)
    if unknown:
        raise IngestionError(f"standardized columns are not covariates: {sorted(unknown)}")
    cols = [_covariate(rows, c, 2) for c in covariates]
    x = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    for j, c in enumerate(covariates):
        if c in standardize:
            x[:, j] = (x[:, j] - x[:, j].mean()) / x[:, j].std(ddof=1)
    names = tuple(covariates)

    if layout == "grouped":
        ycols = _split(response)
        if not ycols:
            raise IngestionError("grouped layout needs the count columns (--response)")
        for c in ycols:
            if c not in rows[0]:
                raise IngestionError(f"unknown count column {c!r}")
        y = np.zeros((len(rows), len(ycols)))
        for i, row in enumerate(rows):
            for s, c in enumerate(ycols):
                try:
                    v = float(row[c])
                except ValueError:
                    raise IngestionError(f"row {i + 2}: count {row[c]!r} is not numeric") from None
                if v < 0:
                    raise IngestionError(f"row {i + 2}: negative count in column {c!r}")
                y[i, s] = v
        return OrdinalData(x, y, names, tuple(ycols))

    if layout != "long":
        raise IngestionError(f"unknown layout {layout!r}")
    rcol = _split(response)
    if len(rcol) != 1 or rcol[0] not in rows[0]:
        raise IngestionError("long layout needs one existing response column (--response)")
    rcol = rcol[0]
    labels = _split(levels) or sorted({r[rcol].strip() for r in rows}, key=_label_key)
    index = {lab: s for s, lab in enumerate(labels)}
    if freq is not None and freq not in rows[0]:
        raise IngestionError(f"unknown frequency column {freq!r}")
    groups = OrderedDict()
    for i, row in enumerate(rows):
        lab = row[rcol].strip()
        if lab not in index:
            raise IngestionError(f"row {i + 2}: unknown category label {lab!r}")
        w = 1.0
        if freq is not None:
            try:
                w = float(row[freq])
            except ValueError:
                raise IngestionError(f"row {i + 2}: frequency {row[freq]!r} is not numeric") from None
            if w < 0:
                raise IngestionError(f"row {i + 2}: negative frequency")
        key = tuple(x[i])
        counts = groups.setdefault(key, np.zeros(len(labels)))
        counts[index[lab]] += w
    gx = np.array(list(groups.keys())).reshape(len(groups), x.shape[1])
    gy = np.array(list(groups.values()))
    return OrdinalData(gx, gy, names, tuple(labels))


def _label_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


# ---------------------------------------------------------------------------
# model configuration


def _spec_from_args(args, data: OrdinalData) -> ModelSpec:
    names = list(data.covariate_names)
    prop, part = set(_split(args.prop)), set(_split(args.partial))
    for c in prop | part:
        if c not in names:
            raise IngestionError(f"{c!r} is not among the covariates")
    partial_cols = tuple(j for j, n in enumerate(names) if n in part)
    proportional_cols = tuple(j for j, n in enumerate(names) if n not in part)
    return ModelSpec(args.link, data.k, proportional_cols, partial_cols)


def _control(args) -> FitControl:
    kw = {}
    for name in ("grad_tol", "max_iter"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return FitControl(**kw)


def _load(args):
    if args.data is None:
        raise IngestionError("no data file given (--data)")
    data = ingest_csv(args.data, args.layout, args.covariates, args.response,
                      args.levels, args.freq, args.standardize)
    return data, _spec_from_args(args, data)


def _fit(args, spec, data) -> FitResult:
    control = _control(args)
    if args.method == "const-adjust":
        if args.const < 0:
            raise ValueError("--const must be non-negative")
        log.warning("const-adjust adds %g to every count before an ML fit; this is a "
                    "demonstration mode and is not recommended", args.const)
        res = fit_ml(spec, data.with_counts(np.asarray(data.y) + args.const), control)
        res.notes.append(f"ML fit after adding {args.const} to every count (not recommended)")
        return res
    return fit(spec, data, args.method, control)


def _emit(obj, path):
    text = json.dumps(obj, indent=2, default=_default)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def format_fit(res: FitResult, level: float = 0.95) -> str:
    ci = wald_ci(res, level)
    lines = [f"method: {res.method}   link: {res.spec.link.value}   "
             f"loglik: {res.loglik:.4f}   iterations: {res.iterations}",
             f"{'parameter':<22}{'estimate':>12}{'s.e.':>12}{'lower':>12}{'upper':>12}  flag"]
    for name, est, se, (lo, hi), flag in zip(res.names, res.delta, res.se, ci, res.boundary_flags):
        lines.append(f"{name:<22}{est:>12.4f}{se:>12.4f}{lo:>12.4f}{hi:>12.4f}  "
                     f"{'' if flag == 'finite' else flag}")
    lines.extend(f"note: {n}" for n in res.notes)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data, spec = _load(args)
    res = _fit(args, spec, data)
    out = res.to_dict()
    out["ci"] = wald_ci(res, args.level).tolist()
    _emit(out, args.json)
    print(format_fit(res, args.level))
    if not res.converged:
        return EXIT_ERROR
    return EXIT_BOUNDARY if res.has_boundary else EXIT_OK


def _restricted_embedding(spec_large: ModelSpec, spec_small: ModelSpec) -> list:
    """Index of the small-model parameter supplying each large-model parameter."""
    small = {}
    for t, (kind, j, s) in enumerate(spec_small.layout()):
        small[(kind, j, s)] = t
    emb = []
    for kind, j, s in spec_large.layout():
        if kind == "partial" and ("partial", j, s) not in small:
            emb.append(small[("prop", j, None)])
        else:
            emb.append(small[(kind, j, s)])
    return emb


def cmd_test(args) -> int:
    data, spec = _load(args)
    names = spec.param_names(data.covariate_names)
    results = {}
    if args.wald_equality or args.contrast:
        res = _fit(args, spec, data)
        results["fit"] = {"method": res.method, "estimates": res.delta.tolist()}
        for cov in _split(args.wald_equality):
            idx = [t for t, n in enumerate(names) if n.startswith(cov + "[")]
            if len(idx) < 2:
                raise ValueError(f"{cov!r} has no partial effects to compare")
            tr = wald_contrast_test(res, ContrastMatrix.equality(idx, spec.n_params))
            results[f"wald_equality:{cov}"] = tr.to_dict()
        if args.contrast:
            L = np.array(json.loads(args.contrast), dtype=float)
            results["wald_contrast"] = wald_contrast_test(res, L).to_dict()
    for cov in _split(args.score_proportional):
        j = list(data.covariate_names).index(cov)
        if j not in spec.partial_cols:
            raise ValueError(f"{cov!r} is not a partial covariate of the model")
        small = ModelSpec(spec.link, spec.k, tuple(sorted(spec.proportional_cols + (j,))),
                          tuple(c for c in spec.partial_cols if c != j))
        emb = [int(v) for v in _split(args.embedding)] or _restricted_embedding(spec, small)
        restricted = fit_rb(small, data, _control(args))
        delta = embed(restricted.delta, emb, spec.n_params)
        tr = adjusted_score_test(spec, data, (delta, small.n_params))
        results[f"score_proportional:{cov}"] = tr.to_dict() | {"embedding": emb}
    if not results:
        raise ValueError("nothing to test: give --wald-equality, --contrast or --score-proportional")
    _emit(results, args.json)
    for key, val in results.items():
        if key != "fit":
            print(f"{key}: statistic {val['statistic']:.4f}  df {val['df']}  p {val['p_value']:.4f}")
    return EXIT_OK


def _grid(text):
    """``start:stop:n`` for an equi-spaced grid, otherwise a comma list."""
    if ":" in str(text):
        a, b, n = str(text).split(":")
        return [float(v) for v in np.linspace(float(a), float(b), int(n))]
    return [float(v) for v in _split(text)]


def _write_report(report, prefix):
    if prefix:
        report.to_csv(prefix + ".csv")
        report.to_json(prefix + ".json")


def cmd_enumerate(args) -> int:
    m1 = args.m1 if args.m1 is not None else args.m
    m2 = args.m2 if args.m2 is not None else args.m
    cfg = EnumConfig(k=args.k, m1=m1, m2=m2, link=args.link, beta_grid=_grid(args.beta_grid),
                     e_values=_grid(args.e_values), estimators=tuple(_split(args.estimators)),
                     ci_level=args.level)
    t0 = time.perf_counter()
    report = run_enumeration(cfg, threads=args.threads)
    report.metadata["seconds"] = time.perf_counter() - t0
    if m1 == m2 and all(-b in cfg.beta_grid for b in cfg.beta_grid):
        report.metadata["symmetry_violations"] = symmetry_check(report)
    _write_report(report, args.out)
    print(f"tables: {n_tables(cfg.k, m1, m2)}  cells: {len(cfg.beta_grid) * len(cfg.e_values)}  "
          f"fit failures: {len(report.diagnostics)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.data is None:
        data, spec = datasets.ratings(), datasets.ratings_spec(args.link)
    else:
        data, spec = _load(args)
    truth = fit_ml(spec, data, _control(args))
    if truth.has_boundary:
        raise ValueError("the ML fit of the template has boundary estimates")
    report = run_simulation(spec, data, truth.delta, args.reps, seed=args.seed,
                            level=args.level, threads=args.threads, control=_control(args))
    _write_report(report, args.out)
    print(f"{'estimator':<6}{'parameter':<14}{'bias':>9}{'mse':>9}{'coverage':>10}{'b2/var%':>10}")
    for r in report.rows:
        print(f"{r['estimator']:<6}{r['parameter']:<14}{r['bias']:>9.3f}{r['mse']:>9.3f}"
              f"{r['coverage']:>10.3f}{r['bias2_var_pct']:>10.3f}")
    return EXIT_OK


def cmd_shrinkage(args) -> int:
    records = shrinkage_scan(args.link, args.k, args.m, threads=args.threads)
    summary = shrinkage_summary(records, args.link)
    if args.out:
        shrinkage_csv(records, args.out + ".csv")
        _emit({"k": args.k, "m": args.m, "link": args.link, "records": len(records),
               "summary": summary}, args.out + ".json")
    print(f"tables: {len(records)}  mean signed deviations: first {summary['first']:.4f}  "
          f"last {summary['last']:.4f}  interior {summary['interior']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _data_options(p):
    p.add_argument("--data", help="CSV file")
    p.add_argument("--layout", choices=("grouped", "long"), default="grouped")
    p.add_argument("--response", help="count columns (grouped) or category column (long)")
    p.add_argument("--levels", help="ordered category labels for the long layout")
    p.add_argument("--freq", help="frequency column for the long layout")
    p.add_argument("--covariates", action="append",
                   help="covariate columns; col:level makes an indicator")
    p.add_argument("--prop", action="append", help="covariates with proportional effects "
                   "(the default for covariates not marked partial)")
    p.add_argument("--partial", action="append", help="covariates with category-specific effects")
    p.add_argument("--standardize", action="append", help="covariates to centre and scale")
    p.add_argument("--method", choices=("ml", "rb", "bc", "const-adjust"), default="ml")
    p.add_argument("--const", type=float, default=0.5, help="constant for const-adjust")


def _common(p):
    p.add_argument("--link", default="logit", choices=[m.value for m in LinkFamily])
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--json", help="write machine-readable output here")
    p.add_argument("--config", help="JSON file with option values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a cumulative link model")
    _common(p)
    _data_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="Wald and adjusted score tests")
    _common(p)
    _data_options(p)
    p.add_argument("--wald-equality", action="append",
                   help="partial covariate whose category-specific effects are tested equal")
    p.add_argument("--contrast", help="JSON contrast matrix for a Wald test")
    p.add_argument("--score-proportional", action="append",
                   help="partial covariate tested for proportionality by the adjusted score test")
    p.add_argument("--embedding", help="restricted-to-full parameter index map, comma separated")
    p.set_defaults(func=cmd_test)

    for name, func, hlp in (("enumerate", cmd_enumerate, "exact enumeration study"),
                            ("simulate", cmd_simulate, "simulation study"),
                            ("shrinkage", cmd_shrinkage, "fitted-probability shrinkage scan")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: ORDCL_THREADS or CPU count)")
        p.add_argument("--out", help="output path prefix")
        p.set_defaults(func=func)
        if name == "simulate":
            _data_options(p)
            p.add_argument("--reps", type=int, default=2000)
            p.add_argument("--seed", type=int, default=0)
        else:
            p.add_argument("--k", type=int, default=4 if name == "enumerate" else 6)
            p.add_argument("--m", type=int, default=3)
        if name == "enumerate":
            p.add_argument("--m1", type=int)
            p.add_argument("--m2", type=int)
            p.add_argument("--beta-grid", default="-6:6:50", dest="beta_grid")
            p.add_argument("--e-values", default="1,2,3,5,7", dest="e_values")
            p.add_argument("--estimators", default="ML,BC,RB")
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from a JSON config so that flags still win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        bad = set(cfg) - known
        if bad:
            raise IngestionError(f"unknown config keys: {sorted(bad)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = default_threads()
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (IngestionError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (OrdinalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
