"""Exact enumeration and Monte Carlo studies of the estimators of ``beta``.

The enumeration engine fits every 2 x k table with fixed row totals once per
estimator; the estimates do not depend on the true parameter, so expectations
over a grid of true values are probability reweightings of the same fits.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import special, stats

from .estimation import (
    DIVERGING,
    FitControl,
    fit_bc,
    fit_ml,
    fit_rb,
)
from .inference import gen_emp_logit_2xk_binary
from .links import LinkFamily
from .model import (
    DegenerateDataError,
    ModelSpec,
    OrdinalData,
    OrdinalError,
    build_design,
    category_probs,
    predict,
)

log = logging.getLogger(__name__)

ESTIMATORS = ("ML", "BC", "RB", "EL")


def default_threads() -> int:
    env = os.environ.get("ORDCL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _parallel_map(fn, items, threads, chunksize=1):
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


# ---------------------------------------------------------------------------
# tables


def compositions(m: int, k: int) -> Iterator[tuple]:
    """Compositions of ``m`` into ``k`` non-negative parts, lexicographically increasing."""
    if k == 1:
        yield (m,)
        return
    for first in range(m + 1):
        for rest in compositions(m - first, k - 1):
            yield (first,) + rest


def enumerate_tables(k: int, m1: int, m2: int) -> Iterator[np.ndarray]:
    rows2 = list(compositions(m2, k))
    for r1 in compositions(m1, k):
        for r2 in rows2:
            yield np.array([r1, r2])


def n_tables(k: int, m1: int, m2: int) -> int:
    return int(special.comb(m1 + k - 1, m1, exact=True) * special.comb(m2 + k - 1, m2, exact=True))


def alpha_pattern(q: int) -> np.ndarray:
    return np.zeros(1) if q == 1 else np.linspace(-1.0, 1.0, q)


def _row_probs(link: LinkFamily, alpha, beta, x) -> np.ndarray:
    eta = np.asarray(alpha, float)[None, :] - beta * np.asarray(x, float)[:, None]
    return category_probs(link, eta)[1]


def _log_multinomial_coef(tables: np.ndarray) -> np.ndarray:
    m = tables.sum(axis=2)
    return (special.gammaln(m + 1) - special.gammaln(tables + 1).sum(axis=2)).sum(axis=1)


def table_probability(table, spec: ModelSpec, delta, x=(-0.5, 0.5)) -> float:
    """Probability of a 2 x k table with fixed row totals under the 2-row model."""
    table = np.asarray(table)
    delta = np.asarray(delta, float)
    pi = _row_probs(LinkFamily.parse(spec.link), delta[:-1], delta[-1], x)
    with np.errstate(divide="ignore"):
        logp = _log_multinomial_coef(table[None])[0] + np.sum(
            np.where(table > 0, table * np.log(pi), 0.0))
    return float(np.exp(logp))


# ---------------------------------------------------------------------------
# per-table fits


@dataclass
class TableOutcome:
    counts: np.ndarray
    beta: dict
    se: dict
    status: dict       # "ok", "diverging" or "failed"
    errors: dict = field(default_factory=dict)


def _fit_table(args) -> TableOutcome:
    table, link, x, estimators, control = args
    k = table.shape[1]
    data = OrdinalData(np.asarray(x, float)[:, None], table)
    spec = ModelSpec(link, k, proportional_cols=(0,))
    beta, se, status, errors = {}, {}, {}, {}
    ml = None
    if "ML" in estimators or "BC" in estimators:
        try:
            ml = fit_ml(spec, data, control)
            beta["ML"], se["ML"] = float(ml.delta[-1]), float(ml.se[-1])
            status["ML"] = "diverging" if ml.boundary_flags[-1] == DIVERGING else "ok"
        except DegenerateDataError:
            # a single observed category: beta is not estimable, ML sits on the boundary
            beta["ML"], se["ML"], status["ML"] = np.nan, np.nan, "diverging"
        except OrdinalError as exc:
            beta["ML"], se["ML"], status["ML"] = np.nan, np.nan, "failed"
            errors["ML"] = str(exc)
    if "BC" in estimators:
        if status.get("ML") == "ok":
            try:
                bc = fit_bc(spec, data, control, ml=ml)
                beta["BC"], se["BC"], status["BC"] = float(bc.delta[-1]), float(bc.se[-1]), "ok"
            except OrdinalError as exc:
                beta["BC"], se["BC"], status["BC"] = np.nan, np.nan, "failed"
                errors["BC"] = str(exc)
        else:
            beta["BC"], se["BC"] = np.nan, np.nan
            status["BC"] = status.get("ML", "failed")
    if "RB" in estimators:
        try:
            rb = fit_rb(spec, data, control)
            beta["RB"], se["RB"] = float(rb.delta[-1]), float(rb.se[-1])
            status["RB"] = "diverging" if rb.boundary_flags[-1] == DIVERGING else "ok"
        except OrdinalError as exc:
            beta["RB"], se["RB"], status["RB"] = np.nan, np.nan, "failed"
            errors["RB"] = str(exc)
    if "EL" in estimators and k == 2:
        (y11, y12), (y21, y22) = table
        el = gen_emp_logit_2xk_binary(y11, y11 + y12, y21, y21 + y22)
        # the logit difference is for row 1 minus row 2; beta scales by x2 - x1
        beta["EL"] = el / (x[1] - x[0])
        se["EL"] = np.nan
        status["EL"] = "ok"
    return TableOutcome(table, beta, se, status, errors)


def fit_tables(tables, link, x=(-0.5, 0.5), estimators=("ML", "BC", "RB"),
               control: FitControl = None, threads=None) -> list:
    control = control or FitControl()
    link = LinkFamily.parse(link)
    items = [(np.asarray(t), link, tuple(x), tuple(estimators), control) for t in tables]
    return _parallel_map(_fit_table, items, threads, chunksize=max(1, len(items) // 64))


# ---------------------------------------------------------------------------
# enumeration study


@dataclass
class EnumConfig:
    k: int = 4
    m1: int = 3
    m2: int = 3
    x1: float = -0.5
    x2: float = 0.5
    link: str = "logit"
    beta_grid: Sequence[float] = tuple(np.linspace(-6, 6, 50))
    e_values: Sequence[float] = (1, 2, 3, 5, 7)
    estimators: Sequence[str] = ("ML", "BC", "RB")
    ci_level: float = 0.95

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("row totals must be at least 1")
        if not np.all(np.isfinite(self.beta_grid)):
            raise ValueError("beta grid must be finite")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if "EL" in self.estimators and self.k != 2:
            raise ValueError("the EL estimator is only available for k = 2")


@dataclass
class StudyReport:
    rows: list
    metadata: dict
    diagnostics: list = field(default_factory=list)

    def cell(self, estimator, **where):
        for row in self.rows:
            if row["estimator"] == estimator and all(
                np.isclose(row[key], val) for key, val in where.items()
            ):
                return row
        raise KeyError((estimator, where))

    def to_csv(self, path) -> None:
        if not self.rows:
            return
        cols = list(self.rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({c: _fmt(row[c]) for c in cols})

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"metadata": self.metadata, "rows": self.rows,
                       "diagnostics": self.diagnostics}, fh, indent=2, default=_json_default)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _metrics(est, se, ok, diverging, probs, beta, crit, conditional):
    """Bias, MSE, coverage for one estimator at one cell."""
    p_inf = float(probs[diverging].sum())
    if conditional:
        mask = ok & ~diverging
    else:
        mask = ok
    p_cond = float(probs[mask].sum())
    w = probs[mask] / p_cond if p_cond > 0 else probs[mask] * np.nan
    err = est[mask] - beta
    bias = float(np.sum(w * err))
    mse = float(np.sum(w * err * err))
    covered = np.abs(est - beta) <= crit * se
    # diverging ML/BC fits are reported with the (-inf, inf) interval
    covered = np.where(diverging, True, covered)
    valid = ok | diverging
    cov_mass = probs[valid]
    coverage = float(np.sum(cov_mass * covered[valid]) / cov_mass.sum()) if cov_mass.sum() > 0 else np.nan
    if np.all(np.isnan(se[mask])):
        coverage = np.nan
    return p_inf, bias, mse, coverage, p_cond


def _report_rows(outcomes, link, x, beta_grid, e_values, estimators, level, q):
    tables = np.array([o.counts for o in outcomes])
    coef = _log_multinomial_coef(tables)
    crit = stats.norm.ppf(0.5 + level / 2.0)
    arrays = {}
    for name in estimators:
        est = np.array([o.beta.get(name, np.nan) for o in outcomes])
        se = np.array([o.se.get(name, np.nan) for o in outcomes])
        status = np.array([o.status.get(name, "failed") for o in outcomes])
        arrays[name] = (est, se, status == "ok", status == "diverging")
    rows = []
    for e in e_values:
        alpha = e * alpha_pattern(q)
        for beta in beta_grid:
            pi = _row_probs(link, alpha, beta, x)
            logp = coef + tables[:, 0, :] @ np.log(pi[0]) + tables[:, 1, :] @ np.log(pi[1])
            probs = np.exp(logp)
            for name in estimators:
                est, se, ok, div = arrays[name]
                conditional = name in ("ML", "BC")
                if name == "BC":
                    # BC is undefined exactly when ML is infinite
                    div = arrays["ML"][3] if "ML" in arrays else div
                p_inf, bias, mse, cover, p_cond = _metrics(
                    est, se, ok, div, probs, beta, crit, conditional)
                rows.append({
                    "beta": float(beta), "e": float(e), "estimator": name,
                    "p_infinite": p_inf, "bias": bias, "mse": mse,
                    "coverage": cover, "p_condition": p_cond,
                })
    return rows


def run_enumeration(config: EnumConfig, threads=None, control: FitControl = None,
                    outcomes=None) -> StudyReport:
    """Exact bias, MSE, coverage and probability of infinite estimates.

    ML and BC metrics are conditional on a finite ML estimate of ``beta``; the
    conditioning probability is reported as ``p_condition``.
    """
    link = LinkFamily.parse(config.link)
    x = (config.x1, config.x2)
    if outcomes is None:
        tables = list(enumerate_tables(config.k, config.m1, config.m2))
        outcomes = fit_tables(tables, link, x, config.estimators, control, threads)
    diagnostics = [
        {"table": o.counts.tolist(), "estimator": name, "error": msg}
        for o in outcomes for name, msg in o.errors.items()
    ]
    rows = _report_rows(outcomes, link, x, config.beta_grid, config.e_values,
                        config.estimators, config.ci_level, config.k - 1)
    meta = asdict(config) | {"n_tables": len(outcomes), "kind": "enumeration"}
    meta["beta_grid"] = [float(b) for b in config.beta_grid]
    meta["e_values"] = [float(e) for e in config.e_values]
    report = StudyReport(rows, meta, diagnostics)
    report.outcomes = outcomes
    return report


def symmetry_check(report: StudyReport, tol: float = 1e-8,
                   metrics=("bias", "mse", "coverage")) -> list:
    """Check bias antisymmetry and MSE/coverage symmetry in ``beta``.

    Returns a list of violations; every ``beta`` in the grid must have its
    negative in the grid as well.
    """
    index = {}
    for row in report.rows:
        index[(row["estimator"], row["e"], round(row["beta"], 10))] = row
    violations = []
    for (name, e, beta), row in index.items():
        if beta < 0:
            continue
        mirror = index.get((name, e, round(-beta, 10)))
        if mirror is None:
            violations.append({"estimator": name, "e": e, "beta": beta, "metric": "grid",
                               "difference": np.nan})
            continue
        for metric in metrics:
            a, b = row[metric], mirror[metric]
            if np.isnan(a) and np.isnan(b):
                continue
            diff = a + b if metric == "bias" else a - b
            if not abs(diff) <= tol:
                violations.append({"estimator": name, "e": e, "beta": beta,
                                   "metric": metric, "difference": float(diff)})
    return violations


# ---------------------------------------------------------------------------
# simulation study


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Counter-based stream for replicate ``rep``: Philox keyed by (seed, rep)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep])))


def simulate_counts(spec: ModelSpec, x, m, delta, rng) -> np.ndarray:
    data = OrdinalData(x, np.column_stack([m, np.zeros((len(m), spec.k - 1))]))
    pi = predict(spec.link, build_design(spec, data, check_rank=False), delta).pi
    return np.array([rng.multinomial(int(mr), p / p.sum()) for mr, p in zip(m, pi)])


def _sim_replicate(args):
    spec, x, m, delta, seed, rep, targets, control, names = args
    rng = replicate_rng(seed, rep)
    y = simulate_counts(spec, x, m, delta, rng)
    data = OrdinalData(x, y, names)
    out = {"rep": rep, "empty_categories": int(np.sum(y.sum(axis=0) == 0))}
    t = list(targets)
    try:
        ml = fit_ml(spec, data, control)
        out["ML"] = (ml.delta[t], ml.se[t])
        out["ML_diverging"] = bool(np.any(ml.diverging))
    except OrdinalError as exc:
        out["ML_error"] = str(exc)
        ml = None
    if ml is not None and not out["ML_diverging"]:
        try:
            bc = fit_bc(spec, data, control, ml=ml)
            out["BC"] = (bc.delta[t], bc.se[t])
        except OrdinalError as exc:
            out["BC_error"] = str(exc)
    try:
        rb = fit_rb(spec, data, control)
        out["RB"] = (rb.delta[t], rb.se[t])
        out["RB_diverging"] = bool(np.any(rb.diverging))
    except OrdinalError as exc:
        out["RB_error"] = str(exc)
    return out


def run_simulation(spec: ModelSpec, data_template: OrdinalData, delta_true, n_reps: int,
                   seed: int = 0, level: float = 0.95, targets=None, threads=None,
                   control: FitControl = None) -> StudyReport:
    """Simulate from ``delta_true`` on the template's covariates and row totals.

    Replicates where ML diverges are dropped from the ML and BC summaries (these
    are conditional on a finite ML estimate); RB summaries use all replicates.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    control = control or FitControl()
    delta_true = np.asarray(delta_true, float)
    if targets is None:
        targets = list(range(spec.q, spec.n_params))
    names = spec.param_names(data_template.covariate_names)
    x = np.asarray(data_template.x)
    m = np.asarray(data_template.totals)
    items = [(spec, x, m, delta_true, seed, rep, tuple(targets), control,
              data_template.covariate_names) for rep in range(n_reps)]
    reps = _parallel_map(_sim_replicate, items, threads, chunksize=max(1, n_reps // 64))
    reps.sort(key=lambda r: r["rep"])
    crit = stats.norm.ppf(0.5 + level / 2.0)
    truth = delta_true[list(targets)]
    rows = []
    for name in ("ML", "BC", "RB"):
        used = [r[name] for r in reps if name in r and not (name != "RB" and r.get("ML_diverging"))]
        if not used:
            continue
        est = np.array([u[0] for u in used])
        se = np.array([u[1] for u in used])
        err = est - truth
        bias = err.mean(axis=0)
        mse = (err ** 2).mean(axis=0)
        var = mse - bias ** 2
        cover = (np.abs(err) <= crit * se).mean(axis=0)
        for j, t in enumerate(targets):
            rows.append({
                "estimator": name, "parameter": names[t], "index": int(t),
                "truth": float(truth[j]), "bias": float(bias[j]), "mse": float(mse[j]),
                "coverage": float(cover[j]),
                "bias2_var_pct": float(100.0 * bias[j] ** 2 / var[j]) if var[j] > 0 else np.nan,
                "n_used": len(used),
            })
    diagnostics = [
        {"rep": r["rep"], **{k: v for k, v in r.items() if k.endswith("_error")}}
        for r in reps if any(k.endswith("_error") for k in r)
    ]
    meta = {
        "kind": "simulation", "n_reps": n_reps, "seed": seed, "level": level,
        "link": spec.link.value, "delta_true": delta_true.tolist(),
        "targets": [names[t] for t in targets],
        "ml_diverging_reps": [r["rep"] for r in reps if r.get("ML_diverging")],
        "reps_with_empty_categories": sum(1 for r in reps if r["empty_categories"] > 0),
    }
    report = StudyReport(rows, meta, diagnostics)
    report.replicates = reps
    return report


# ---------------------------------------------------------------------------
# shrinkage scan


@dataclass
class ShrinkageRecord:
    table_id: int
    counts: np.ndarray
    pi_ml: np.ndarray     # 2 x k
    pi_rb: np.ndarray     # 2 x k
    ml_diverged: bool


def _fitted_probs(fit):
    prob = fit._reduced
    pred = prob.predict(fit._reduced_delta)
    pi = pred.pi
    if fit.category_map is not None and not fit.category_map.is_identity:
        pi = fit.category_map.expand_probs(pi)
    return pi


def _shrink_table(args):
    table_id, table, link, x, control = args
    k = table.shape[1]
    data = OrdinalData(np.asarray(x, float)[:, None], table)
    spec = ModelSpec(link, k, proportional_cols=(0,))
    try:
        ml = fit_ml(spec, data, control)
        pi_ml = _fitted_probs(ml)
        diverged = bool(np.any(ml.diverging))
    except DegenerateDataError:
        # one observed category: the ML fit puts all mass on it in both rows
        pi_ml = np.tile(table.sum(axis=0) / table.sum(), (2, 1))
        diverged = True
    rb = fit_rb(spec, data, control)
    return ShrinkageRecord(table_id, table, pi_ml, _fitted_probs(rb), diverged)


def shrinkage_scan(link="logit", k: int = 6, m: int = 3, x=(-0.5, 0.5),
                   control: FitControl = None, threads=None) -> list:
    """Fitted category probabilities under ML and RB for every 2 x k table."""
    control = control or FitControl()
    link = LinkFamily.parse(link)
    items = [(i, t, link, tuple(x), control) for i, t in enumerate(enumerate_tables(k, m, m))]
    return _parallel_map(_shrink_table, items, threads, chunksize=max(1, len(items) // 64))


def shrinkage_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table_id", "x_level", "category", "pi_ml", "pi_rb", "ml_diverged"])
        for rec in records:
            for level in range(2):
                for s in range(rec.pi_ml.shape[1]):
                    writer.writerow([rec.table_id, level + 1, s + 1, repr(float(rec.pi_ml[level, s])),
                                     repr(float(rec.pi_rb[level, s])), int(rec.ml_diverged)])


def shrinkage_summary(records, link="logit", include_diverged: bool = False) -> dict:
    """Mean signed deviations of RB from ML fitted probabilities.

    ``first``/``last`` are positive when RB moves the end-category
    probabilities toward G(0) and 1 - G(0); ``interior`` is the mean of
    ``pi_rb - pi_ml`` over the intermediate categories.
    """
    link = LinkFamily.parse(link)
    g0 = link.cdf(0.0)
    keep = [r for r in records if include_diverged or not r.ml_diverged]
    ml = np.concatenate([r.pi_ml for r in keep])
    rb = np.concatenate([r.pi_rb for r in keep])
    first = np.mean((rb[:, 0] - ml[:, 0]) * np.sign(g0 - ml[:, 0]))
    last = np.mean((rb[:, -1] - ml[:, -1]) * np.sign((1.0 - g0) - ml[:, -1]))
    interior = np.mean(rb[:, 1:-1] - ml[:, 1:-1])
    return {"first": float(first), "last": float(last), "interior": float(interior),
            "n_tables": len(keep)}
