"""Maximum likelihood, bias-corrected and reduced-bias fitting.

All quantities are computed from the per-row design blocks ``Z_r`` and the
counts; the likelihood is the product-multinomial one with category
probabilities ``pi_rs = G(eta_rs) - G(eta_r,s-1)``.

Bias reduction uses the fact that the bias-reducing adjusted score is the
ordinary score evaluated with counts ``y_rs + a_rs`` where ``a_rs = c_rs -
c_r,s-1`` and ``c_rs = m_r g'(eta_rs) v_rss / 2``. Since adding ``lambda_r *
pi_rs`` to every count of row ``r`` leaves the score unchanged, the adjustment
can always be shifted to be non-negative, so each reduced-bias iteration is an
ordinary ML fit to non-negative pseudo counts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .links import LinkFamily
from .model import (
    CategoryMap,
    DesignBlocks,
    InvalidParameterError,
    ModelSpec,
    OrdinalData,
    OrdinalError,
    Predicted,
    build_design,
    merge_empty_categories,
    predict,
)

log = logging.getLogger(__name__)

ML, RB, BC = "ML", "RB", "BC"

FINITE = "finite"
DIVERGING = "diverging"
TIED = "tied_cutpoint"
INFINITE = "infinite"
UNDETERMINED = "undetermined"


class SingularInformationError(OrdinalError):
    pass


class NonConvergenceError(OrdinalError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


class UndefinedEstimatorError(OrdinalError):
    pass


@dataclass(frozen=True)
class FitControl:
    grad_tol: float = 1e-10
    max_iter: int = 100
    max_halvings: int = 20
    divergence_se_threshold: float = 200.0
    divergence_est_threshold: float = 100.0
    # extra scoring steps taken past convergence to confirm divergence
    second_pass: bool = True
    second_pass_iter: int = 10
    drift_tol: float = 1e-3

    def __post_init__(self):
        for name in ("grad_tol", "max_iter", "max_halvings",
                     "divergence_se_threshold", "divergence_est_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# kernels on (link, design, counts)


def _kernel(pred: Predicted, y: np.ndarray) -> np.ndarray:
    """g_rs (y_rs / pi_rs - y_r,s+1 / pi_r,s+1), shape n x q."""
    ratio = np.divide(y, pred.pi, out=np.zeros_like(y), where=y != 0)
    return pred.g * (ratio[:, :-1] - ratio[:, 1:])


def _score(design: DesignBlocks, pred: Predicted, y) -> np.ndarray:
    return np.einsum("rsd,rs->d", design.blocks, _kernel(pred, y))


def _loglik(pred: Predicted, y) -> float:
    pos = y > 0
    if np.any(pred.pi[pos] <= 0):
        return -np.inf
    return float(np.sum(y[pos] * np.log(pred.pi[pos])))


def _working_weights(pred: Predicted, m: np.ndarray) -> np.ndarray:
    """Per-row q x q matrices D_r Sigma_r^-1 D_r^T (tridiagonal)."""
    n, q = pred.g.shape
    active = m > 0
    if np.any(pred.pi[active] <= 0):
        r = int(np.argwhere(active[:, None] & (pred.pi <= 0))[0, 0])
        raise SingularInformationError(f"zero category probability in row {r}")
    inv_pi = np.divide(1.0, pred.pi, out=np.zeros_like(pred.pi), where=pred.pi > 0)
    g = pred.g
    W = np.zeros((n, q, q))
    idx = np.arange(q)
    W[:, idx, idx] = m[:, None] * g * g * (inv_pi[:, :-1] + inv_pi[:, 1:])
    if q > 1:
        off = -m[:, None] * g[:, :-1] * g[:, 1:] * inv_pi[:, 1:-1]
        W[:, idx[:-1], idx[1:]] = off
        W[:, idx[1:], idx[:-1]] = off
    return W


def _info(design: DesignBlocks, pred: Predicted, m) -> np.ndarray:
    W = _working_weights(pred, m)
    F = np.einsum("rsa,rst,rtb->ab", design.blocks, W, design.blocks)
    return 0.5 * (F + F.T)


def _invert(F: np.ndarray, pivot_tol: float = 1e-10) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via equilibrated Cholesky."""
    diag = np.diag(F)
    if not np.all(np.isfinite(F)) or np.any(diag <= 0):
        raise SingularInformationError("Fisher information has a non-positive diagonal")
    s = 1.0 / np.sqrt(diag)
    Fs = F * s[:, None] * s[None, :]
    try:
        c, lower = linalg.cho_factor(Fs, lower=True)
    except linalg.LinAlgError:
        raise SingularInformationError("Fisher information is not positive definite") from None
    if np.min(np.diag(c)) ** 2 <= pivot_tol:
        raise SingularInformationError("Fisher information is numerically singular")
    inv = linalg.cho_solve((c, lower), np.eye(len(F)))
    inv = inv * s[:, None] * s[None, :]
    return 0.5 * (inv + inv.T)


def _solve(F: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Scoring direction F^-1 U; tolerates the near-singular F of diverging fits."""
    s = 1.0 / np.sqrt(np.maximum(np.diag(F), np.finfo(float).tiny))
    Fs = F * s[:, None] * s[None, :]
    try:
        c = linalg.cho_factor(Fs, lower=True)
        return s * linalg.cho_solve(c, s * U)
    except linalg.LinAlgError:
        return s * np.linalg.lstsq(Fs, s * U, rcond=1e-14)[0]


def _adjustment(design: DesignBlocks, pred: Predicted, m, Finv):
    """c (n x (k+1), zero end columns) and a = diff(c) (n x k)."""
    v = np.einsum("rsa,ab,rsb->rs", design.blocks, Finv, design.blocks)
    n = v.shape[0]
    c = np.zeros((n, v.shape[1] + 2))
    c[:, 1:-1] = 0.5 * m[:, None] * pred.dg * v
    return c, np.diff(c, axis=1)


def _pseudo_counts(y, a, pi) -> np.ndarray:
    """y + a + lambda_r * pi_r with the smallest lambda_r >= 0 making a + lambda pi >= 0."""
    ratio = np.divide(-a, pi, out=np.zeros_like(a), where=pi > 0)
    lam = np.maximum(ratio.max(axis=1), 0.0)
    adj = np.maximum(a + lam[:, None] * pi, 0.0)
    return y + adj


# ---------------------------------------------------------------------------
# public evaluation functions


def _resolve(spec: ModelSpec, design: Optional[DesignBlocks], data: OrdinalData):
    if design is None:
        design = build_design(spec, data)
    return spec.link, design, np.asarray(data.y, dtype=float)


def loglik(spec, design, data, delta) -> float:
    """Multinomial log-likelihood kernel (no combinatorial constant)."""
    link, design, y = _resolve(spec, design, data)
    return _loglik(predict(link, design, delta), y)


def score(spec, design, data, delta) -> np.ndarray:
    link, design, y = _resolve(spec, design, data)
    return _score(design, predict(link, design, delta), y)


def fisher_info(spec, design, data, delta) -> np.ndarray:
    link, design, y = _resolve(spec, design, data)
    return _info(design, predict(link, design, delta), y.sum(axis=1))


@dataclass(frozen=True)
class AdjustmentTerms:
    c: np.ndarray
    a: np.ndarray


def adjustment_terms(spec, design, data, delta) -> AdjustmentTerms:
    link, design, y = _resolve(spec, design, data)
    m = y.sum(axis=1)
    pred = predict(link, design, delta)
    c, a = _adjustment(design, pred, m, _invert(_info(design, pred, m)))
    return AdjustmentTerms(c, a)


def adjustment(spec, design, data, delta) -> np.ndarray:
    """The additive score adjustment A(delta)."""
    link, design, y = _resolve(spec, design, data)
    m = y.sum(axis=1)
    pred = predict(link, design, delta)
    _, a = _adjustment(design, pred, m, _invert(_info(design, pred, m)))
    return _score(design, pred, a)


def adjusted_score(spec, design, data, delta) -> np.ndarray:
    link, design, y = _resolve(spec, design, data)
    m = y.sum(axis=1)
    pred = predict(link, design, delta)
    _, a = _adjustment(design, pred, m, _invert(_info(design, pred, m)))
    return _score(design, pred, y + a)


def adjusted_counts(spec, design, data, delta) -> np.ndarray:
    link, design, y = _resolve(spec, design, data)
    m = y.sum(axis=1)
    pred = predict(link, design, delta)
    _, a = _adjustment(design, pred, m, _invert(_info(design, pred, m)))
    return _pseudo_counts(y, a, pred.pi)


def first_order_bias(spec, design, data, delta) -> np.ndarray:
    link, design, y = _resolve(spec, design, data)
    m = y.sum(axis=1)
    pred = predict(link, design, delta)
    Finv = _invert(_info(design, pred, m))
    _, a = _adjustment(design, pred, m, Finv)
    return -Finv @ _score(design, pred, a)


# ---------------------------------------------------------------------------
# fitting machinery


@dataclass
class FitResult:
    method: str
    delta: np.ndarray
    vcov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    boundary_flags: list
    trace: list
    names: tuple
    max_score: float
    spec: Optional[ModelSpec] = None
    data: Optional[OrdinalData] = None
    design: Optional[DesignBlocks] = None
    category_map: Optional[CategoryMap] = None
    drift: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)
    _reduced: Optional["_Problem"] = field(default=None, repr=False)
    _reduced_delta: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.vcov))

    @property
    def has_boundary(self) -> bool:
        return any(f != FINITE for f in self.boundary_flags)

    @property
    def diverging(self) -> np.ndarray:
        return np.array([f == DIVERGING for f in self.boundary_flags], dtype=bool)

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            if np.isnan(v):
                return None
            if np.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.delta / se
        return {
            "method": self.method,
            "link": self.spec.link.value if self.spec else None,
            "names": list(self.names),
            "estimates": [num(v) for v in self.delta],
            "se": [num(v) for v in se],
            "z": [num(v) for v in z],
            "vcov": [[num(v) for v in row] for row in self.vcov],
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "max_score": self.max_score,
            "boundary_flags": list(self.boundary_flags),
            "notes": list(self.notes),
        }


@dataclass
class _Problem:
    """A fit-ready problem: link, design and (possibly merged) counts."""

    link: LinkFamily
    design: DesignBlocks
    y: np.ndarray

    @property
    def m(self) -> np.ndarray:
        return self.y.sum(axis=1)

    def predict(self, delta) -> Predicted:
        return predict(self.link, self.design, delta)


def _lstsq_start(link: LinkFamily, design: DesignBlocks, p: np.ndarray) -> np.ndarray:
    eta0 = link.quantile(p)
    # separate equal values so the start respects the ordering
    eta0 = eta0 + 1e-3 * np.arange(eta0.shape[-1])
    eta0 = np.maximum.accumulate(eta0, axis=-1)
    target = np.broadcast_to(eta0, (design.n, design.q)).ravel()
    delta, *_ = np.linalg.lstsq(design.stacked, target, rcond=None)
    return delta


def _start(link: LinkFamily, design: DesignBlocks, y: np.ndarray) -> np.ndarray:
    """Least-squares fit of the design to half-smoothed cumulative transforms.

    Row-wise transforms are tried first; the pooled ones are used when the
    row-wise start violates the cutpoint ordering.
    """
    R = np.cumsum(y, axis=1)[:, :-1]
    m = y.sum(axis=1, keepdims=True)
    delta = _lstsq_start(link, design, (R + 0.5) / (m + 1.0))
    if np.all(np.diff(design.eta(delta), axis=1) > 0):
        return delta
    tot = y.sum(axis=0)
    return _lstsq_start(link, design, (np.cumsum(tot)[:-1] + 0.5) / (tot.sum() + 1.0))


def _try(prob: _Problem, delta, y):
    try:
        pred = prob.predict(delta)
    except InvalidParameterError:
        return None, -np.inf
    return pred, _loglik(pred, y)


def _fisher_scoring(prob: _Problem, y, delta, control: FitControl, grad_tol=None,
                    max_iter=None):
    """Maximise the likelihood of counts ``y``; returns (delta, iterations, trace, converged)."""
    grad_tol = control.grad_tol if grad_tol is None else grad_tol
    max_iter = control.max_iter if max_iter is None else max_iter
    m = y.sum(axis=1)
    pred, ll = _try(prob, delta, y)
    if pred is None:
        raise InvalidParameterError("starting value violates the cutpoint ordering")
    trace = []
    for it in range(max_iter + 1):
        U = _score(prob.design, pred, y)
        gmax = float(np.max(np.abs(U)))
        trace.append(gmax)
        if gmax < grad_tol:
            return delta, it, trace, True
        if it == max_iter:
            break
        step = _solve(_info(prob.design, pred, m), U)
        slack = 1e-12 * (1.0 + abs(ll))
        t = 1.0
        for _ in range(control.max_halvings + 1):
            cand = delta + t * step
            cpred, cll = _try(prob, cand, y)
            if cpred is not None and cll >= ll - slack:
                break
            t *= 0.5
        else:
            log.debug("step halving exhausted at iteration %d (max|U|=%.3g)", it, gmax)
            return delta, it, trace, False
        delta, pred, ll = cand, cpred, cll
    return delta, max_iter, trace, False


def _vcov_or_nan(prob: _Problem, delta) -> np.ndarray:
    pred = prob.predict(delta)
    F = _info(prob.design, pred, prob.m)
    try:
        return _invert(F)
    except SingularInformationError:
        # diverging fits: report the pseudo-inverse so the SEs show the blow-up
        return np.linalg.pinv(F, rcond=1e-300, hermitian=True)


def _expansion(spec_full: ModelSpec, spec_red: ModelSpec, cmap: CategoryMap):
    """For each full parameter: index into the reduced vector, or a marker."""
    red_index = {entry: t for t, entry in enumerate(spec_red.layout())}
    src = []
    for kind, j, c in spec_full.layout():
        if kind == "prop":
            src.append(red_index[(kind, j, None)])
            continue
        cls = cmap.cut_class[c]
        if cls >= 0:
            src.append(red_index[(kind, j, cls)])
        elif kind == "cut":
            src.append("-inf" if cls == CategoryMap.NEG_INF else "+inf")
        else:
            src.append("nan")
    return src


def _expand(src, delta_red, vcov_red, drift_red=None):
    d = len(src)
    delta = np.empty(d)
    vcov = np.full((d, d), np.nan)
    drift = None if drift_red is None else np.zeros(d)
    finite = [t for t, s in enumerate(src) if isinstance(s, (int, np.integer))]
    for t in range(d):
        s = src[t]
        if s == "-inf":
            delta[t] = -np.inf
            vcov[t, t] = np.inf
        elif s == "+inf":
            delta[t] = np.inf
            vcov[t, t] = np.inf
        elif s == "nan":
            delta[t] = np.nan
        else:
            delta[t] = delta_red[s]
            if drift is not None:
                drift[t] = drift_red[s]
    for t in finite:
        for u in finite:
            vcov[t, u] = vcov_red[src[t], src[u]]
    return delta, vcov, drift


def detect_boundary(fit: FitResult, data: OrdinalData = None, control: FitControl = None) -> list:
    """Classify every parameter of a fit.

    ``infinite`` marks cutpoints sent to -inf/+inf by an empty end category,
    ``tied_cutpoint`` cutpoints forced equal by an empty interior category and
    ``diverging`` parameters whose standard error exceeds the SE threshold and
    that either exceed the estimate threshold or kept drifting in the
    confirmation pass.
    """
    control = control or FitControl()
    data = data if data is not None else fit.data
    flags = []
    se = fit.se
    tied = set()
    if fit.category_map is not None and fit.spec is not None:
        classes = fit.category_map.cut_class
        for c, cls in enumerate(classes):
            if cls >= 0 and sum(1 for other in classes if other == cls) > 1:
                tied.add(c)
        layout = fit.spec.layout()
    else:
        layout = [None] * len(fit.delta)
    for t, est in enumerate(fit.delta):
        entry = layout[t]
        if np.isnan(est):
            flags.append(UNDETERMINED)
        elif np.isinf(est):
            flags.append(INFINITE)
        elif se[t] > control.divergence_se_threshold and (
            abs(est) > control.divergence_est_threshold
            or (fit.drift is not None and abs(fit.drift[t]) > control.drift_tol)
        ):
            flags.append(DIVERGING)
        elif entry is not None and entry[0] == "cut" and entry[2] in tied:
            flags.append(TIED)
        else:
            flags.append(FINITE)
    return flags


def _prepare(spec: ModelSpec, data: OrdinalData, design, keep_ends: bool):
    """Reduce the data by merging empty categories; returns (problem, spec_red, cmap, src)."""
    if design is not None:
        return _Problem(spec.link, design, np.asarray(data.y, dtype=float)), spec, None, None
    if spec.k != data.k:
        raise ValueError(f"spec has k={spec.k} but data has k={data.k}")
    merged, cmap = merge_empty_categories(data, keep_ends=keep_ends)
    if cmap.is_identity:
        return _Problem(spec.link, build_design(spec, data), np.asarray(data.y, float)), spec, cmap, None
    spec_red = spec.with_k(merged.k)
    prob = _Problem(spec.link, build_design(spec_red, merged), np.asarray(merged.y, float))
    return prob, spec_red, cmap, _expansion(spec, spec_red, cmap)


def _finish(method, spec, data, design, prob, cmap, src, delta_red, iterations, converged,
            trace, control, drift_red=None, max_score=None):
    vcov_red = _vcov_or_nan(prob, delta_red)
    pred = prob.predict(delta_red)
    ll = _loglik(pred, prob.y)
    if max_score is None:
        max_score = float(np.max(np.abs(_score(prob.design, pred, prob.y))))
    if src is None:
        delta, vcov, drift = np.array(delta_red, float), vcov_red, drift_red
    else:
        delta, vcov, drift = _expand(src, delta_red, vcov_red, drift_red)
    full_design = design
    if full_design is None:
        full_design = build_design(spec, data, check_rank=False)
    fit = FitResult(
        method=method, delta=delta, vcov=vcov, loglik=ll, iterations=iterations,
        converged=converged, boundary_flags=[], trace=trace,
        names=tuple(full_design.names), max_score=max_score, spec=spec, data=data,
        design=full_design, category_map=cmap, drift=drift,
        _reduced=prob, _reduced_delta=np.array(delta_red, float),
    )
    fit.boundary_flags = detect_boundary(fit, data, control)
    return fit


def _second_pass(prob: _Problem, delta, control: FitControl):
    """Keep scoring past convergence; diverging components keep moving."""
    more, *_ = _fisher_scoring(prob, prob.y, delta, control, grad_tol=0.0,
                               max_iter=control.second_pass_iter)
    return more - delta


def fit_ml(spec: ModelSpec, data: OrdinalData, control: FitControl = None,
           design: DesignBlocks = None, start=None) -> FitResult:
    """Maximum likelihood by Fisher scoring with step halving.

    Categories that are empty in every row are merged first; the cutpoints
    involved come back as ties (interior) or infinities (ends).
    """
    control = control or FitControl()
    prob, spec_red, cmap, src = _prepare(spec, data, design, keep_ends=False)
    delta0 = _start(prob.link, prob.design, prob.y) if start is None else np.asarray(start, float)
    delta, iters, trace, converged = _fisher_scoring(prob, prob.y, delta0, control)
    drift = None
    vcov = _vcov_or_nan(prob, delta)
    with np.errstate(invalid="ignore"):
        suspicious = np.any(~(np.sqrt(np.diag(vcov)) <= control.divergence_se_threshold))
    if suspicious and control.second_pass:
        drift = _second_pass(prob, delta, control)
    if not converged and not suspicious:
        raise NonConvergenceError(
            f"ML fit did not converge in {iters} iterations (max|U| = {trace[-1]:.3g})", trace
        )
    fit = _finish(ML, spec, data, design, prob, cmap, src, delta, iters, converged, trace,
                  control, drift_red=drift)
    if not converged and not np.any(fit.diverging):
        raise NonConvergenceError(
            f"ML fit did not converge in {iters} iterations (max|U| = {trace[-1]:.3g})", trace
        )
    return fit


def _quasi_fisher_rb(prob: _Problem, delta, control: FitControl, trace):
    """Damped root finding on U*: Newton with a difference Jacobian, Fisher step as fallback."""
    y, m = prob.y, prob.m

    def ustar(d):
        pred = prob.predict(d)
        F = _info(prob.design, pred, m)
        _, a = _adjustment(prob.design, pred, m, _invert(F))
        return _score(prob.design, pred, y + a), F

    def neg_jacobian(d):
        h = 1e-6 * np.maximum(1.0, np.abs(d))
        J = np.empty((d.size, d.size))
        for t in range(d.size):
            e = np.zeros(d.size)
            e[t] = h[t]
            J[:, t] = (ustar(d - e)[0] - ustar(d + e)[0]) / (2 * h[t])
        return J

    def search(step, gmax):
        t = 1.0
        for _ in range(control.max_halvings + 1):
            cand = delta + t * step
            try:
                cU, cF = ustar(cand)
            except OrdinalError:
                t *= 0.5
                continue
            if np.max(np.abs(cU)) < gmax:
                return cand, cU, cF
            t *= 0.5
        return None

    U, F = ustar(delta)
    for it in range(control.max_iter):
        gmax = float(np.max(np.abs(U)))
        trace.append(gmax)
        if gmax < control.grad_tol:
            return delta, it, True
        found = None
        try:
            found = search(np.linalg.solve(neg_jacobian(delta), U), gmax)
        except (OrdinalError, np.linalg.LinAlgError):
            pass
        if found is None:
            found = search(_solve(F, U), gmax)
        if found is None:
            return delta, it, False
        delta, U, F = found
    return delta, control.max_iter, False


_POLISH_BELOW = 1e-3


def _rb_solve(prob: _Problem, delta, control: FitControl):
    """Iterated ML fits on adjusted counts; returns (delta, iterations, trace, converged, max|U*|)."""
    y, m = prob.y, prob.m
    trace = []
    iters = 0
    best = np.inf
    stalled = 0
    for outer in range(control.max_iter):
        pred = prob.predict(delta)
        Finv = _invert(_info(prob.design, pred, m))
        _, a = _adjustment(prob.design, pred, m, Finv)
        ustar = _score(prob.design, pred, y + a)
        gmax = float(np.max(np.abs(ustar)))
        trace.append(gmax)
        if gmax < control.grad_tol:
            return delta, iters, trace, True, gmax
        if gmax < _POLISH_BELOW:
            break
        stalled = stalled + 1 if gmax >= 0.5 * best else 0
        best = min(best, gmax)
        if stalled >= 5:
            break
        pseudo = _pseudo_counts(y, a, pred.pi)
        try:
            # inexact inner solves: U* is re-evaluated at every outer step anyway
            delta, inner, _, _ = _fisher_scoring(prob, pseudo, delta, control,
                                                 grad_tol=max(control.grad_tol, 1e-3 * gmax))
        except OrdinalError:
            break
        iters += inner
    # the fixed-point iteration converges linearly; finish with Newton steps on U*
    log.debug("switching to Newton steps on the adjusted score at max|U*| = %.3g", trace[-1])
    delta, more, ok = _quasi_fisher_rb(prob, delta, control, trace)
    iters += more
    return delta, iters, trace, ok, trace[-1]


def fit_rb(spec: ModelSpec, data: OrdinalData, control: FitControl = None,
           design: DesignBlocks = None, start=None) -> FitResult:
    """Reduced-bias fit: solve U*(delta) = 0 by ML fits on adjusted counts.

    Empty end categories are kept (the estimates stay finite); empty interior
    categories are merged and their cutpoints reported as ties.
    """
    control = control or FitControl()
    prob, spec_red, cmap, src = _prepare(spec, data, design, keep_ends=True)
    delta0 = _start(prob.link, prob.design, prob.y) if start is None else np.asarray(start, float)
    delta, iters, trace, converged, gmax = _rb_solve(prob, delta0, control)
    if not converged:
        raise NonConvergenceError(
            f"reduced-bias fit did not converge (max|U*| = {gmax:.3g})", trace
        )
    return _finish(RB, spec, data, design, prob, cmap, src, delta, iters, converged, trace,
                   control, max_score=gmax)


def _correction_step(prob: _Problem, delta):
    """F^-1 (U + A) at delta; at the ML estimate this is -b(delta)."""
    pred = prob.predict(delta)
    m = prob.m
    Finv = _invert(_info(prob.design, pred, m))
    _, a = _adjustment(prob.design, pred, m, Finv)
    return Finv @ _score(prob.design, pred, prob.y + a)


def fit_bc(spec: ModelSpec, data: OrdinalData, control: FitControl = None,
           design: DesignBlocks = None, ml: FitResult = None) -> FitResult:
    """One-step bias correction of the ML estimate: delta_ML - b(delta_ML)."""
    control = control or FitControl()
    ml = ml if ml is not None else fit_ml(spec, data, control, design=design)
    if np.any(ml.diverging):
        bad = [n for n, f in zip(ml.names, ml.boundary_flags) if f == DIVERGING]
        raise UndefinedEstimatorError(
            "bias correction is undefined because the ML estimate is infinite for "
            + ", ".join(bad)
        )
    prob = ml._reduced
    d0 = ml._reduced_delta
    pred = prob.predict(d0)
    Finv = _invert(_info(prob.design, pred, prob.m))
    _, a = _adjustment(prob.design, pred, prob.m, Finv)
    delta = d0 + Finv @ _score(prob.design, pred, a)
    try:
        prob.predict(delta)
    except InvalidParameterError as exc:
        raise UndefinedEstimatorError(f"bias-corrected estimate violates the ordering: {exc}") from None
    src = None if ml.category_map is None or ml.category_map.is_identity else _expansion(
        spec, spec.with_k(prob.y.shape[1]), ml.category_map)
    return _finish(BC, spec, data, design, prob, ml.category_map, src, delta, ml.iterations,
                   True, list(ml.trace), control)


def iterate_bias_correction(spec: ModelSpec, data: OrdinalData, n_iter: int = 1,
                            control: FitControl = None, design: DesignBlocks = None):
    """Iterated bias correction delta <- delta + F^-1 U - b(delta), started at the ML fit.

    Returns the list of iterates (the first one is the ML estimate on the
    reduced parameter vector, the second the one-step bias correction).
    """
    control = control or FitControl()
    ml = fit_ml(spec, data, control, design=design)
    if np.any(ml.diverging):
        raise UndefinedEstimatorError("ML estimate is infinite; iteration cannot start")
    prob = ml._reduced
    delta = ml._reduced_delta.copy()
    path = [delta.copy()]
    for _ in range(n_iter):
        delta = delta + _correction_step(prob, delta)
        path.append(delta.copy())
    return path


def fit(spec, data, method="ml", control=None, design=None) -> FitResult:
    method = method.upper()
    if method == ML:
        return fit_ml(spec, data, control, design)
    if method == RB:
        return fit_rb(spec, data, control, design)
    if method == BC:
        return fit_bc(spec, data, control, design)
    raise ValueError(f"unknown method {method!r}")
