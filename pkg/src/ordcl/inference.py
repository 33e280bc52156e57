"""Wald and adjusted-score inference, and closed-form empirical logits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .estimation import (
    BC,
    DIVERGING,
    INFINITE,
    ML,
    FitResult,
    SingularInformationError,
    _adjustment,
    _info,
    _invert,
    _score,
)
from .model import DesignBlocks, ModelSpec, OrdinalData, build_design, predict


@dataclass(frozen=True)
class ContrastMatrix:
    L: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if np.linalg.matrix_rank(L) != L.shape[0]:
            raise ValueError("contrast matrix must have full row rank")
        object.__setattr__(self, "L", L)

    @classmethod
    def over(cls, indices, L_block, d: int) -> "ContrastMatrix":
        """Embed contrasts over a subset of parameters into a ``c x d`` matrix."""
        L_block = np.atleast_2d(np.asarray(L_block, dtype=float))
        L = np.zeros((L_block.shape[0], d))
        L[:, list(indices)] = L_block
        return cls(L)

    @classmethod
    def equality(cls, indices, d: int) -> "ContrastMatrix":
        """Contrasts ``b_i - b_last`` testing that the indexed parameters are equal."""
        c = len(indices) - 1
        block = np.hstack([np.eye(c), -np.ones((c, 1))])
        return cls.over(indices, block, d)

    @property
    def df(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p_value": self.p_value}


def chi2_test(statistic: float, df: int) -> TestResult:
    return TestResult(float(statistic), int(df), float(stats.chi2.sf(statistic, df)))


def wald_z(fit: FitResult):
    """Estimates, standard errors and z statistics for every parameter."""
    se = fit.se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = fit.delta / se
    return [
        {"name": name, "estimate": float(est), "se": float(s), "z": float(zz)}
        for name, est, s, zz in zip(fit.names, fit.delta, se, z)
    ]


def wald_ci(fit: FitResult, level: float = 0.95) -> np.ndarray:
    """Wald intervals ``est -/+ z_{1-a/2} SE`` as a ``d x 2`` array.

    Infinite parameters, and parameters flagged as diverging in an ML or BC
    fit, get ``(-inf, inf)``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    crit = stats.norm.ppf(0.5 + level / 2.0)
    half = crit * fit.se
    with np.errstate(invalid="ignore"):
        ci = np.column_stack([fit.delta - half, fit.delta + half])
    for t, flag in enumerate(fit.boundary_flags):
        if flag == INFINITE or (flag == DIVERGING and fit.method in (ML, BC)):
            ci[t] = (-np.inf, np.inf)
    return ci


def wald_p_values(fit: FitResult) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = fit.delta / fit.se
    return 2.0 * stats.norm.sf(np.abs(z))


def wald_contrast_test(fit: FitResult, L) -> TestResult:
    """W = (L d)' (L V L')^-1 (L d), chi-squared on rank(L) degrees of freedom."""
    L = L.L if isinstance(L, ContrastMatrix) else ContrastMatrix(L).L
    used = np.any(L != 0, axis=0)
    if not np.all(np.isfinite(fit.delta[used])):
        raise ValueError("contrast involves non-finite estimates")
    bad = [n for n, f, u in zip(fit.names, fit.boundary_flags, used) if u and f == DIVERGING]
    if bad:
        raise ValueError("contrast involves diverging parameters: " + ", ".join(bad))
    est = L[:, used] @ fit.delta[used]
    V = L[:, used] @ fit.vcov[np.ix_(used, used)] @ L[:, used].T
    try:
        stat = est @ np.linalg.solve(V, est)
    except np.linalg.LinAlgError:
        raise SingularInformationError("L V L' is singular") from None
    return chi2_test(stat, L.shape[0])


def embed(delta_small, embedding, d_large: int | None = None) -> np.ndarray:
    """Map a small-model parameter into the large model.

    ``embedding`` is either a ``d_large x d_small`` matrix or a sequence with,
    for every large-model parameter, the index of the small-model parameter
    supplying its value.
    """
    delta_small = np.asarray(delta_small, dtype=float)
    E = np.asarray(embedding)
    if E.ndim == 1:
        M = np.zeros((len(E), len(delta_small)))
        M[np.arange(len(E)), E.astype(int)] = 1.0
        E = M
    if d_large is not None and E.shape[0] != d_large:
        raise ValueError("embedding does not match the large model dimension")
    return E @ delta_small


def adjusted_score_test(spec_large: ModelSpec, data: OrdinalData, delta_restricted,
                        df: int | None = None, design: DesignBlocks | None = None) -> TestResult:
    """U*(d)' F^-1(d) U*(d) at the restricted estimate embedded in the large model.

    ``df`` defaults to the number of large-model parameters minus the number of
    free parameters of the restricted fit, which must then be supplied through
    a ``(delta, n_free)`` tuple.
    """
    if isinstance(delta_restricted, tuple):
        delta_restricted, n_free = delta_restricted
        df = df if df is not None else spec_large.n_params - n_free
    if df is None:
        raise ValueError("degrees of freedom are required")
    design = design if design is not None else build_design(spec_large, data)
    y = np.asarray(data.y, dtype=float)
    m = y.sum(axis=1)
    pred = predict(spec_large.link, design, delta_restricted)
    F = _info(design, pred, m)
    try:
        Finv = _invert(F)
    except SingularInformationError:
        raise SingularInformationError(
            "Fisher information of the large model is singular at the restricted estimate"
        ) from None
    _, a = _adjustment(design, pred, m, Finv)
    ustar = _score(design, pred, y + a)
    return chi2_test(float(ustar @ Finv @ ustar), df)


def empirical_logit(counts, m=None) -> np.ndarray:
    """Cumulative empirical logits log{(R_s + 1/2) / (m - R_s + 1/2)}, s = 1..k-1."""
    counts = np.asarray(counts, dtype=float)
    m = counts.sum() if m is None else float(m)
    if m < 1:
        raise ValueError("total must be at least 1")
    R = np.cumsum(counts)[:-1]
    return np.log((R + 0.5) / (m - R + 0.5))


def gen_emp_logit_2xk_binary(y11, m1, y21, m2) -> float:
    """Difference of the two rows' half-adjusted logits for a 2 x 2 table."""
    for y, m in ((y11, m1), (y21, m2)):
        if not 0 <= y <= m:
            raise ValueError("counts must lie between 0 and the row total")
    return float(np.log((y11 + 0.5) / (m1 - y11 + 0.5)) - np.log((y21 + 0.5) / (m2 - y21 + 0.5)))
