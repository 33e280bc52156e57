"""Data containers, design blocks and category probabilities.

The linear predictor for row ``r`` and cut ``s`` is ``eta_rs = Z_r[s] @ delta``
where ``Z_r`` is a ``q x d`` block. Columns are laid out as the ``q`` cutpoint
indicators followed by the covariate columns, each entered with a negative
sign. A proportional covariate contributes one column shared by all cuts; a
partial (category-specific) covariate contributes ``q`` columns, one per cut.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .links import LinkFamily


class OrdinalError(Exception):
    """Base class for errors raised by this package."""


class IdentifiabilityError(OrdinalError):
    pass


class InvalidParameterError(OrdinalError):
    pass


class DegenerateDataError(OrdinalError):
    pass


@dataclass(frozen=True)
class OrdinalData:
    """Grouped ordinal observations.

    ``x`` is ``n x p_raw`` and ``y`` is ``n x k``. Counts need not be integers
    (adjusted or pseudo counts are valid data) but must be non-negative.
    """

    x: np.ndarray
    y: np.ndarray
    covariate_names: tuple = ()
    category_labels: tuple = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float, ndmin=2)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(x), -1) if len(x) == len(y) else x.reshape(1, -1)
        if x.size == 0:
            x = np.zeros((y.shape[0], 0))
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} covariate rows but {y.shape[0]} count rows")
        if y.shape[1] < 2:
            raise ValueError("need at least two response categories")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("counts must be finite and non-negative")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        if not np.any(y.sum(axis=1) > 0):
            raise ValueError("at least one row must have a positive total")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("covariate_names does not match the number of covariates")
        object.__setattr__(self, "covariate_names", names)
        labels = tuple(self.category_labels) or tuple(str(s + 1) for s in range(y.shape[1]))
        if len(labels) != y.shape[1]:
            raise ValueError("category_labels does not match the number of categories")
        object.__setattr__(self, "category_labels", labels)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.y.shape[1]

    @property
    def totals(self) -> np.ndarray:
        return self.y.sum(axis=1)

    def with_counts(self, y) -> "OrdinalData":
        return replace(self, y=np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    link: LinkFamily = LinkFamily.LOGIT
    k: int = 2
    proportional_cols: tuple = ()
    partial_cols: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "link", LinkFamily.parse(self.link))
        prop = tuple(int(j) for j in self.proportional_cols)
        part = tuple(int(j) for j in self.partial_cols)
        if set(prop) & set(part):
            raise ValueError("a covariate cannot be both proportional and partial")
        if len(set(prop)) != len(prop) or len(set(part)) != len(part):
            raise ValueError("duplicate covariate index")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        object.__setattr__(self, "proportional_cols", prop)
        object.__setattr__(self, "partial_cols", part)

    @classmethod
    def proportional(cls, link="logit", k=2, p=0) -> "ModelSpec":
        return cls(link=link, k=k, proportional_cols=tuple(range(p)))

    @property
    def q(self) -> int:
        return self.k - 1

    @property
    def covariates(self) -> tuple:
        return tuple(sorted(self.proportional_cols + self.partial_cols))

    @property
    def n_params(self) -> int:
        return self.q + len(self.proportional_cols) + self.q * len(self.partial_cols)

    def with_k(self, k: int) -> "ModelSpec":
        return replace(self, k=k)

    def layout(self):
        """One ``(kind, covariate, cut)`` entry per parameter.

        ``kind`` is ``"cut"``, ``"prop"`` or ``"partial"``; ``cut`` is None for
        proportional slopes and ``covariate`` is None for cutpoints.
        """
        out = [("cut", None, s) for s in range(self.q)]
        for j in self.covariates:
            if j in self.partial_cols:
                out.extend(("partial", j, s) for s in range(self.q))
            else:
                out.append(("prop", j, None))
        return out

    def param_names(self, covariate_names: Sequence[str] | None = None) -> list:
        def cname(j):
            return covariate_names[j] if covariate_names else f"x{j + 1}"

        names = []
        for kind, j, s in self.layout():
            if kind == "cut":
                names.append(f"alpha{s + 1}")
            elif kind == "partial":
                names.append(f"{cname(j)}[{s + 1}]")
            else:
                names.append(cname(j))
        return names


@dataclass(frozen=True)
class DesignBlocks:
    """Stacked per-row design blocks, shape ``(n, q, d)``."""

    blocks: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim != 3:
            raise ValueError("design blocks must be a 3-d array (n, q, d)")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"delta{t + 1}" for t in range(b.shape[2])))

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def q(self) -> int:
        return self.blocks.shape[1]

    @property
    def d(self) -> int:
        return self.blocks.shape[2]

    @property
    def stacked(self) -> np.ndarray:
        return self.blocks.reshape(-1, self.d)

    def eta(self, delta) -> np.ndarray:
        return self.blocks @ np.asarray(delta, dtype=float)

    def transform(self, L) -> "DesignBlocks":
        """Design for the parameter ``L @ delta``; predictors are unchanged."""
        L = np.asarray(L, dtype=float)
        return DesignBlocks(self.blocks @ np.linalg.inv(L))


def _first_dependent_column(Z: np.ndarray, tol: float = 1e-10):
    scale = np.linalg.norm(Z, axis=0)
    scale[scale == 0] = 1.0
    Zs = Z / scale
    for j in range(Z.shape[1]):
        sv = np.linalg.svd(Zs[:, : j + 1], compute_uv=False)
        rank = int(np.sum(sv > tol * max(sv[0], 1.0)))
        if rank < j + 1:
            return j
    return None


def build_design(spec: ModelSpec, data: OrdinalData, check_rank: bool = True) -> DesignBlocks:
    if spec.k != data.k:
        raise ValueError(f"spec has k={spec.k} but data has k={data.k}")
    p_raw = data.x.shape[1]
    for j in spec.covariates:
        if not 0 <= j < p_raw:
            raise ValueError(f"covariate index {j} out of range for {p_raw} covariates")
    n, q = data.n, spec.q
    blocks = np.zeros((n, q, spec.n_params))
    for t, (kind, j, s) in enumerate(spec.layout()):
        if kind == "cut":
            blocks[:, s, t] = 1.0
        elif kind == "prop":
            blocks[:, :, t] = -data.x[:, [j]]
        else:
            blocks[:, s, t] = -data.x[:, j]
    names = tuple(spec.param_names(data.covariate_names))
    design = DesignBlocks(blocks, names)
    if check_rank:
        bad = _first_dependent_column(design.stacked)
        if bad is not None:
            raise IdentifiabilityError(
                f"design is rank deficient: column {bad} ({names[bad]}) is linearly "
                "dependent on the preceding columns"
            )
    return design


class Probabilities(NamedTuple):
    gamma: np.ndarray
    pi: np.ndarray


class Predicted(NamedTuple):
    eta: np.ndarray      # n x q
    gamma: np.ndarray    # n x q, G(eta)
    pi: np.ndarray       # n x k
    g: np.ndarray        # n x q, density at eta
    dg: np.ndarray       # n x q, density derivative at eta


def check_monotone(eta: np.ndarray) -> None:
    if eta.shape[1] < 2:
        return
    ok = eta[:, 1:] > eta[:, :-1]
    if not ok.all():
        r, s = np.argwhere(~ok)[0]
        raise InvalidParameterError(
            f"linear predictors not increasing at row {r}, categories {s + 1}/{s + 2}: "
            f"eta = {eta[r, s]:.6g} >= {eta[r, s + 1]:.6g}"
        )


def _probs_from(gam, sgam):
    n = gam.shape[0]
    gam_ext = np.hstack([np.zeros((n, 1)), gam, np.ones((n, 1))])
    sf_ext = np.hstack([np.ones((n, 1)), sgam, np.zeros((n, 1))])
    upper = gam_ext[:, :-1] > 0.5
    pi = np.where(upper, sf_ext[:, :-1] - sf_ext[:, 1:], gam_ext[:, 1:] - gam_ext[:, :-1])
    return np.maximum(pi, 0.0)


def category_probs(link: LinkFamily, eta: np.ndarray):
    """Return ``(gamma, pi)`` with tail probabilities computed without cancellation."""
    gam = link.cdf(eta, clip=False)
    return gam, _probs_from(gam, link.sf(eta))


def predict(link: LinkFamily, design: DesignBlocks, delta) -> Predicted:
    eta = design.eta(delta)
    if not np.isfinite(eta).all():
        raise InvalidParameterError("non-finite linear predictor")
    check_monotone(eta)
    gam, sgam, g, dg = link.evaluate(eta)
    return Predicted(eta, gam, _probs_from(gam, sgam), g, dg)


def probabilities(spec: ModelSpec, design: DesignBlocks, delta) -> Probabilities:
    pred = predict(spec.link, design, delta)
    return Probabilities(pred.gamma, pred.pi)


def aggregate(data: OrdinalData) -> OrdinalData:
    """Sum the counts of rows sharing a covariate vector (first-occurrence order)."""
    index: dict = {}
    xs, ys = [], []
    for xr, yr in zip(data.x, data.y):
        key = tuple(xr.tolist())
        if key in index:
            ys[index[key]] = ys[index[key]] + yr
        else:
            index[key] = len(xs)
            xs.append(xr)
            ys.append(yr.copy())
    return replace(data, x=np.array(xs).reshape(len(xs), data.x.shape[1]), y=np.array(ys))


@dataclass(frozen=True)
class CategoryMap:
    """Relation between original categories/cuts and a merged set.

    ``groups[j]`` lists the original categories forming merged category ``j``.
    ``cut_class[c]`` is the merged cut that original cut ``c`` coincides with,
    or ``-1``/``-2`` for a cut sent to minus/plus infinity. ``reps[j]`` is the
    original category that carries the probability of merged category ``j``
    (its non-empty member).
    """

    groups: tuple
    cut_class: tuple
    reps: tuple

    NEG_INF = -1
    POS_INF = -2

    @property
    def k_old(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def k_new(self) -> int:
        return len(self.groups)

    @property
    def is_identity(self) -> bool:
        return all(len(g) == 1 for g in self.groups)

    def apply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.stack([y[..., list(g)].sum(axis=-1) for g in self.groups], axis=-1)

    def expand_probs(self, pi_new) -> np.ndarray:
        """Put merged probabilities back on the original categories (empty ones get 0)."""
        pi_new = np.asarray(pi_new, dtype=float)
        out = np.zeros(pi_new.shape[:-1] + (self.k_old,))
        out[..., list(self.reps)] = pi_new
        return out


def category_map(totals, keep_ends: bool = False) -> CategoryMap:
    """Work out which categories merge, given column totals.

    Cuts with equal cumulative totals coincide and merge rightward. Unless
    ``keep_ends`` is set, cuts with cumulative total 0 or N are sent to -inf or
    +inf, which merges an empty first (last) category with its right (left)
    neighbour.
    """
    totals = np.asarray(totals, dtype=float)
    k = len(totals)
    cum = np.cumsum(totals)[:-1]
    total = totals.sum()
    cut_class = []
    reps = []
    last_value = None
    for c, value in enumerate(cum):
        if not keep_ends and value <= 0:
            cut_class.append(CategoryMap.NEG_INF)
            continue
        if not keep_ends and value >= total:
            cut_class.append(CategoryMap.POS_INF)
            continue
        if last_value is not None and value == last_value:
            cut_class.append(len(reps) - 1)
            continue
        reps.append(c)
        cut_class.append(len(reps) - 1)
        last_value = value
    if not reps:
        raise DegenerateDataError("fewer than two non-empty categories after merging")
    bounds = [-1] + reps + [k - 1]
    groups = tuple(tuple(range(bounds[j] + 1, bounds[j + 1] + 1)) for j in range(len(bounds) - 1))
    # representative original category of each group = the non-empty member,
    # or the end category itself when the whole group is empty (kept end)
    rep_cats = []
    for g in groups:
        nonzero = [c for c in g if totals[c] > 0]
        rep_cats.append(nonzero[0] if nonzero else (g[-1] if g[-1] == k - 1 else g[0]))
    return CategoryMap(groups, tuple(cut_class), tuple(rep_cats))


def merge_empty_categories(data: OrdinalData, keep_ends: bool = False):
    """Merge categories that are empty in every row.

    An empty category is merged with its right neighbour; an empty last
    category merges left. With ``keep_ends`` empty first and last categories
    are kept. Returns ``(merged_data, CategoryMap)``.
    """
    cmap = category_map(data.y.sum(axis=0), keep_ends=keep_ends)
    labels = tuple("+".join(data.category_labels[c] for c in g) for g in cmap.groups)
    merged = replace(data, y=cmap.apply(data.y), category_labels=labels)
    return merged, cmap


def reverse_categories(data: OrdinalData) -> OrdinalData:
    return replace(
        data, y=data.y[:, ::-1].copy(), category_labels=tuple(reversed(data.category_labels))
    )
