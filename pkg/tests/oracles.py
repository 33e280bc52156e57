"""Reference implementations used only by the tests.

They are written against the model definition directly and share no code
with the package beyond data containers.
"""
import itertools

import mpmath
import numpy as np
from scipy import optimize, stats

from ordcl.model import IdentifiabilityError, ModelSpec, OrdinalData, build_design

_CDF = {
    "logit": stats.logistic.cdf,
    "probit": stats.norm.cdf,
    "cloglog": lambda e: -np.expm1(-np.exp(e)),
}
_SF = {
    "logit": stats.logistic.sf,
    "probit": stats.norm.sf,
    "cloglog": lambda e: np.exp(-np.exp(e)),
}
_PDF = {
    "logit": stats.logistic.pdf,
    "probit": stats.norm.pdf,
    "cloglog": lambda e: np.exp(e - np.exp(e)),
}


def design_rows(x_row, q, prop, part):
    """q x d block for one row: cut indicators, then -x entries in covariate order."""
    cols = [np.eye(q)]
    for j in sorted(list(prop) + list(part)):
        if j in part:
            cols.append(-x_row[j] * np.eye(q))
        else:
            cols.append(np.full((q, 1), -x_row[j]))
    return np.hstack(cols)


def blocks(x, q, prop=(), part=()):
    return np.array([design_rows(np.atleast_1d(xr), q, prop, part) for xr in x])


def probs(link, Z, delta):
    """Category probabilities; survival differences in the upper half keep tails exact."""
    eta = Z @ delta
    n = eta.shape[0]
    lo = np.hstack([np.full((n, 1), -np.inf), eta])
    hi = np.hstack([eta, np.full((n, 1), np.inf)])
    upper = lo > 0
    return np.where(upper, _SF[link](lo) - _SF[link](hi), _CDF[link](hi) - _CDF[link](lo))


def loglik(link, Z, y, delta):
    pi = probs(link, Z, delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.sum(np.where(y > 0, y * np.log(pi), 0.0)))


def richardson_grad(f, x, h=1e-3):
    """Central differences with one Richardson step."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for t in range(len(x)):
        e = np.zeros_like(x)
        e[t] = 1.0

        def d(hh):
            return (f(x + hh * e) - f(x - hh * e)) / (2 * hh)

        out[t] = (4 * d(h / 2) - d(h)) / 3
    return out


def multinomial_outcomes(m, k):
    for cut in itertools.combinations(range(m + k - 1), k - 1):
        bounds = (-1,) + cut + (m + k - 1,)
        yield np.array([bounds[i + 1] - bounds[i] - 1 for i in range(k)])


def expected_info_enum(link, Z, m, delta, score_fn, h=1e-4):
    """E[-d2 l] over every outcome table, Hessian by Richardson-differenced score."""
    n, q, d = Z.shape
    k = q + 1
    pi = probs(link, Z, delta)
    per_row = [list(multinomial_outcomes(int(mr), k)) for mr in m]
    F = np.zeros((d, d))
    total = 0.0
    for combo in itertools.product(*per_row):
        y = np.array(combo, float)
        p = np.prod([stats.multinomial.pmf(y[r], int(m[r]), pi[r]) for r in range(n)])
        total += p
        H = np.zeros((d, d))
        for t in range(d):
            e = np.zeros(d)
            e[t] = 1.0

            def dd(hh):
                return (score_fn(y, delta + hh * e) - score_fn(y, delta - hh * e)) / (2 * hh)

            H[:, t] = (4 * dd(h / 2) - dd(h)) / 3
        F -= p * H
    return F, total


def _mp_link(link):
    """(cdf, sf, pdf, pdf') in mpmath for the three links."""
    mp = mpmath
    if link == "logit":
        def cdf(e): return 1 / (1 + mp.exp(-e))
        def sf(e): return 1 / (1 + mp.exp(e))
        def pdf(e): return cdf(e) * sf(e)
        def dpdf(e): return pdf(e) * (sf(e) - cdf(e))
    elif link == "probit":
        def cdf(e): return mp.ncdf(e)
        def sf(e): return mp.ncdf(-e)
        def pdf(e): return mp.npdf(e)
        def dpdf(e): return -e * mp.npdf(e)
    else:
        def cdf(e): return -mp.expm1(-mp.exp(e))
        def sf(e): return mp.exp(-mp.exp(e))
        def pdf(e): return mp.exp(e - mp.exp(e))
        def dpdf(e): return pdf(e) * (1 - mp.exp(e))
    return cdf, sf, pdf, dpdf


def trace_adjustment(link, Z, m, delta, dps=50):
    """A_t = 1/2 sum_r m_r sum_s tr[V_r {(D_r S_r^-1)_s (x) I_q} H_r] z_rst in mpmath.

    F is rebuilt here from the same ingredients, so nothing numeric is shared with
    the package. Returns (A, F) as float arrays.
    """
    cdf, sf, pdf, dpdf = _mp_link(link)
    n, q, d = Z.shape
    with mpmath.workdps(dps):
        Zm = [mpmath.matrix(Z[r].tolist()) for r in range(n)]
        dm = mpmath.matrix([float(v) for v in delta])
        parts = []
        F = mpmath.zeros(d, d)
        for r in range(n):
            eta = Zm[r] * dm
            g = [pdf(eta[s]) for s in range(q)]
            gp = [dpdf(eta[s]) for s in range(q)]
            ends = [mpmath.mpf("-inf")] + [eta[s] for s in range(q)] + [mpmath.mpf("inf")]
            pi = [sf(ends[s]) - sf(ends[s + 1]) if ends[s] > 0 else cdf(ends[s + 1]) - cdf(ends[s])
                  for s in range(q + 1)]
            D = mpmath.zeros(q, q)  # d pi_j / d eta_s laid out as D[s, j]
            for s in range(q):
                D[s, s] = m[r] * g[s]
                if s + 1 < q:
                    D[s, s + 1] = -m[r] * g[s]
            S = mpmath.zeros(q, q)
            for i in range(q):
                for j in range(q):
                    S[i, j] = m[r] * ((pi[i] if i == j else 0) - pi[i] * pi[j])
            M = D * mpmath.inverse(S)
            F += Zm[r].T * M * D.T * Zm[r]
            parts.append((M, g, gp))
        Finv = mpmath.inverse(F)
        A = mpmath.zeros(d, 1)
        for r in range(n):
            M, g, gp = parts[r]
            V = Zm[r] * Finv * Zm[r].T
            for s in range(q):
                # sum_j M[s, j] H_j with H_j = diag(0.., g'_j at j, -g'_{j-1} at j-1, ..)
                K = mpmath.zeros(q, q)
                for j in range(q):
                    K[j, j] += M[s, j] * gp[j]
                    if j > 0:
                        K[j - 1, j - 1] -= M[s, j] * gp[j - 1]
                tr = sum(V[i, i] * K[i, i] for i in range(q))
                for t in range(d):
                    A[t] += mpmath.mpf(0.5) * m[r] * tr * Zm[r][s, t]
        return (np.array([float(A[t]) for t in range(d)]),
                np.array([[float(F[i, j]) for j in range(d)] for i in range(d)]))


def firth_logistic(X, y, m, tol=1e-12, max_iter=200):
    """Firth-penalised logistic regression for binomial counts.

    Modified-score Newton steps, halved until the penalised log-likelihood
    l + log|X'WX| / 2 increases.
    """
    def penalised(b):
        p = 1 / (1 + np.exp(-X @ b))
        w = m * p * (1 - p)
        return (np.sum(y * np.log(p) + (m - y) * np.log1p(-p))
                + 0.5 * np.linalg.slogdet(X.T @ (w[:, None] * X))[1])

    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = 1 / (1 + np.exp(-X @ beta))
        w = m * p * (1 - p)
        inv = np.linalg.inv(X.T @ (w[:, None] * X))
        h = w * np.einsum("ij,jk,ik->i", X, inv, X)
        U = X.T @ (y - m * p + h * (0.5 - p))
        if np.max(np.abs(U)) < tol:
            break
        step, base = inv @ U, penalised(beta)
        while penalised(beta + step) < base - 1e-12 and np.max(np.abs(step)) > 1e-12:
            step = step / 2
        beta = beta + step
    return beta


def ml_optimize(link, Z, y, start):
    res = optimize.minimize(lambda d: -loglik(link, Z, y, d), start, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 40000,
                                     "maxfev": 40000})
    return optimize.minimize(lambda d: -loglik(link, Z, y, d), res.x, method="BFGS",
                             options={"gtol": 1e-9}).x


def separated_2xk(table):
    """ML beta of the two-row model is infinite iff the observed supports do not overlap."""
    a = np.nonzero(table[0])[0]
    b = np.nonzero(table[1])[0]
    return a.max() <= b.min() or b.max() <= a.min()


def random_model(rng, n=None, k=None, p=None, link=None, partial=False, min_count=0):
    """Random small identifiable dataset; categories may be empty when min_count is 0."""
    while True:
        spec, data = _draw_model(rng, n, k, p, link, partial, min_count)
        try:
            build_design(spec, data)
        except IdentifiabilityError:
            continue
        return spec, data


def _draw_model(rng, n, k, p, link, partial, min_count):
    n = n or int(rng.integers(2, 5))
    k = k or int(rng.integers(2, 5))
    p = p if p is not None else int(rng.integers(1, 3))
    link = link or str(rng.choice(["logit", "probit", "cloglog"]))
    x = 0.5 * rng.normal(size=(n, p))
    y = rng.integers(min_count, 6, size=(n, k))
    y[y.sum(axis=1) == 0, 0] = 1
    part = (0,) if partial and p > 1 else ()
    prop = tuple(j for j in range(p) if j not in part)
    spec = ModelSpec(link, k, prop, part)
    return spec, OrdinalData(x, y)


def random_delta(rng, spec, scale=0.5, data=None):
    """Random parameter; with data, redrawn until the predictors increase at every row."""
    while True:
        alpha = np.sort(rng.normal(size=spec.q)) + 0.3 * np.arange(spec.q)
        delta = np.concatenate([alpha, scale * rng.normal(size=spec.n_params - spec.q)])
        if data is None:
            return delta
        Z = blocks(data.x, spec.q, spec.proportional_cols, spec.partial_cols)
        if np.all(np.diff(Z @ delta, axis=1) > 0.05):
            return delta
