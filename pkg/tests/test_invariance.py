import numpy as np
import pytest

from ordcl.estimation import fit_bc, fit_ml, fit_rb
from ordcl.model import OrdinalData, aggregate, build_design, reverse_categories

import oracles

FITTERS = {"ML": fit_ml, "BC": fit_bc, "RB": fit_rb}
SEEDS = range(20)


def _interior(seed, link=None, partial=True):
    """Random dataset whose ML estimate is finite."""
    rng = np.random.default_rng(seed)
    while True:
        spec, data = oracles.random_model(rng, n=int(rng.integers(3, 6)), link=link,
                                          partial=partial, min_count=1)
        if not fit_ml(spec, data).has_boundary:
            return rng, spec, data


def _split_rows(rng, data):
    """Each row's counts divided between two rows with the same covariates."""
    part = rng.binomial(data.y.astype(int), 0.5)
    y = np.vstack([part, data.y - part])
    keep = y.sum(axis=1) > 0
    return OrdinalData(np.vstack([data.x, data.x])[keep], y[keep], data.covariate_names)


@pytest.mark.parametrize("method", FITTERS)
@pytest.mark.parametrize("seed", SEEDS)
def test_aggregation(method, seed):
    rng, spec, data = _interior(seed)
    split = _split_rows(rng, data)
    assert np.allclose(aggregate(split).y.sum(axis=0), aggregate(data).y.sum(axis=0))
    a = FITTERS[method](spec, data)
    b = FITTERS[method](spec, split)
    assert b.delta == pytest.approx(a.delta, abs=1e-8)
    assert b.se == pytest.approx(a.se, abs=1e-8)


@pytest.mark.parametrize("link", ["logit", "probit"])
@pytest.mark.parametrize("method", FITTERS)
@pytest.mark.parametrize("seed", SEEDS)
def test_category_reversal(link, method, seed):
    _, spec, data = _interior(seed, link=link)
    a = FITTERS[method](spec, data).delta
    b = FITTERS[method](spec, reverse_categories(data)).delta
    q = spec.q
    # alpha_s -> -alpha_{k-s} and every slope changes sign; partial slopes also reverse order
    expected = -a.copy()
    expected[:q] = -a[:q][::-1]
    for j in spec.partial_cols:
        start = _partial_offset(spec, j)
        expected[start:start + q] = -a[start:start + q][::-1]
    assert b == pytest.approx(expected, abs=1e-8)


def _partial_offset(spec, j):
    for t, (kind, col, s) in enumerate(spec.layout()):
        if kind == "partial" and col == j:
            return t
    raise KeyError(j)


@pytest.mark.parametrize("method", FITTERS)
@pytest.mark.parametrize("seed", SEEDS)
def test_linear_reparameterisation(method, seed):
    rng, spec, data = _interior(seed)
    design = build_design(spec, data)
    d, q = spec.n_params, spec.q
    L = np.eye(d)
    # rescale and mix the slopes, and shift the cutpoints by slope multiples
    L[q:, q:] = np.eye(d - q) + 0.3 * np.triu(rng.normal(size=(d - q, d - q)))
    L[:q, q:] = 0.2 * rng.normal(size=(q, d - q))
    a = FITTERS[method](spec, data)
    b = FITTERS[method](spec, data, design=design.transform(L))
    assert b.delta == pytest.approx(L @ a.delta, abs=1e-8)
    assert b.vcov == pytest.approx(L @ a.vcov @ L.T, abs=1e-7)
