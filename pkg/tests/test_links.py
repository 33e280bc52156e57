import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordcl.links import EPS, DomainError, LinkFamily, cdf, density, density_deriv

LINKS = list(LinkFamily)
reals = st.floats(-30, 30, allow_nan=False)


def test_parse():
    assert LinkFamily.parse("Logit") is LinkFamily.LOGIT
    assert LinkFamily.parse(LinkFamily.PROBIT) is LinkFamily.PROBIT
    with pytest.raises(ValueError, match="unknown link"):
        LinkFamily.parse("cauchit")


def test_logit_at_zero():
    assert cdf("logit", 0.0) == 0.5
    assert density("logit", 0.0) == 0.25
    assert density_deriv("logit", 0.0) == 0.0


@pytest.mark.parametrize("eta", [-8.0, -2.5, -0.3, 0.0, 1.7, 6.0])
def test_probit_against_mpmath(eta):
    mpmath.mp.dps = 40
    exact = float(mpmath.ncdf(eta))
    assert LinkFamily.PROBIT.cdf(eta) == pytest.approx(exact, rel=1e-14)
    assert LinkFamily.PROBIT.sf(eta) == pytest.approx(float(mpmath.ncdf(-eta)), rel=1e-13)
    dens = float(mpmath.npdf(eta))
    assert LinkFamily.PROBIT.density(eta) == pytest.approx(dens, rel=1e-14)


def test_cloglog_closed_form():
    eta = np.linspace(-4, 2, 13)
    assert np.allclose(LinkFamily.CLOGLOG.cdf(eta), 1 - np.exp(-np.exp(eta)), rtol=1e-14)


@pytest.mark.parametrize("link", LINKS)
def test_density_is_derivative_of_cdf(link):
    eta = np.linspace(-5, 3, 17)
    h = 1e-5
    fd = (link.cdf(eta + h, clip=False) - link.cdf(eta - h, clip=False)) / (2 * h)
    assert np.allclose(link.density(eta), fd, atol=1e-9)
    fd2 = (link.density(eta + h) - link.density(eta - h)) / (2 * h)
    assert np.allclose(link.density_deriv(eta), fd2, atol=1e-9)


@pytest.mark.parametrize("link", LINKS)
def test_quantile_inverts_cdf(link):
    p = np.array([1e-6, 0.1, 0.5, 0.77, 1 - 1e-6])
    assert np.allclose(link.cdf(link.quantile(p)), p, rtol=1e-10)


@pytest.mark.parametrize("link", [LinkFamily.LOGIT, LinkFamily.PROBIT])
def test_symmetric_links(link):
    eta = np.linspace(-6, 6, 11)
    assert link.symmetric
    assert np.allclose(link.cdf(-eta), link.sf(eta), rtol=1e-14)
    assert np.allclose(link.density_deriv(-eta), -link.density_deriv(eta), atol=1e-16)


def test_cloglog_is_not_symmetric():
    assert not LinkFamily.CLOGLOG.symmetric


def test_tail_accuracy_without_clip():
    assert LinkFamily.LOGIT.cdf(-40.0, clip=False) == pytest.approx(np.exp(-40.0), rel=1e-12)
    assert LinkFamily.LOGIT.cdf(-40.0) == EPS
    assert LinkFamily.LOGIT.sf(40.0) == pytest.approx(np.exp(-40.0), rel=1e-12)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_domain_error(bad):
    for link in LINKS:
        with pytest.raises(DomainError):
            link.cdf(bad)
        with pytest.raises(DomainError):
            link.density(np.array([0.0, bad]))


@settings(max_examples=200, deadline=None)
@given(a=reals, b=reals)
def test_cdf_monotone_and_in_unit_interval(a, b):
    for link in LINKS:
        lo, hi = sorted((a, b))
        ga, gb = link.cdf(lo), link.cdf(hi)
        assert 0 < ga <= gb < 1
        assert link.density(lo) >= 0


@settings(max_examples=200, deadline=None)
@given(eta=st.floats(-20, 20, allow_nan=False))
def test_density_positive_on_moderate_range(eta):
    for link in LINKS:
        if link is LinkFamily.CLOGLOG and eta > 5:
            continue
        assert link.density(eta) > 0
