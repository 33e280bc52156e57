"""Latent distributions for cumulative link models.

Each link supplies the distribution function ``G``, its survival function
``1 - G`` (evaluated without cancellation), the density ``g`` and the density
derivative ``g'``.
"""
from __future__ import annotations

import enum

import numpy as np
from scipy import special

EPS = 1e-12


class DomainError(ValueError):
    """Raised when a link function receives a non-finite argument."""


def _check_finite(eta):
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise DomainError("linear predictor must be finite")
    return eta


def _ret(x):
    return x.item() if np.ndim(x) == 0 else x


class LinkFamily(enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"
    # cauchit would slot in here; it is not needed by anything in this package

    @classmethod
    def parse(cls, token: "str | LinkFamily") -> "LinkFamily":
        if isinstance(token, LinkFamily):
            return token
        try:
            return cls(str(token).lower())
        except ValueError:
            raise ValueError(
                f"unknown link {token!r}; expected one of "
                + ", ".join(m.value for m in cls)
            ) from None

    @property
    def symmetric(self) -> bool:
        return self is not LinkFamily.CLOGLOG

    def cdf(self, eta, clip: bool = True):
        """Distribution function G(eta).

        With ``clip`` (the default) the value is kept inside
        ``[EPS, 1 - EPS]``. The estimation code calls ``cdf(..., clip=False)``
        together with :meth:`sf` so that small tail probabilities stay exact.
        """
        eta = _check_finite(eta)
        if self is LinkFamily.LOGIT:
            out = special.expit(eta)
        elif self is LinkFamily.PROBIT:
            out = special.ndtr(eta)
        else:
            out = -np.expm1(-np.exp(eta))
        if clip:
            out = np.clip(out, EPS, 1.0 - EPS)
        return _ret(out)

    def sf(self, eta):
        """Survival function 1 - G(eta), accurate in the upper tail."""
        eta = _check_finite(eta)
        if self is LinkFamily.LOGIT:
            out = special.expit(-eta)
        elif self is LinkFamily.PROBIT:
            out = special.ndtr(-eta)
        else:
            out = np.exp(-np.exp(eta))
        return _ret(out)

    def density(self, eta):
        eta = _check_finite(eta)
        if self is LinkFamily.LOGIT:
            out = special.expit(eta) * special.expit(-eta)
        elif self is LinkFamily.PROBIT:
            out = np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        else:
            out = np.exp(eta - np.exp(eta))
        return _ret(out)

    def density_deriv(self, eta):
        eta = _check_finite(eta)
        if self is LinkFamily.LOGIT:
            gam = special.expit(eta)
            sgam = special.expit(-eta)
            # 1 - 2G written as (1 - G) - G keeps the sign exact in both tails
            out = gam * sgam * (sgam - gam)
        elif self is LinkFamily.PROBIT:
            out = -eta * np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        else:
            ee = np.exp(eta)
            out = np.exp(eta - ee) * (1.0 - ee)
        return _ret(out)

    def evaluate(self, eta):
        """``(G, 1 - G, g, g')`` at finite ``eta`` in one pass, no clipping."""
        eta = _check_finite(eta)
        if self is LinkFamily.LOGIT:
            gam = special.expit(eta)
            sgam = special.expit(-eta)
            g = gam * sgam
            dg = g * (sgam - gam)
        elif self is LinkFamily.PROBIT:
            gam = special.ndtr(eta)
            sgam = special.ndtr(-eta)
            g = np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
            dg = -eta * g
        else:
            ee = np.exp(eta)
            sgam = np.exp(-ee)
            gam = -np.expm1(-ee)
            g = np.exp(eta - ee)
            dg = g * (1.0 - ee)
        return gam, sgam, g, dg

    def quantile(self, p):
        """Inverse of G, used for starting values."""
        p = np.asarray(p, dtype=float)
        if self is LinkFamily.LOGIT:
            out = special.logit(p)
        elif self is LinkFamily.PROBIT:
            out = special.ndtri(p)
        else:
            out = np.log(-np.log1p(-p))
        return _ret(out)


def cdf(link, eta):
    return LinkFamily.parse(link).cdf(eta)


def density(link, eta):
    return LinkFamily.parse(link).density(eta)


def density_deriv(link, eta):
    return LinkFamily.parse(link).density_deriv(eta)
