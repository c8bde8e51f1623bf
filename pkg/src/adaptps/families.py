"""Exponential families with canonical links."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, logit, xlogy

_EPS = 1e-10


class Family:
    name = ""
    estimate_scale = False

    def linkinv(self, eta):
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def mu_eta(self, eta):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def deviance(self, y, mu, w):
        raise NotImplementedError

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite values")
        return y

    def initial_eta(self, y):
        raise NotImplementedError

    def loglik(self, y, mu, w, phi):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Gaussian(Family):
    name = "gaussian"
    estimate_scale = True

    def linkinv(self, eta):
        return np.asarray(eta, dtype=float)

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def mu_eta(self, eta):
        return np.ones_like(eta, dtype=float)

    def variance(self, mu):
        return np.ones_like(mu, dtype=float)

    def deviance(self, y, mu, w):
        return float(np.sum(w * (y - mu) ** 2))

    def initial_eta(self, y):
        return np.asarray(y, dtype=float).copy()

    def loglik(self, y, mu, w, phi):
        n = np.count_nonzero(w)
        return float(-0.5 * (np.sum(w * (y - mu) ** 2) / phi + n * np.log(2 * np.pi * phi)
                             - np.sum(np.log(w[w > 0]))))


class Poisson(Family):
    name = "poisson"

    def linkinv(self, eta):
        return np.exp(np.minimum(eta, 700.0))

    def link(self, mu):
        return np.log(mu)

    def mu_eta(self, eta):
        return np.maximum(np.exp(np.minimum(eta, 700.0)), _EPS)

    def variance(self, mu):
        return np.maximum(mu, _EPS)

    def deviance(self, y, mu, w):
        return float(2.0 * np.sum(w * (xlogy(y, y) - xlogy(y, mu) - (y - mu))))

    def validate(self, y):
        y = super().validate(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("Poisson responses must be non-negative integers")
        return y

    def initial_eta(self, y):
        return np.log(np.asarray(y, dtype=float) + 0.5)

    def loglik(self, y, mu, w, phi=1.0):
        return float(np.sum(w * (xlogy(y, mu) - mu - gammaln(y + 1))))


class Bernoulli(Family):
    name = "bernoulli"

    def linkinv(self, eta):
        return expit(eta)

    def link(self, mu):
        return logit(mu)

    def mu_eta(self, eta):
        mu = expit(eta)
        return np.maximum(mu * (1 - mu), _EPS)

    def variance(self, mu):
        return np.maximum(mu * (1 - mu), _EPS)

    def deviance(self, y, mu, w):
        return float(-2.0 * np.sum(w * (xlogy(y, mu) + xlogy(1 - y, 1 - mu))))

    def validate(self, y):
        y = super().validate(y)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("Bernoulli responses must be 0 or 1")
        return y

    def initial_eta(self, y):
        return logit((np.asarray(y, dtype=float) + 0.5) / 2.0)

    def loglik(self, y, mu, w, phi=1.0):
        return -0.5 * self.deviance(y, mu, w)


FAMILIES = {"gaussian": Gaussian, "poisson": Poisson, "bernoulli": Bernoulli, "binomial": Bernoulli}


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    try:
        return FAMILIES[str(family).strip().lower()]()
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from gaussian, poisson, bernoulli") from None
