"""Linear-Gaussian models with closed-form posteriors.

They plug into the same inference and utility code as the growth models and
serve as exact oracles: with known variances every Laplace approximation is
exact, and the expected KL utility has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .growth_models import Rows


def polynomial_basis(degree: int):
    """Columns ``1, t, ..., t^degree``."""
    return lambda t: np.asarray(t, float)[:, None] ** np.arange(degree + 1)


@dataclass
class LinearGaussianModel:
    """``y = X(t) theta + Zb(t) b + N(0, sigma_e^2)`` with ``b ~ N(0, sigma_b^2 I)``.

    ``theta_basis`` and ``effect_basis`` map row times (n,) to (n, p) and
    (n, q) design matrices.  ``sigma_e`` and ``sigma_b`` are known constants.
    """

    theta_basis: object
    theta_dim_: int
    sigma_e_: float = 1.0
    effect_basis: object = None
    effect_dim_: int = 0
    sigma_b: float = 1.0

    @property
    def theta_names(self):
        return tuple(f"theta{i}" for i in range(self.theta_dim_))

    @property
    def theta_dim(self):
        return self.theta_dim_

    @property
    def effect_dim(self):
        return self.effect_dim_

    @property
    def effect_groups(self):
        return (("toy", self.effect_dim_, None),) if self.effect_dim_ else ()

    def rows(self, t, fruit=None):
        return Rows(np.asarray(t, float).reshape(-1), None)

    def effect_sd(self, theta):
        return np.full(np.shape(theta)[:-1] + (self.effect_dim_,), self.sigma_b)

    def sigma_e(self, theta):
        return np.full(np.shape(theta)[:-1], self.sigma_e_)

    def mean(self, theta, b, rows):
        X = self.theta_basis(rows.t)
        mu = np.asarray(theta) @ X.T
        if self.effect_dim_:
            mu = mu + np.asarray(b) @ self.effect_basis(rows.t).T
        return mu

    def simulate(self, theta, b, rows, rng):
        return self.mean(theta, b, rows) + self.sigma_e_ * rng.standard_normal(rows.n)

    # exact posteriors ----------------------------------------------------

    def theta_posterior(self, t, y, prior_mean, prior_sd):
        """Posterior of theta with b integrated out analytically."""
        X = self.theta_basis(np.asarray(t, float))
        S = self.sigma_e_ ** 2 * np.eye(len(y))
        if self.effect_dim_:
            Zb = self.effect_basis(np.asarray(t, float))
            S = S + self.sigma_b ** 2 * Zb @ Zb.T
        P0 = np.diag(1 / np.asarray(prior_sd, float) ** 2)
        Sinv = np.linalg.inv(S)
        cov = np.linalg.inv(P0 + X.T @ Sinv @ X)
        mean = cov @ (P0 @ np.asarray(prior_mean, float) + X.T @ Sinv @ np.asarray(y, float))
        return mean, cov

    def effects_posterior(self, t, y, theta):
        """Conjugate posterior of b given theta."""
        X = self.theta_basis(np.asarray(t, float))
        Zb = self.effect_basis(np.asarray(t, float))
        resid = np.asarray(y, float) - X @ np.asarray(theta, float)
        prec = np.eye(self.effect_dim_) / self.sigma_b ** 2 + Zb.T @ Zb / self.sigma_e_ ** 2
        cov = np.linalg.inv(prec)
        return cov @ Zb.T @ resid / self.sigma_e_ ** 2, cov

    def expected_information_gain(self, n, prior_sd):
        """Closed form for the scalar Normal-mean model: ``0.5 log(1 + n s0^2 / se^2)``."""
        return 0.5 * np.log1p(n * prior_sd ** 2 / self.sigma_e_ ** 2)
