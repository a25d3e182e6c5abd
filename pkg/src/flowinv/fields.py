"""Velocity-field zoo: evaluation interface plus closed-form oracle fields.

Time convention: sigma in [0, 1], sigma=0 is pure noise (x0 ~ N(0, I)),
sigma=1 is data. Fields evaluate on arrays of shape (..., d).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, InvalidArgumentError, NumericalError


class VelocityField:
    """Evaluatable time-dependent vector field v(x, sigma, cond)."""

    supports_conditioning = False

    def velocity(self, x: np.ndarray, sigma: float, cond=None) -> np.ndarray:
        raise NotImplementedError


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not 0.0 <= sigma <= 1.0:
        raise InvalidArgumentError(f"sigma must be in [0, 1], got {sigma}")
    return sigma


@dataclass(frozen=True)
class AnalyticGaussianFlow(VelocityField):
    """Marginal velocity of the linear interpolant between N(0, I) and N(mu, s^2 I).

    With x_sigma = sigma*x1 + (1-sigma)*x0 and (x0, x1) independent Gaussians,
    (x0, x1, x_sigma) are jointly Gaussian, so E[x1 - x0 | x_sigma = x] is affine
    in x. Per axis: Var(x_sigma) = V = sigma^2 s^2 + (1-sigma)^2,
    Cov(x1, x_sigma) = sigma s^2, Cov(x0, x_sigma) = (1-sigma), hence

        v(x, sigma) = mu + c(sigma) * (x - sigma*mu),
        c(sigma) = (sigma*s^2 - (1-sigma)) / V.

    Cross-checked against a Monte-Carlo conditional expectation in the tests.
    """

    mu: np.ndarray
    s: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        if not self.s > 0:
            raise InvalidArgumentError("s must be > 0")

    def coefficient(self, sigma: float) -> float:
        sigma = _check_sigma(sigma)
        v = sigma**2 * self.s**2 + (1.0 - sigma) ** 2
        return (sigma * self.s**2 - (1.0 - sigma)) / v

    def velocity(self, x, sigma, cond=None):
        x = np.asarray(x, dtype=np.float64)
        c = self.coefficient(sigma)
        return self.mu + c * (x - float(sigma) * self.mu)

    def flow_map(self, x0, sigma):
        """Exact solution of the flow ODE started at x0: x(sigma) = sigma*mu + sqrt(V)*x0."""
        sigma = _check_sigma(sigma)
        v = sigma**2 * self.s**2 + (1.0 - sigma) ** 2
        return sigma * self.mu + np.sqrt(v) * np.asarray(x0, dtype=np.float64)


@dataclass(frozen=True)
class LinearField(VelocityField):
    """Affine field v(x, sigma) = A(sigma) x + b(sigma) from per-grid-node tables.

    Coefficients between nodes are linearly interpolated.
    """

    sigmas: np.ndarray
    a_table: np.ndarray  # (K, d, d)
    b_table: np.ndarray  # (K, d)

    def __post_init__(self):
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        object.__setattr__(self, "a_table", np.asarray(self.a_table, dtype=np.float64))
        object.__setattr__(self, "b_table", np.asarray(self.b_table, dtype=np.float64))
        if self.a_table.shape[0] != self.sigmas.size or self.b_table.shape[0] != self.sigmas.size:
            raise ConfigError("coefficient tables must have one entry per grid node")
        if not (np.all(np.isfinite(self.a_table)) and np.all(np.isfinite(self.b_table))):
            raise ConfigError("non-finite coefficients in LinearField tables")

    def coefficients(self, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        sigma = _check_sigma(sigma)
        idx = np.searchsorted(self.sigmas, sigma)
        for j in (idx - 1, idx):
            if 0 <= j < self.sigmas.size and abs(self.sigmas[j] - sigma) <= 1e-12:
                return self.a_table[j], self.b_table[j]
        if not self.sigmas[0] <= sigma <= self.sigmas[-1]:
            raise ConfigError(f"sigma={sigma} outside the coefficient table range")
        hi = np.searchsorted(self.sigmas, sigma)
        lo = hi - 1
        w = (sigma - self.sigmas[lo]) / (self.sigmas[hi] - self.sigmas[lo])
        return (
            (1 - w) * self.a_table[lo] + w * self.a_table[hi],
            (1 - w) * self.b_table[lo] + w * self.b_table[hi],
        )

    def velocity(self, x, sigma, cond=None):
        x = np.asarray(x, dtype=np.float64)
        a, b = self.coefficients(sigma)
        return x @ a.T + b

    @classmethod
    def constant(cls, a: np.ndarray, b: np.ndarray, sigmas=None) -> "LinearField":
        """Field with sigma-independent coefficients over the given grid nodes."""
        if sigmas is None:
            sigmas = np.array([0.0, 1.0])
        sigmas = np.asarray(sigmas, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        k = sigmas.size
        return cls(sigmas, np.repeat(a[None], k, axis=0), np.repeat(b[None], k, axis=0))


def linear_field_eval(f: LinearField, x, sigma: float) -> np.ndarray:
    return f.velocity(x, sigma)


@dataclass(frozen=True)
class ConstantCouplingField(VelocityField):
    """Velocity of one paired sample: constant x1 - x0 everywhere."""

    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=np.float64))
        if self.x0.shape != self.x1.shape:
            raise InvalidArgumentError("x0 and x1 must have the same shape")

    def velocity(self, x, sigma, cond=None):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(self.x1 - self.x0, x.shape).copy()


def analytic_gaussian_velocity(f: AnalyticGaussianFlow, x, sigma: float) -> np.ndarray:
    return f.velocity(x, sigma)


@dataclass(frozen=True)
class GaussianMixtureScore:
    """Closed-form noise prediction for a diagonal Gaussian mixture data distribution.

    Noising per the schedule gives q_t(x) = sum_k w_k N(sqrt(abar_t) mu_k,
    abar_t diag(var_k) + (1 - abar_t) I); the predicted noise is
    -sqrt(1 - abar_t) * grad_x log q_t(x), stabilized with log-sum-exp.
    """

    weights: np.ndarray
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d), diagonal covariances
    schedule: object = dc_field(default=None)  # needs .alphas_bar

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=np.float64)))
        object.__setattr__(self, "variances", np.atleast_2d(np.asarray(self.variances, dtype=np.float64)))
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise InvalidArgumentError("weights must lie on the simplex")
        if np.any(self.variances <= 0):
            raise InvalidArgumentError("variances must be > 0")

    def _noised_params(self, abar: float):
        m = np.sqrt(abar) * self.means
        v = abar * self.variances + (1.0 - abar)
        return m, v

    def score(self, x: np.ndarray, abar: float) -> np.ndarray:
        """grad_x log q_t(x) for the mixture noised to level abar."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)  # (n, d)
        m, v = self._noised_params(abar)  # (k, d)
        diff = x2[:, None, :] - m[None, :, :]  # (n, k, d)
        log_comp = (
            np.log(self.weights)[None, :]
            - 0.5 * np.sum(diff**2 / v[None], axis=-1)
            - 0.5 * np.sum(np.log(2.0 * np.pi * v), axis=-1)[None, :]
        )
        log_norm = logsumexp(log_comp, axis=1, keepdims=True)
        if not np.all(np.isfinite(log_norm)):
            raise NumericalError("all mixture responsibilities underflowed")
        resp = np.exp(log_comp - log_norm)  # (n, k)
        grad = -np.einsum("nk,nkd->nd", resp, diff / v[None])
        return grad[0] if squeeze else grad

    def log_density(self, x: np.ndarray, abar: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        m, v = self._noised_params(abar)
        diff = x2[:, None, :] - m[None, :, :]
        log_comp = (
            np.log(self.weights)[None, :]
            - 0.5 * np.sum(diff**2 / v[None], axis=-1)
            - 0.5 * np.sum(np.log(2.0 * np.pi * v), axis=-1)[None, :]
        )
        out = logsumexp(log_comp, axis=1)
        return out[0] if squeeze else out

    def predicted_noise(self, x: np.ndarray, t: int) -> np.ndarray:
        """eps_hat(x, t) = -sqrt(1 - abar_t) * score(x, abar_t)."""
        abar = float(self.schedule.alphas_bar[t])
        return -np.sqrt(1.0 - abar) * self.score(x, abar)

    def sample_data(self, rng, n: int) -> np.ndarray:
        """Draw n samples from the clean (abar = 1) mixture."""
        u = rng.uniform((n,))
        comp = np.searchsorted(np.cumsum(self.weights), u)
        z = rng.normal((n, self.means.shape[1]))
        return self.means[comp] + np.sqrt(self.variances[comp]) * z


def mixture_score(f: GaussianMixtureScore, x, t: int) -> np.ndarray:
    """Predicted noise of the noised mixture at step index t of f.schedule."""
    return f.predicted_noise(x, t)


def field_from_config(cfg: dict) -> VelocityField:
    """Build a field from its JSON descriptor (see bench_cli config schema)."""
    kind = cfg.get("type")
    if kind == "analytic_gaussian":
        return AnalyticGaussianFlow(np.asarray(cfg["mu"], dtype=np.float64), float(cfg["s"]))
    if kind == "linear":
        return LinearField(
            np.asarray(cfg["sigmas"], dtype=np.float64),
            np.asarray(cfg["a_table"], dtype=np.float64),
            np.asarray(cfg["b_table"], dtype=np.float64),
        )
    if kind == "constant_coupling":
        return ConstantCouplingField(np.asarray(cfg["x0"]), np.asarray(cfg["x1"]))
    if kind == "checkpoint":
        from .training import load_checkpoint, checkpoint_field

        return checkpoint_field(load_checkpoint(cfg["path"]))
    raise ConfigError(f"unknown field type: {kind!r}")
