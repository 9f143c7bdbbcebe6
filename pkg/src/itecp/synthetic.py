"""Micro-randomized trial simulator with known propensities and both potential outcomes."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import expit, ndtr

from .panel import ConfigError, PanelDataset


def _padded(head, P):
    v = np.zeros(P)
    head = np.asarray(head, dtype=float)
    v[: min(P, head.size)] = head[:P]
    return v


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the simulated trial.

    Coefficient vectors shorter than ``n_covariates`` are zero-padded. Gaussian
    scale parameters (``cov_noise_var1``, ``cov_noise_var2``, ``sigma_y``) are
    read as standard deviations when ``noise_scale == "sd"`` and as variances
    when ``noise_scale == "variance"``.
    """

    n_individuals: int = 2000
    n_points: int = 50
    n_covariates: int = 50
    rho: float = 0.2
    gamma: float = 0.7
    gamma0: float = 0.5
    cov_noise_var1: float = 0.5
    cov_noise_var2: float = 0.25
    beta: tuple = (0.5, 0.3)
    beta0: float = 0.25
    theta1: float = 0.5
    theta2: tuple = (2.0, 1.0)
    theta3: float = 0.7
    theta4: tuple = (1.0, 2.0)
    sigma_y: float = 0.05
    ar_coeff: float = 0.5
    outcome_kind: str = "linear"
    changepoint: int | None = None
    theta2_post: tuple = (0.0, -2.0, -1.0)
    theta4_post: tuple = (-1.0, -3.0, -2.0)
    noise_scale: str = "sd"
    seed: int = 0

    def __post_init__(self):
        for name in ("beta", "theta2", "theta4", "theta2_post", "theta4_post"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if self.n_individuals < 1 or self.n_points < 1 or self.n_covariates < 2:
            raise ConfigError("n_individuals, n_points >= 1 and n_covariates >= 2 required")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if not abs(self.ar_coeff) < 1:
            raise ConfigError(f"ar_coeff must satisfy |ar_coeff| < 1, got {self.ar_coeff}")
        if not self.sigma_y > 0:
            raise ConfigError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.cov_noise_var1 < 0 or self.cov_noise_var2 < 0:
            raise ConfigError("cov_noise_var1 / cov_noise_var2 must be non-negative")
        if self.outcome_kind not in ("linear", "nonlinear"):
            raise ConfigError(f"outcome_kind must be 'linear' or 'nonlinear', got {self.outcome_kind!r}")
        if self.noise_scale not in ("sd", "variance"):
            raise ConfigError(f"noise_scale must be 'sd' or 'variance', got {self.noise_scale!r}")
        if self.changepoint is not None and not 1 < self.changepoint <= self.n_points:
            raise ConfigError(f"changepoint must lie in (1, n_points], got {self.changepoint}")

    def sd(self, value: float) -> float:
        return float(np.sqrt(value)) if self.noise_scale == "variance" else float(value)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _draw_individual(seed: int, i: int, P: int, T: int, rho: float):
    # one independent stream per individual, so output is independent of
    # generation order and of any parallel partitioning
    rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
    shared = rng.standard_normal()
    latent0 = np.sqrt(rho) * shared + np.sqrt(1 - rho) * rng.standard_normal(P)
    eps1 = rng.standard_normal((T, P))
    eps2 = rng.standard_normal((T, P))
    u = rng.random(T)
    ar = rng.standard_normal((2, T))
    return latent0, eps1, eps2, u, ar


def generate(config: SimConfig) -> PanelDataset:
    """Simulate a micro-randomized trial.

    For each individual, covariates follow a probit-transformed autoregression
    driven by the previous action, treatment is Bernoulli with logistic
    propensity, and both potential outcomes are built from shared AR(1) noise
    so that ``y1 - y0 = theta3 + theta4 @ x + eps_trt`` exactly.
    """
    c = config
    N, T, P = c.n_individuals, c.n_points, c.n_covariates
    draws = [_draw_individual(c.seed, i, P, T, c.rho) for i in range(N)]
    latent0 = np.stack([d[0] for d in draws])
    eps1 = np.stack([d[1] for d in draws]) * c.sd(c.cov_noise_var1)
    eps2 = np.stack([d[2] for d in draws]) * c.sd(c.cov_noise_var2)
    u = np.stack([d[3] for d in draws])
    ar = np.stack([d[4] for d in draws])  # (N, 2, T)

    innov_sd = c.sd(c.sigma_y)
    phi = c.ar_coeff
    noise = np.empty((N, 2, T))
    noise[:, :, 0] = ar[:, :, 0] * innov_sd / np.sqrt(1 - phi**2)
    for t in range(1, T):
        noise[:, :, t] = phi * noise[:, :, t - 1] + innov_sd * ar[:, :, t]
    eps_trt, eps_y = noise[:, 0, :], noise[:, 1, :]

    beta = _padded(c.beta, P)
    th2, th4 = _padded(c.theta2, P), _padded(c.theta4, P)
    th2_post, th4_post = _padded(c.theta2_post, P), _padded(c.theta4_post, P)

    X = np.empty((N, T, P))
    A = np.zeros((N, T), dtype=np.int64)
    pi = np.empty((N, T))
    y0 = np.empty((N, T))
    y1 = np.empty((N, T))
    a_prev = np.zeros(N)
    pi_prev = np.zeros(N)
    for t in range(T):
        if t == 0:
            x = ndtr(latent0)
        else:
            lat = (c.gamma * X[:, t - 1, :] + c.gamma0 * a_prev[:, None]
                   + eps1[:, t, :] + (a_prev - pi_prev)[:, None] * eps2[:, t, :])
            x = ndtr(lat)
        X[:, t, :] = x
        p = expit(x @ beta + c.beta0 * a_prev)
        a = (u[:, t] < p).astype(np.int64)

        point = t + 1
        post = c.changepoint is not None and point > c.changepoint
        b2, b4 = (th2_post, th4_post) if post else (th2, th4)
        base = c.theta1 * (a_prev - pi_prev) + x @ b2 + eps_y[:, t]
        if c.outcome_kind == "nonlinear":
            base = base + ((x[:, 0] > 0.5) | (x[:, 1] > 0.5)) + abs(np.sin(point * np.pi / 7))
        effect = c.theta3 + x @ b4 + eps_trt[:, t]
        y1[:, t] = base + (1 - p) * effect
        y0[:, t] = base - p * effect

        A[:, t] = a
        pi[:, t] = p
        a_prev, pi_prev = a.astype(float), p

    Y = np.where(A == 1, y1, y0)
    return PanelDataset(covariates=X, actions=A, outcomes=Y, propensities=pi,
                        potential_outcomes=(y0, y1), true_ite=y1 - y0)
