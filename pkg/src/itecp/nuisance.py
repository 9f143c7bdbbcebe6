"""Outcome-model nuisance estimation with an L1-penalised linear regressor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .panel import PanelDataset, TrainingSplit


class Regressor(Protocol):
    """Anything with a deterministic ``predict``; returned by a fit function."""

    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    lam: float = 0.0

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


class Standardizer:
    """Column centering/scaling; constant columns get scale 0 and are dropped from fitting."""

    def __init__(self, X):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.active = sd > 1e-12 * np.maximum(1.0, np.abs(self.mean))
        self.scale = np.where(self.active, sd, 1.0)

    def transform(self, X):
        return ((X - self.mean) / self.scale)[:, self.active]

    def unscale(self, b_std, center):
        """Map standardized slopes (active columns only) back to the original scale."""
        coef = np.zeros(self.mean.size)
        coef[self.active] = b_std / self.scale[self.active]
        return center - self.mean @ coef, coef


def _check_finite(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"design {X.shape} does not match {y.size} targets")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in design or targets")
    return X, y


def _cd_gram(G, c, lam, b, tol, max_sweeps, history=None, yy=0.0):
    """Cyclic coordinate descent on 0.5 b'Gb - c'b + lam |b|_1 (unit-diagonal G)."""
    r = c - G @ b  # partial gradient: r_p = c_p - (G b)_p
    p = b.size
    for _ in range(max_sweeps):
        max_delta = 0.0
        for k in range(p):
            bk = b[k]
            z = r[k] + bk
            if z > lam:
                new = z - lam
            elif z < -lam:
                new = z + lam
            else:
                new = 0.0
            if new != bk:
                d = new - bk
                r -= d * G[:, k]
                b[k] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if history is not None:
            history.append(yy - b @ c + 0.5 * b @ (G @ b) + lam * np.abs(b).sum())
        if max_delta < tol:
            break
    return b


def lambda_max(X, y) -> float:
    """Smallest penalty at which every slope of :func:`fit_lasso` is zero."""
    X, y = _check_finite(X, y)
    st = Standardizer(X)
    Z = st.transform(X)
    if Z.shape[1] == 0:
        return 0.0
    return float(np.abs(Z.T @ (y - y.mean())).max() / y.size)


def fit_lasso(X, y, lam: float, tol: float = 1e-7, max_sweeps: int = 10_000,
              history: list | None = None, warm: np.ndarray | None = None) -> LinearModel:
    """Lasso by cyclic coordinate descent.

    Minimizes ``(1/2n) ||y - b0 - Z b||^2 + lam ||b||_1`` where ``Z`` holds the
    standardized non-constant columns of ``X``; the intercept is unpenalized.
    Coefficients are returned on the original scale of ``X``.

    ``history``, if given, receives the objective after each sweep.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _check_finite(X, y)
    st = Standardizer(X)
    Z = st.transform(X)
    n = y.size
    ybar = y.mean()
    yc = y - ybar
    G = Z.T @ Z / n
    c = Z.T @ yc / n
    b = np.zeros(Z.shape[1]) if warm is None else warm.copy()
    b = _cd_gram(G, c, lam, b, tol, max_sweeps, history, yy=0.5 * yc @ yc / n)
    b0, coef = st.unscale(b, ybar)
    return LinearModel(float(b0), coef, float(lam))


def lasso_path(X, y, lams, tol=1e-7, max_sweeps=10_000):
    """Fit a decreasing sequence of penalties with warm starts; returns models."""
    X, y = _check_finite(X, y)
    st = Standardizer(X)
    Z = st.transform(X)
    n = y.size
    ybar = y.mean()
    G = Z.T @ Z / n
    c = Z.T @ (y - ybar) / n
    b = np.zeros(Z.shape[1])
    out = []
    for lam in lams:
        b = _cd_gram(G, c, lam, b, tol, max_sweeps)
        b0, coef = st.unscale(b, ybar)
        out.append(LinearModel(float(b0), coef, float(lam)))
    return out


def group_folds(groups, n_folds: int, seed: int) -> np.ndarray:
    """Assign each row a fold so that all rows of one group share a fold."""
    uniq = np.unique(groups)
    k = min(n_folds, uniq.size)
    perm = np.random.default_rng(seed).permutation(uniq.size)
    fold_of = np.empty(uniq.size, dtype=np.int64)
    fold_of[perm] = np.arange(uniq.size) % k
    return fold_of[np.searchsorted(uniq, groups)]


def penalty_grid(lmax: float, n: int = 11) -> np.ndarray:
    return lmax * 0.5 ** np.arange(n)


def cv_lasso(X, y, groups, n_folds: int = 5, seed: int = 0, grid_size: int = 11) -> LinearModel:
    """Choose the penalty on ``lambda_max * 0.5**k`` by group-blocked CV, refit on all rows."""
    X, y = _check_finite(X, y)
    lams = penalty_grid(lambda_max(X, y), grid_size)
    folds = group_folds(np.asarray(groups), n_folds, seed)
    k = folds.max() + 1
    if k < 2 or lams[0] == 0:
        return fit_lasso(X, y, 0.0 if lams[0] == 0 else lams[-1])
    err = np.zeros(len(lams))
    for f in range(k):
        tr, te = folds != f, folds == f
        for m, model in enumerate(lasso_path(X[tr], y[tr], lams)):
            err[m] += np.sum((y[te] - model.predict(X[te])) ** 2)
    best = int(np.argmin(err))
    return lasso_path(X, y, lams[: best + 1])[-1]


def build_features(data: PanelDataset, i, j, action_override=None) -> np.ndarray:
    """Nuisance design rows ``[X, A_t, A_{t-1}, X * A_t]``.

    ``i`` and ``j`` (1-based decision points) may be scalars or equal-length
    arrays. ``A_0`` is taken as 0.
    """
    i = np.asarray(i)
    j = np.asarray(j)
    x = data.covariates[i, j - 1]
    a = data.actions[i, j - 1].astype(float)
    if action_override is not None:
        a = np.full_like(a, float(action_override))
    prev = np.where(j > 1, data.actions[i, np.maximum(j - 2, 0)], 0).astype(float)
    a_col = np.asarray(a)[..., None]
    return np.concatenate([x, a_col, np.asarray(prev)[..., None], x * a_col], axis=-1)


def cells(ids, horizon: int, start: int = 1):
    """All (individual, decision point) pairs for ``ids`` and ``start <= j <= horizon``."""
    ids = np.asarray(ids, dtype=np.int64)
    js = np.arange(start, horizon + 1)
    return np.repeat(ids, js.size), np.tile(js, ids.size)


@dataclass(frozen=True)
class NuisanceEstimates:
    """Joint outcome model evaluated with the current action forced to 0 or 1."""

    model: Regressor

    def mu(self, data: PanelDataset, i, j, a) -> np.ndarray:
        return self.model.predict(build_features(data, i, j, action_override=a))

    def mu0(self, data, i, j):
        return self.mu(data, i, j, 0)

    def mu1(self, data, i, j):
        return self.mu(data, i, j, 1)

    def mu_observed(self, data, i, j):
        """Prediction at the action actually received."""
        return self.model.predict(build_features(data, i, j))

    def signed_error_matrix(self, data: PanelDataset) -> np.ndarray:
        """``Y - mu_A(X)`` for every cell, shape (N, T)."""
        N, T = data.outcomes.shape
        i, j = cells(np.arange(N), T)
        return data.outcomes - self.mu_observed(data, i, j).reshape(N, T)


def estimate_nuisance(data: PanelDataset, split: TrainingSplit, lam="cv",
                      n_folds: int = 5, seed: int = 0) -> NuisanceEstimates:
    """Fit the joint outcome regression on the nuisance individuals up to the horizon.

    ``lam`` is either a fixed penalty or ``"cv"`` for individual-blocked
    cross-validation over the default grid.
    """
    i, j = cells(split.nuisance_ids, split.train_horizon)
    X = build_features(data, i, j)
    y = data.outcomes[i, j - 1]
    if lam == "cv":
        model = cv_lasso(X, y, i, n_folds=n_folds, seed=seed)
    else:
        model = fit_lasso(X, y, float(lam))
    return NuisanceEstimates(model)
