"""L1-penalised linear quantile regression for the pseudo-outcome band."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nuisance import LinearModel, NuisanceEstimates, Standardizer, _check_finite, group_folds, penalty_grid
from .panel import PanelDataset


def pinball_loss(u, tau):
    """Check loss ``u * (tau - 1{u < 0})``, elementwise."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def pinball_objective(X, y, tau, lam, intercept, coef, scale=None):
    """Mean pinball loss plus ``lam * sum(scale * |coef|)`` (``scale`` defaults to ones)."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(y, dtype=float) - intercept - X @ coef
    scale = np.ones_like(coef) if scale is None else scale
    return float(pinball_loss(u, tau).mean() + lam * np.sum(scale * np.abs(coef)))


def _smooth_obj(u, tau, kappa):
    """Mean Moreau envelope of the check loss, and its derivative in ``u``.

    With ``g = clip(u / kappa, tau - 1, tau)`` the envelope is
    ``g u - kappa g^2 / 2``.
    """
    g = np.clip(u / kappa, tau - 1, tau)
    return float(np.mean(g * (u - 0.5 * kappa * g))), g


def _fista(Zc, y, tau, lam, beta, kappa, L, max_iter, rtol):
    """Accelerated proximal gradient with backtracking and adaptive restart.

    Works on the smoothed problem; ``beta[0]`` is the unpenalized intercept and
    ``L`` is the starting curvature estimate. Returns (beta, L, iterations).
    """
    n = y.size
    pen = np.full(beta.size, lam)
    pen[0] = 0.0

    def smooth(z):
        return _smooth_obj(y - z, tau, kappa)

    x = beta.copy()
    zx = Zc @ x
    v, zv = x, zx
    tk = 1.0
    f_x = smooth(zx)[0] + lam * np.abs(x[1:]).sum()
    for it in range(1, max_iter + 1):
        fv, gw = smooth(zv)
        g = -(Zc.T @ gw) / n
        L = max(L * 0.8, 1e-12)
        while True:
            w = v - g / L
            x_new = np.sign(w) * np.maximum(np.abs(w) - pen / L, 0.0)
            d = x_new - v
            z_new = Zc @ x_new
            fs = smooth(z_new)[0]
            if fs <= fv + g @ d + 0.5 * L * (d @ d) + 1e-15 * abs(fv):
                break
            L *= 2.0
        f_new = fs + lam * np.abs(x_new[1:]).sum()
        if f_new > f_x:
            # restart momentum from the last accepted point
            v, zv, tk = x, zx, 1.0
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        mom = (tk - 1) / t_new
        v = x_new + mom * (x_new - x)
        zv = z_new + mom * (z_new - zx)
        converged = f_x - f_new <= rtol * max(abs(f_new), 1e-300)
        x, zx, f_x, tk = x_new, z_new, f_new, t_new
        if converged:
            return x, L, it
    return x, L, max_iter


@dataclass(frozen=True)
class SolverOptions:
    kappas: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    rtol: float = 1e-8
    max_iter: int = 50_000


def _lipschitz(Zc):
    n = Zc.shape[0]
    return float(np.linalg.eigvalsh(Zc.T @ Zc / n)[-1])


def _solve_std(Zc, y, tau, lam, options, warm=None, lip=None):
    """Solve on an intercept-augmented standardized design; returns the coefficient vector.

    ``lip`` is the largest eigenvalue of ``Zc' Zc / n`` if already known.
    """
    p1 = Zc.shape[1]
    spread = float(np.std(y)) or 1.0
    c0 = _best_constant(y, tau)
    if warm is None:
        beta = np.zeros(p1)
        beta[0] = c0
    else:
        beta = warm.copy()
    budget = options.max_iter
    L = None
    for kap in options.kappas:
        kappa = kap * spread
        # curvature of the smoothed loss scales like 1/kappa at worst
        if L is None:
            lip = _lipschitz(Zc) if lip is None else lip
            L = lip / kappa
        beta, L, used = _fista(Zc, y, tau, lam, beta, kappa, L, budget, options.rtol)
        budget -= used
        if budget <= 0:
            break
    # never return something worse than the best constant fit
    obj = pinball_loss(y - Zc @ beta, tau).mean() + lam * np.abs(beta[1:]).sum()
    if pinball_loss(y - c0, tau).mean() < obj:
        beta = np.zeros(p1)
        beta[0] = c0
    return beta


def fit_pinball(X, y, tau: float, lam: float, options: SolverOptions = SolverOptions()) -> LinearModel:
    """Linear quantile regression at level ``tau`` with a lasso penalty.

    Minimizes ``mean(pinball(y - b0 - Z b)) + lam ||b||_1`` over standardized
    columns ``Z`` of ``X`` by proximal gradient on a smoothed check loss,
    annealing the smoothing width (relative to the spread of ``y``) through
    ``options.kappas``. Coefficients are returned on the original scale.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must be in (0, 1)")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _check_finite(X, y)
    st = Standardizer(X)
    Zc = _with_intercept(st.transform(X))
    beta = _solve_std(Zc, y, tau, lam, options)
    b0, coef = st.unscale(beta[1:], beta[0])
    return LinearModel(float(b0), coef, float(lam))


def _with_intercept(Z):
    return np.hstack([np.ones((Z.shape[0], 1)), Z])


def _best_constant(y, tau):
    # a sample point minimizing the empirical check loss
    ys = np.sort(y)
    k = int(np.ceil(tau * ys.size)) - 1
    return float(ys[max(k, 0)])


def pinball_lambda_max(X, y, tau) -> float:
    X, y = _check_finite(X, y)
    Z = Standardizer(X).transform(X)
    if Z.shape[1] == 0:
        return 0.0
    u = y - _best_constant(y, tau)
    g = tau - (u < 0)
    return float(np.abs(Z.T @ g).max() / y.size)


def cv_pinball(X, y, tau, groups, n_folds=5, seed=0, grid_size=11,
               options: SolverOptions = SolverOptions(), cv_options: SolverOptions | None = None):
    """Pick the penalty by group-blocked CV on held-out pinball loss, then refit on all rows.

    ``cv_options`` (default: ``options``) controls the solver inside the folds;
    fits along the penalty path are warm-started.
    """
    X, y = _check_finite(X, y)
    lams = penalty_grid(pinball_lambda_max(X, y, tau), grid_size)
    folds = group_folds(np.asarray(groups), n_folds, seed)
    k = folds.max() + 1
    if k < 2 or lams[0] == 0:
        return fit_pinball(X, y, tau, float(lams[-1]), options)
    cv_options = cv_options or options
    err = np.zeros(len(lams))
    for f in range(k):
        tr, te = folds != f, folds == f
        st = Standardizer(X[tr])
        Zc = _with_intercept(st.transform(X[tr]))
        beta = None
        lip = _lipschitz(Zc)
        for m, lam in enumerate(lams):
            beta = _solve_std(Zc, y[tr], tau, float(lam), cv_options, warm=beta, lip=lip)
            b0, coef = st.unscale(beta[1:], beta[0])
            err[m] += pinball_loss(y[te] - b0 - X[te] @ coef, tau).sum()
    best = int(np.argmin(err))
    return fit_pinball(X, y, tau, float(lams[best]), options)


# ---------------------------------------------------------------- features

def signed_errors(data: PanelDataset, estimates: NuisanceEstimates, i, j, lag: int):
    """``Y - mu_A(X)`` at ``(i, j - lag)``, or 0 when ``j - lag < 1``."""
    i = np.asarray(i)
    jl = np.asarray(j) - lag
    ok = jl >= 1
    out = np.zeros(np.broadcast(i, jl).shape)
    if np.any(ok):
        ii = np.broadcast_to(i, out.shape)[ok] if out.ndim else i
        jj = np.broadcast_to(jl, out.shape)[ok] if out.ndim else jl
        e = data.outcomes[ii, jj - 1] - estimates.mu_observed(data, ii, jj)
        if out.ndim:
            out[ok] = e
        else:
            out = np.asarray(e, dtype=float)
    return out if out.ndim else float(out)


def qr_features_matrix(data: PanelDataset, errors: np.ndarray, i, j, lags=(1, 2, 3)) -> np.ndarray:
    """Rows ``[X_ij, j, e_{i,j-l} for l in lags]`` from a precomputed (N, T) error matrix."""
    i = np.asarray(i)
    j = np.asarray(j)
    cols = [data.covariates[i, j - 1], j[..., None].astype(float)]
    for lag in lags:
        jl = j - lag
        e = np.where(jl >= 1, errors[i, np.maximum(jl, 1) - 1], 0.0)
        cols.append(e[..., None])
    return np.concatenate(cols, axis=-1)


def qr_features(data: PanelDataset, estimates: NuisanceEstimates, i, j, lags=(1, 2, 3)) -> np.ndarray:
    """Quantile-regression design row(s) for cells ``(i, j)``."""
    return qr_features_matrix(data, estimates.signed_error_matrix(data), i, j, lags)


# ---------------------------------------------------------------- model pair

@dataclass(frozen=True)
class QuantileModelPair:
    lo_model: LinearModel
    hi_model: LinearModel
    tau_lo: float
    tau_hi: float
    lags: tuple = (1, 2, 3)

    def predict(self, features):
        """Lower/upper band at ``features`` with crossings replaced by their midpoint."""
        lo = self.lo_model.predict(features)
        hi = self.hi_model.predict(features)
        cross = lo > hi
        if np.any(cross):
            mid = 0.5 * (lo + hi)
            lo = np.where(cross, mid, lo)
            hi = np.where(cross, mid, hi)
        return lo, hi


def fit_quantile_pair(table, alpha: float, lam="cv", n_folds: int = 5, seed: int = 0,
                      options: SolverOptions = SolverOptions(),
                      cv_options: SolverOptions | None = None, lags=(1, 2, 3)) -> QuantileModelPair:
    """Fit the ``alpha/2`` and ``1 - alpha/2`` quantile models on a pseudo-outcome table."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    X, y = table.features, table.pseudo_outcome
    models = []
    for tau in (alpha / 2, 1 - alpha / 2):
        if lam == "cv":
            models.append(cv_pinball(X, y, tau, table.individual, n_folds, seed, options=options,
                                     cv_options=cv_options))
        else:
            models.append(fit_pinball(X, y, tau, float(lam), options))
    return QuantileModelPair(models[0], models[1], alpha / 2, 1 - alpha / 2, tuple(lags))
