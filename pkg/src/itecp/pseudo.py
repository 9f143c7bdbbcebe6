"""IPW and doubly-robust pseudo-outcomes for the individual treatment effect."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .nuisance import NuisanceEstimates, cells
from .panel import PanelDataset, PositivityError, TrainingSplit, atomic_write_csv
from .quantile import qr_features_matrix

LEARNERS = ("ipw", "dr")


def _check_pi(pi):
    pi = np.asarray(pi, dtype=float)
    if not ((pi > 0) & (pi < 1)).all():
        raise PositivityError("propensity must lie strictly inside (0, 1)")
    return pi


def ipw_transform(y, a, pi):
    """``(a - pi) / (pi (1 - pi)) * y``; works elementwise on arrays."""
    pi = _check_pi(pi)
    return (np.asarray(a) - pi) / (pi * (1 - pi)) * np.asarray(y, dtype=float)


def dr_transform(y, a, pi, mu0_hat, mu1_hat):
    """``(a - pi) / (pi (1 - pi)) * (y - mu_a) + mu1 - mu0``."""
    pi = _check_pi(pi)
    a = np.asarray(a)
    mu0_hat = np.asarray(mu0_hat, dtype=float)
    mu1_hat = np.asarray(mu1_hat, dtype=float)
    mu_a = np.where(a == 1, mu1_hat, mu0_hat)
    return (a - pi) / (pi * (1 - pi)) * (np.asarray(y, dtype=float) - mu_a) + mu1_hat - mu0_hat


@dataclass(frozen=True)
class PseudoOutcomeTable:
    """Pseudo-outcomes with their cell indices (0-based individual, 1-based point) and QR features."""

    individual: np.ndarray
    decision_point: np.ndarray
    features: np.ndarray
    pseudo_outcome: np.ndarray
    learner_kind: str

    def __len__(self):
        return self.pseudo_outcome.size

    def to_frame(self, labels=None) -> pd.DataFrame:
        ids = self.individual if labels is None else np.asarray(labels)[self.individual]
        return pd.DataFrame({
            "individual_id": ids,
            "decision_point": self.decision_point,
            "pseudo_outcome": self.pseudo_outcome,
        })

    def write_csv(self, path, labels=None):
        atomic_write_csv(self.to_frame(labels), path)


def pseudo_outcomes(data: PanelDataset, i, j, estimates: NuisanceEstimates | None, learner: str):
    """Pseudo-outcomes at cells ``(i, j)``; ``estimates`` may be None for IPW."""
    i = np.asarray(i)
    j = np.asarray(j)
    y = data.outcomes[i, j - 1]
    a = data.actions[i, j - 1]
    pi = data.propensities[i, j - 1]
    if learner == "ipw":
        return ipw_transform(y, a, pi)
    if learner == "dr":
        return dr_transform(y, a, pi, estimates.mu0(data, i, j), estimates.mu1(data, i, j))
    raise ValueError(f"unknown learner {learner!r}; expected one of {LEARNERS}")


def transform_dataset(data: PanelDataset, split: TrainingSplit, which_sets, estimates: NuisanceEstimates,
                      learner: str, horizon: int | None = None, lags=(1, 2, 3)) -> PseudoOutcomeTable:
    """Pseudo-outcome table over every cell of the requested sets.

    ``which_sets`` names any of ``"model"``, ``"calibration"``, ``"test"``,
    ``"nuisance"``. Cells run up to ``horizon`` (default: the split's
    training horizon). Each entry carries its quantile-regression feature row.
    """
    horizon = split.train_horizon if horizon is None else horizon
    attr = {"model": "model_ids", "calibration": "calibration_ids", "test": "test_ids",
            "nuisance": "nuisance_ids"}
    ids = [getattr(split, attr[s]) for s in which_sets]
    ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
    i, j = cells(ids, horizon)
    if i.size == 0:
        P = data.n_covariates
        return PseudoOutcomeTable(i, j, np.empty((0, P + 1 + len(lags))), np.empty(0), learner)
    errors = estimates.signed_error_matrix(data)
    feats = qr_features_matrix(data, errors, i, j, lags)
    ytil = pseudo_outcomes(data, i, j, estimates, learner)
    if not np.isfinite(ytil).all():
        raise ValueError("non-finite pseudo-outcome")
    return PseudoOutcomeTable(i, j, feats, ytil, learner)
