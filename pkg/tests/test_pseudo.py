from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from itecp.nuisance import cells, estimate_nuisance
from itecp.panel import PositivityError, split
from itecp.pseudo import PseudoOutcomeTable, dr_transform, ipw_transform, pseudo_outcomes, transform_dataset
from itecp.synthetic import SimConfig, generate

probs = st.floats(1e-3, 1 - 1e-3)
reals = st.floats(-1e3, 1e3)


def test_ipw_examples():
    assert ipw_transform(2, 1, 0.5) == 4
    assert ipw_transform(2, 0, 0.5) == -4
    assert ipw_transform(0, 1, 0.3) == 0 and ipw_transform(0, 0, 0.9) == 0


def test_dr_examples():
    assert dr_transform(3, 1, 0.25, 1, 2) == 5
    # exact rational evaluation of the same formula
    a, pi, y, m0, m1 = 1, Fraction(1, 4), 3, 1, 2
    assert (a - pi) / (pi * (1 - pi)) * (y - m1) + m1 - m0 == 5
    assert dr_transform(2.0, 0, 0.4, 2.0, 3.5) == 1.5


@given(reals, st.integers(0, 1), probs)
def test_dr_with_zero_means_is_ipw(y, a, pi):
    assert dr_transform(y, a, pi, 0.0, 0.0) == ipw_transform(y, a, pi)


@given(reals, reals, st.integers(0, 1), probs)
def test_dr_perfect_fit_returns_contrast(m0, m1, a, pi):
    y = m1 if a == 1 else m0
    assert dr_transform(y, a, pi, m0, m1) == pytest.approx(m1 - m0, abs=1e-9)


@given(reals, st.integers(0, 1), st.sampled_from([0.0, 1.0, -0.1, 1.5]))
def test_positivity_errors(y, a, pi):
    with pytest.raises(PositivityError):
        ipw_transform(y, a, pi)
    with pytest.raises(PositivityError):
        dr_transform(y, a, pi, 0.0, 0.0)


def test_ipw_half_propensity_simplifies(rng):
    y = rng.normal(size=100)
    a = rng.integers(0, 2, size=100)
    np.testing.assert_allclose(ipw_transform(y, a, np.full(100, 0.5)), (4 * a - 2) * y)


class _OracleMeans:
    """Stands in for fitted nuisances: returns the true potential outcomes."""

    def __init__(self, data):
        self.y0, self.y1 = data.potential_outcomes

    def mu0(self, data, i, j):
        return self.y0[i, j - 1]

    def mu1(self, data, i, j):
        return self.y1[i, j - 1]


class _FixedMeans:
    def mu0(self, data, i, j):
        return np.full(np.shape(i), 0.3)

    def mu1(self, data, i, j):
        return np.full(np.shape(i), 0.8)


def test_dr_with_oracle_means_is_the_ite():
    d = generate(SimConfig(n_individuals=50, n_points=10, n_covariates=4, sigma_y=1e-12, seed=3))
    i, j = cells(np.arange(50), 10)
    ytil = pseudo_outcomes(d, i, j, _OracleMeans(d), "dr")
    np.testing.assert_allclose(ytil, d.true_ite[i, j - 1], atol=1e-12)


def _cluster_slope_t(resid, X, groups):
    """t-statistics of OLS slopes of resid on X with individual-clustered standard errors."""
    Z = np.column_stack([np.ones(len(X)), X])
    bread = np.linalg.inv(Z.T @ Z)
    beta = bread @ Z.T @ resid
    e = resid - Z @ beta
    meat = np.zeros((Z.shape[1],) * 2)
    for g in np.unique(groups):
        s = Z[groups == g].T @ e[groups == g]
        meat += np.outer(s, s)
    cov = bread @ meat @ bread
    return beta[1:] / np.sqrt(np.diag(cov)[1:])


@pytest.mark.parametrize("learner, means", [("ipw", None), ("dr", _FixedMeans())])
def test_pseudo_outcomes_are_conditionally_unbiased(learner, means):
    d = generate(SimConfig(n_individuals=2000, n_points=5, n_covariates=3, seed=6))
    i, j = cells(np.arange(2000), 5)
    ytil = pseudo_outcomes(d, i, j, means, learner)
    gap = ytil - d.true_ite[i, j - 1]
    per_person = gap.reshape(2000, 5).mean(axis=1)
    assert abs(gap.mean()) < 3 * per_person.std(ddof=1) / np.sqrt(2000)
    t = _cluster_slope_t(gap, d.covariates[i, j - 1], i)
    # Bonferroni over the three slopes
    assert np.all(np.abs(t) < 3.4)


def test_transform_dataset_tables(small_panel, tmp_path):
    sp = split(small_panel, seed=0)
    est = estimate_nuisance(small_panel, sp, lam=0.01)
    tab = transform_dataset(small_panel, sp, ["model", "calibration"], est, "dr")
    assert len(tab) == (sp.model_ids.size + sp.calibration_ids.size) * small_panel.n_points
    assert tab.features.shape == (len(tab), small_panel.n_covariates + 4)
    assert np.isfinite(tab.pseudo_outcome).all()
    keys = tab.individual * 100 + tab.decision_point
    assert np.unique(keys).size == keys.size
    empty = transform_dataset(small_panel, sp, [], est, "ipw")
    assert len(empty) == 0
    tab.write_csv(tmp_path / "p.csv", labels=small_panel.labels)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "individual_id,decision_point,pseudo_outcome"


def test_unknown_learner(small_panel):
    with pytest.raises(ValueError):
        pseudo_outcomes(small_panel, np.array([0]), np.array([1]), None, "x")
    assert isinstance(PseudoOutcomeTable, type)
