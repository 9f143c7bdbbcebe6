"""End-to-end construction of conformal ITE intervals for a panel."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conformal import CalibrationSet, WeightedCalibrator, WeightScheme, build_intervals, conformity_score
from .nuisance import cells, estimate_nuisance
from .panel import ColumnSchema, ConfigError, PanelDataset, TrainingSplit, attach_potential_outcomes, load_csv, split
from .pseudo import LEARNERS, PseudoOutcomeTable, pseudo_outcomes
from .quantile import QuantileModelPair, SolverOptions, fit_quantile_pair, qr_features_matrix
from .synthetic import SimConfig, generate

log = logging.getLogger(__name__)

MODES = ("downward", "outward")

# solver settings used inside cross-validation folds; the final refit uses full precision
CV_SOLVER = SolverOptions(kappas=(1e-2, 1e-3), rtol=1e-6, max_iter=5_000)


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run.

    Exactly one of ``sim`` and ``data_path`` is set. In outward mode the models
    are fit on decision points ``<= train_horizon`` and intervals are built for
    later points of the ``outward_targets`` individuals. With
    ``outward_calibration="rolling"`` the interval at point ``t`` is calibrated
    on every calibration score observed before ``t``; ``"static"`` restricts
    calibration to the training horizon.
    """

    sim: SimConfig | None = None
    data_path: str | None = None
    potential_outcomes_path: str | None = None
    schema: ColumnSchema = field(default_factory=ColumnSchema)
    alpha: float = 0.05
    learner: str = "dr"
    scheme: WeightScheme = field(default_factory=WeightScheme)
    mode: str = "downward"
    train_frac: float = 0.75
    n_test: int | None = None
    split_seed: int = 0
    train_horizon: int | None = None
    nuisance_lambda: float | str = "cv"
    qr_lambda: float | str = "cv"
    cv_folds: int = 5
    cv_seed: int = 0
    lags: tuple = (1, 2, 3)
    outward_calibration: str = "rolling"
    outward_targets: str = "calibration"
    augment_cal_with_test_history: bool = False

    def __post_init__(self):
        if (self.sim is None) == (self.data_path is None):
            raise ConfigError("set exactly one of sim / data_path")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.outward_calibration not in ("rolling", "static"):
            raise ConfigError("outward_calibration must be 'rolling' or 'static'")
        if self.outward_targets not in ("calibration", "test", "both"):
            raise ConfigError("outward_targets must be 'calibration', 'test' or 'both'")
        if self.mode == "outward":
            if self.train_horizon is None:
                raise ConfigError("outward mode needs train_horizon")
            if self.sim is not None and not 1 <= self.train_horizon < self.sim.n_points:
                raise ConfigError("outward mode needs 1 <= train_horizon < n_points")
        object.__setattr__(self, "lags", tuple(int(v) for v in self.lags))

    def load(self) -> PanelDataset:
        if self.sim is not None:
            return generate(self.sim)
        data = load_csv(self.data_path, self.schema)
        if self.potential_outcomes_path:
            data = attach_potential_outcomes(data, self.potential_outcomes_path)
        return data


@dataclass(frozen=True, eq=False)
class IntervalBatch:
    """Intervals for every test cell plus what is needed to evaluate them.

    ``individual`` is 0-based into the panel, ``decision_point`` 1-based.
    ``true_ite`` and the oracle score arrays are None for real data.
    """

    individual: np.ndarray
    decision_point: np.ndarray
    labels: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    q_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pseudo_outcome: np.ndarray
    true_ite: np.ndarray | None
    calibration: CalibrationSet
    oracle_calibration_scores: np.ndarray | None
    test_scores: np.ndarray
    oracle_test_scores: np.ndarray | None
    mode: str = "downward"

    def __len__(self):
        return self.lower.size

    @property
    def length(self):
        return self.upper - self.lower

    @property
    def unbounded(self):
        return np.isposinf(self.q_hat)

    @property
    def collapsed(self):
        """Negative margins that inverted the band and were collapsed to a point."""
        return ~self.unbounded & (self.q_hi - self.q_lo + 2 * self.q_hat < 0)

    @property
    def covered_pseudo(self):
        return (self.lower <= self.pseudo_outcome) & (self.pseudo_outcome <= self.upper)

    @property
    def covered_true(self):
        if self.true_ite is None:
            return None
        return (self.lower <= self.true_ite) & (self.true_ite <= self.upper)


def _stage(name):
    def deco(fn):
        def wrapped(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with the stage tag
                raise StageError(name, e) from e
        return wrapped
    return deco


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    """Everything up to (but excluding) the weighting step; shared across weight schemes."""

    config: ExperimentConfig
    data: PanelDataset
    split: TrainingSplit
    quantile_models: QuantileModelPair
    calibration: CalibrationSet
    calibration_band: tuple
    test_cells: tuple
    test_band: tuple
    test_pseudo: np.ndarray
    rolling: bool

    def intervals(self, scheme: WeightScheme | None = None) -> IntervalBatch:
        """Weighted calibration and interval construction for one scheme."""
        c = self.config
        scheme = c.scheme if scheme is None else scheme
        xi, xj = self.test_cells
        xlo, xhi = self.test_band
        cal = self.calibration

        @_stage("intervals")
        def margins():
            wc = WeightedCalibrator(cal.decision_point, cal.scores)
            q = np.empty(xj.size)
            for t in np.unique(xj):
                mask = wc.points < t if self.rolling else None
                q[xj == t] = wc.quantile(scheme, int(t), 1 - c.alpha, mask)
            return q

        q_hat = margins()
        lower, upper = build_intervals(xlo, xhi, q_hat)
        ite = self.data.true_ite
        clo, chi = self.calibration_band
        ci, cj = cal.individual, cal.decision_point
        return IntervalBatch(
            individual=xi, decision_point=xj, labels=self.data.labels[xi],
            q_lo=xlo, q_hi=xhi, q_hat=q_hat, lower=lower, upper=upper,
            pseudo_outcome=self.test_pseudo,
            true_ite=None if ite is None else ite[xi, xj - 1],
            calibration=cal,
            oracle_calibration_scores=None if ite is None else conformity_score(clo, chi, ite[ci, cj - 1]),
            test_scores=conformity_score(xlo, xhi, self.test_pseudo),
            oracle_test_scores=None if ite is None else conformity_score(xlo, xhi, ite[xi, xj - 1]),
            mode=c.mode,
        )


def fit(config: ExperimentConfig, data: PanelDataset | None = None,
        data_split: TrainingSplit | None = None) -> FittedPipeline:
    """Split, fit nuisances, transform to pseudo-outcomes, fit the quantile band and score calibration cells.

    ``data`` and ``data_split`` override what ``config`` would produce
    (useful for audits on modified copies of one panel).
    """
    c = config
    data = _stage("load")(c.load)() if data is None else data
    T = data.n_points
    horizon = T if c.mode == "downward" else c.train_horizon
    if c.mode == "outward" and not 1 <= horizon < T:
        raise StageError("split", ConfigError("outward mode needs 1 <= train_horizon < T"))
    sp = data_split or _stage("split")(split)(data, c.train_frac, c.split_seed, horizon, c.n_test)

    est = _stage("nuisance")(estimate_nuisance)(data, sp, c.nuisance_lambda, c.cv_folds, c.cv_seed)
    errors = _stage("nuisance")(est.signed_error_matrix)(data)

    @_stage("pseudo")
    def table(i, j):
        feats = qr_features_matrix(data, errors, i, j, c.lags)
        ytil = pseudo_outcomes(data, i, j, est, c.learner)
        if not np.isfinite(ytil).all():
            raise ValueError("non-finite pseudo-outcome")
        return feats, ytil

    mi, mj = cells(sp.model_ids, horizon)
    mfeat, mtil = table(mi, mj)
    model_table = PseudoOutcomeTable(mi, mj, mfeat, mtil, c.learner)
    qpair: QuantileModelPair = _stage("quantile")(fit_quantile_pair)(
        model_table, c.alpha, c.qr_lambda, c.cv_folds, c.cv_seed, cv_options=CV_SOLVER, lags=c.lags)

    rolling = c.mode == "outward" and c.outward_calibration == "rolling"
    ci, cj = cells(sp.calibration_ids, T if (c.mode == "downward" or rolling) else horizon)
    if c.mode == "outward" and c.augment_cal_with_test_history and sp.test_ids.size:
        ti, tj = cells(sp.test_ids, horizon)
        ci, cj = np.concatenate([ci, ti]), np.concatenate([cj, tj])
    cfeat, ctil = table(ci, cj)
    clo, chi = qpair.predict(cfeat)
    calib = _stage("calibrate")(CalibrationSet)(ci, cj, conformity_score(clo, chi, ctil), c.alpha)

    if c.mode == "downward":
        xi, xj = cells(sp.test_ids, T)
    else:
        who = {"calibration": [sp.calibration_ids], "test": [sp.test_ids],
               "both": [sp.calibration_ids, sp.test_ids]}[c.outward_targets]
        xi, xj = cells(np.concatenate(who), T, start=horizon + 1)
    xfeat, xtil = table(xi, xj)
    xlo, xhi = qpair.predict(xfeat)
    return FittedPipeline(c, data, sp, qpair, calib, (clo, chi), (xi, xj), (xlo, xhi), xtil, rolling)


def run(config: ExperimentConfig, data: PanelDataset | None = None,
        data_split: TrainingSplit | None = None) -> IntervalBatch:
    """Full pipeline for the configured weighting scheme."""
    return fit(config, data, data_split).intervals()


def run_schemes(config: ExperimentConfig, schemes, data: PanelDataset | None = None) -> dict:
    """One fit, intervals for each scheme; keyed by the scheme objects."""
    fitted = fit(config, data)
    return {s: fitted.intervals(s) for s in schemes}
