"""Longitudinal panel container, CSV ingestion and individual-level splitting."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class PanelError(ValueError):
    """Base class for malformed panel data."""


class SchemaError(PanelError):
    pass


class IncompletePanelError(PanelError):
    pass


class PositivityError(PanelError):
    pass


class ConfigError(ValueError):
    """Invalid experiment or split configuration."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Rectangular panel of ``N`` individuals observed at decision points ``1..T``.

    Arrays are stored zero-based: ``outcomes[i, j - 1]`` is the outcome of
    individual ``i`` at decision point ``j``. All arrays are read-only.

    Attributes
    ----------
    covariates : (N, T, P) float array
    actions : (N, T) int array with values in {0, 1}
    outcomes : (N, T) float array
    propensities : (N, T) float array, strictly inside (0, 1)
    potential_outcomes : optional pair ``(y0, y1)`` of (N, T) arrays
    true_ite : optional (N, T) array, equal to ``y1 - y0``
    labels : original individual identifiers, one per row
    """

    covariates: np.ndarray
    actions: np.ndarray
    outcomes: np.ndarray
    propensities: np.ndarray
    potential_outcomes: tuple[np.ndarray, np.ndarray] | None = None
    true_ite: np.ndarray | None = None
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        X = _frozen(self.covariates)
        if X.ndim != 3:
            raise SchemaError("covariates must have shape (N, T, P)")
        N, T, _ = X.shape
        if N < 1 or T < 1:
            raise SchemaError("panel needs at least one individual and one decision point")
        A = _frozen(self.actions, dtype=np.int64)
        Y = _frozen(self.outcomes)
        pi = _frozen(self.propensities)
        for name, arr in (("actions", A), ("outcomes", Y), ("propensities", pi)):
            if arr.shape != (N, T):
                raise SchemaError(f"{name} has shape {arr.shape}, expected {(N, T)}")
        if not np.isin(A, (0, 1)).all():
            raise SchemaError("actions must be binary (0/1)")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise SchemaError("covariates and outcomes must be finite")
        if not ((pi > 0) & (pi < 1)).all():
            raise PositivityError("propensities must lie strictly inside (0, 1)")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "actions", A)
        object.__setattr__(self, "outcomes", Y)
        object.__setattr__(self, "propensities", pi)

        if self.potential_outcomes is not None:
            y0, y1 = (_frozen(y) for y in self.potential_outcomes)
            if y0.shape != (N, T) or y1.shape != (N, T):
                raise SchemaError("potential outcomes must have shape (N, T)")
            if not np.array_equal(np.where(A == 1, y1, y0), Y):
                raise SchemaError("observed outcomes disagree with the potential outcome of the received action")
            object.__setattr__(self, "potential_outcomes", (y0, y1))
            ite = self.true_ite if self.true_ite is not None else y1 - y0
            ite = _frozen(ite)
            if not np.array_equal(ite, y1 - y0):
                raise SchemaError("true_ite must equal y1 - y0")
            object.__setattr__(self, "true_ite", ite)
        elif self.true_ite is not None:
            ite = _frozen(self.true_ite)
            if ite.shape != (N, T):
                raise SchemaError("true_ite must have shape (N, T)")
            object.__setattr__(self, "true_ite", ite)

        labels = np.arange(N) if self.labels is None else np.asarray(self.labels)
        if labels.shape != (N,):
            raise SchemaError("need exactly one label per individual")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_individuals(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_points(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[2]

    def replace(self, **changes) -> "PanelDataset":
        """Copy with some fields swapped out (validation reruns)."""
        kw = dict(
            covariates=self.covariates,
            actions=self.actions,
            outcomes=self.outcomes,
            propensities=self.propensities,
            potential_outcomes=self.potential_outcomes,
            true_ite=self.true_ite,
            labels=self.labels,
        )
        kw.update(changes)
        return PanelDataset(**kw)


@dataclass(frozen=True)
class ColumnSchema:
    """Column names of the long-format panel CSV."""

    individual_id: str = "individual_id"
    decision_point: str = "decision_point"
    action: str = "action"
    outcome: str = "outcome"
    propensity: str = "propensity"
    covariate_prefix: str = "x"

    def covariate_columns(self, columns) -> list[str]:
        pre = self.covariate_prefix
        found = {}
        for c in columns:
            if c.startswith(pre) and c[len(pre):].isdigit():
                found[int(c[len(pre):])] = c
        if not found:
            raise SchemaError(f"no covariate columns '{pre}1..{pre}P' found")
        P = max(found)
        missing = [f"{pre}{k}" for k in range(1, P + 1) if k not in found]
        if missing:
            raise SchemaError(f"covariate columns not contiguous, missing {missing}")
        return [found[k] for k in range(1, P + 1)]


def load_csv(path, schema: ColumnSchema | None = None) -> PanelDataset:
    """Read a long-format panel CSV (one row per individual and decision point).

    Individuals are re-indexed densely in order of first appearance of their
    sorted ids; the original ids are kept in ``labels``. Decision points must
    be exactly ``1..T`` for every individual.
    """
    schema = schema or ColumnSchema()
    df = pd.read_csv(path, float_precision="round_trip")
    required = [schema.individual_id, schema.decision_point, schema.action, schema.outcome, schema.propensity]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"missing required columns {missing}")
    xcols = schema.covariate_columns(df.columns)
    if df[required[1:] + xcols].isna().any().any():
        raise IncompletePanelError("panel has empty cells; complete cases are required")

    t = df[schema.decision_point].to_numpy()
    if not np.all(np.equal(np.mod(t, 1), 0)):
        raise SchemaError("decision points must be integers")
    t = t.astype(np.int64)
    if t.min() != 1:
        raise SchemaError("decision points must start at 1")
    T = int(t.max())

    ids, inv = np.unique(df[schema.individual_id].to_numpy(), return_inverse=True)
    N = len(ids)
    key = inv * T + (t - 1)
    if np.unique(key).size != len(key):
        dup = pd.Series(key).duplicated().to_numpy().argmax()
        raise SchemaError(f"duplicate row for ({ids[inv[dup]]},{t[dup]})")
    if len(key) != N * T:
        present = np.zeros(N * T, dtype=bool)
        present[key] = True
        hole = int(np.flatnonzero(~present)[0])
        raise IncompletePanelError(f"incomplete panel at ({ids[hole // T]},{hole % T + 1})")

    a = df[schema.action].to_numpy()
    if not np.isin(a, (0, 1)).all():
        raise SchemaError(f"column '{schema.action}' must be binary 0/1")
    pi = df[schema.propensity].to_numpy(dtype=float)
    bad = ~((pi > 0) & (pi < 1))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise PositivityError(f"propensity {pi[k]} outside (0,1) at ({ids[inv[k]]},{t[k]})")

    order = np.argsort(key, kind="stable")
    P = len(xcols)
    X = df[xcols].to_numpy(dtype=float)[order].reshape(N, T, P)
    return PanelDataset(
        covariates=X,
        actions=a.astype(np.int64)[order].reshape(N, T),
        outcomes=df[schema.outcome].to_numpy(dtype=float)[order].reshape(N, T),
        propensities=pi[order].reshape(N, T),
        labels=ids,
    )


def atomic_write_csv(df: pd.DataFrame, path) -> None:
    """Write ``df`` to ``path`` via a temp file and rename, LF line endings."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            df.to_csv(fh, index=False, lineterminator="\n", na_rep="NA")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_frame(data: PanelDataset, schema: ColumnSchema | None = None) -> pd.DataFrame:
    schema = schema or ColumnSchema()
    N, T, P = data.covariates.shape
    cols = {
        schema.individual_id: np.repeat(data.labels, T),
        schema.decision_point: np.tile(np.arange(1, T + 1), N),
        schema.action: data.actions.ravel(),
        schema.outcome: data.outcomes.ravel(),
        schema.propensity: data.propensities.ravel(),
    }
    flat = data.covariates.reshape(N * T, P)
    for p in range(P):
        cols[f"{schema.covariate_prefix}{p + 1}"] = flat[:, p]
    return pd.DataFrame(cols)


def write_csv(data: PanelDataset, path, schema: ColumnSchema | None = None) -> None:
    """Write the panel in the long format read by :func:`load_csv` (full float precision)."""
    atomic_write_csv(to_frame(data, schema), path)


def write_potential_outcomes(data: PanelDataset, path) -> None:
    """Sidecar file ``individual_id, decision_point, y0, y1``."""
    if data.potential_outcomes is None:
        raise ValueError("dataset has no potential outcomes")
    N, T = data.outcomes.shape
    y0, y1 = data.potential_outcomes
    df = pd.DataFrame({
        "individual_id": np.repeat(data.labels, T),
        "decision_point": np.tile(np.arange(1, T + 1), N),
        "y0": y0.ravel(),
        "y1": y1.ravel(),
    })
    atomic_write_csv(df, path)


def attach_potential_outcomes(data: PanelDataset, path) -> PanelDataset:
    """Attach a sidecar written by :func:`write_potential_outcomes` to a loaded panel."""
    df = pd.read_csv(path, float_precision="round_trip")
    N, T = data.outcomes.shape
    pos = {lab: k for k, lab in enumerate(data.labels.tolist())}
    try:
        rows = np.array([pos[v] for v in df["individual_id"].tolist()])
    except KeyError as e:
        raise SchemaError(f"sidecar names unknown individual {e.args[0]}") from None
    cols = df["decision_point"].to_numpy(dtype=np.int64) - 1
    if len(df) != N * T or np.unique(rows * T + cols).size != N * T:
        raise IncompletePanelError("potential-outcome sidecar does not cover the panel")
    y0 = np.empty((N, T))
    y1 = np.empty((N, T))
    y0[rows, cols] = df["y0"].to_numpy(dtype=float)
    y1[rows, cols] = df["y1"].to_numpy(dtype=float)
    return data.replace(potential_outcomes=(y0, y1), true_ite=y1 - y0)


@dataclass(frozen=True, eq=False)
class TrainingSplit:
    """Disjoint individual sets for nuisance fitting, quantile fitting, calibration and test.

    ``train_horizon`` is the last decision point (1-based) usable for fitting.
    """

    nuisance_ids: np.ndarray
    model_ids: np.ndarray
    calibration_ids: np.ndarray
    test_ids: np.ndarray
    train_horizon: int

    def __post_init__(self):
        sets = [np.asarray(s, dtype=np.int64) for s in
                (self.nuisance_ids, self.model_ids, self.calibration_ids, self.test_ids)]
        for name, s in zip(("nuisance", "model", "calibration"), sets[:3]):
            if s.size == 0:
                raise ConfigError(f"{name} set is empty")
        allids = np.concatenate(sets)
        if np.unique(allids).size != allids.size:
            raise ConfigError("split sets overlap")
        if self.train_horizon < 1:
            raise ConfigError("train_horizon must be >= 1")
        for name, s in zip(("nuisance_ids", "model_ids", "calibration_ids", "test_ids"), sets):
            s.setflags(write=False)
            object.__setattr__(self, name, s)

    def __eq__(self, other):
        if not isinstance(other, TrainingSplit):
            return NotImplemented
        names = ("nuisance_ids", "model_ids", "calibration_ids", "test_ids")
        return self.train_horizon == other.train_horizon and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    __hash__ = None


def split(data: PanelDataset, train_frac: float = 0.75, seed: int = 0,
          horizon: int | None = None, n_test: int | None = None) -> TrainingSplit:
    """Shuffle individuals and split them into nuisance/model/calibration/test sets.

    ``train_frac`` of the individuals (rounded) form the training set, cut into
    three groups whose sizes differ by at most one; the rest is test. With
    ``n_test`` given, exactly that many individuals are held out for test
    and ``train_frac`` is ignored.
    """
    N, T = data.n_individuals, data.n_points
    if n_test is None:
        if not 0 < train_frac <= 1:
            raise ConfigError("train_frac must be in (0, 1]")
        n_train = int(round(train_frac * N))
    else:
        if not 0 <= n_test < N:
            raise ConfigError("n_test must be in [0, N)")
        n_train = N - n_test
    if n_train < 3:
        raise ConfigError(f"only {n_train} training individuals; need at least 3")
    horizon = T if horizon is None else int(horizon)
    if not 1 <= horizon <= T:
        raise ConfigError(f"horizon {horizon} outside 1..{T}")
    perm = np.random.default_rng(seed).permutation(N)
    groups = np.array_split(perm[:n_train], 3)
    return TrainingSplit(*(np.sort(g) for g in groups), np.sort(perm[n_train:]), horizon)
