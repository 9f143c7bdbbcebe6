"""Coverage/length summaries and empirical stochastic-order checks on conformity scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .panel import atomic_write_csv

SUMMARY_COLUMNS = ["group", "cov_true", "cov_pseudo", "avg_length", "n_unbounded", "n_cells", "n_collapsed"]


@dataclass(frozen=True)
class MetricsRow:
    """Coverage in percent; ``cov_true`` is None without true effects, ``avg_length`` NaN if all unbounded."""

    group: str
    cov_true: float | None
    cov_pseudo: float
    avg_length: float
    n_unbounded: int
    n_cells: int
    n_collapsed: int = 0


def _row(group, batch, sel) -> MetricsRow:
    n = int(sel.sum())
    unb = batch.unbounded[sel]
    lengths = batch.length[sel][~unb]
    ct = batch.covered_true
    return MetricsRow(
        group=str(group),
        cov_true=None if ct is None else 100.0 * float(ct[sel].mean()),
        cov_pseudo=100.0 * float(batch.covered_pseudo[sel].mean()),
        avg_length=float(lengths.mean()) if lengths.size else float("nan"),
        n_unbounded=int(unb.sum()),
        n_cells=n,
        n_collapsed=int(batch.collapsed[sel].sum()),
    )


def summarize(batch, group_by: str = "overall") -> list[MetricsRow]:
    """Cov / PCov / AL overall or per decision point.

    Unbounded intervals count as covered and are left out of the average
    length (their number is reported instead).
    """
    if group_by == "overall":
        return [_row("overall", batch, np.ones(len(batch), dtype=bool))]
    if group_by == "decision_point":
        return [_row(int(t), batch, batch.decision_point == t) for t in np.unique(batch.decision_point)]
    raise ValueError("group_by must be 'overall' or 'decision_point'")


def metrics_frame(rows, **extra) -> pd.DataFrame:
    df = pd.DataFrame([asdict(r) for r in rows], columns=SUMMARY_COLUMNS)
    for k, v in reversed(list(extra.items())):
        df.insert(0, k, v)
    return df


def write_summary_csv(rows, path, **extra) -> None:
    atomic_write_csv(metrics_frame(rows, **extra), path)


def read_summary_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=True, na_values=["NA"])


def intervals_frame(batch) -> pd.DataFrame:
    df = pd.DataFrame({
        "individual_id": batch.labels,
        "decision_point": batch.decision_point,
        "lower": batch.lower,
        "upper": batch.upper,
        "q_hat": batch.q_hat,
        "pseudo_outcome": batch.pseudo_outcome,
        "true_ite": batch.true_ite if batch.true_ite is not None else np.full(len(batch), np.nan),
        "covered_pseudo": batch.covered_pseudo.astype(int),
    })
    ct = batch.covered_true
    df["covered_true"] = pd.array(ct.astype(int), dtype="Int64") if ct is not None else pd.array([pd.NA] * len(batch), dtype="Int64")
    return df


# ---------------------------------------------------------------- dominance

@dataclass(frozen=True)
class DominanceReport:
    """Empirical orderings between observed-score and oracle-score samples.

    ``fosd``: V_phi first-order dominates V* (ECDF of V_phi never above, strictly below somewhere).
    ``sosd``: V_phi is second-order dominated by V*, i.e.
    ``E(x - V_phi)+ >= E(x - V*)+`` for all x, strictly somewhere.
    ``mcx``: V_phi dominates V* in increasing-convex order,
    ``E(V_phi - c)+ >= E(V* - c)+`` for all c and ``E V_phi >= E V*``.
    ``witnesses`` maps each order that fails to the first grid point violating it.
    """

    fosd: bool
    sosd: bool
    mcx: bool
    witnesses: dict = field(default_factory=dict)

    def rows(self):
        return [(name, getattr(self, name), self.witnesses.get(name)) for name in ("fosd", "sosd", "mcx")]


def _upper_partial(sorted_v, suffix, grid):
    """E[(V - c)+] for each c in grid."""
    n = sorted_v.size
    k = np.searchsorted(sorted_v, grid, side="right")
    return (suffix[k] - grid * (n - k)) / n


def _lower_partial(sorted_v, prefix, grid):
    """E[(c - V)+] for each c in grid."""
    n = sorted_v.size
    k = np.searchsorted(sorted_v, grid, side="right")
    return (grid * k - prefix[k]) / n


def _sums(v):
    prefix = np.concatenate([[0.0], np.cumsum(v)])
    suffix = np.concatenate([np.cumsum(v[::-1])[::-1], [0.0]])
    return prefix, suffix


def check_dominance(v_phi, v_star, grid_size: int | None = None, tol: float = 1e-10) -> DominanceReport:
    """Check FOSD, SOSD and MCX orderings between two score samples.

    The grid is every pooled sample point, or ``grid_size`` of them spread
    evenly through the sorted pool. Expectation comparisons allow an absolute
    slack of ``tol * (1 + max|v|)`` for rounding; ECDF comparisons are exact.
    """
    a = np.sort(np.asarray(v_phi, dtype=float))
    b = np.sort(np.asarray(v_star, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.unique(np.concatenate([a, b]))
    if grid_size is not None and grid_size < grid.size:
        if grid_size < 1:
            raise ValueError("grid_size must be positive")
        grid = grid[np.unique(np.linspace(0, grid.size - 1, grid_size).round().astype(int))]
    slack = tol * (1.0 + max(np.abs(a).max(), np.abs(b).max()))
    wit = {}

    # ECDF counts, cross-multiplied to stay in integers
    ca = np.searchsorted(a, grid, side="right") * b.size
    cb = np.searchsorted(b, grid, side="right") * a.size
    bad = ca > cb
    fosd = not bad.any() and bool((ca < cb).any())
    if bad.any():
        wit["fosd"] = float(grid[bad.argmax()])
    elif not fosd:
        wit["fosd"] = None

    pa, sa = _sums(a)
    pb, sb = _sums(b)
    low = _lower_partial(a, pa, grid) - _lower_partial(b, pb, grid)
    bad = low < -slack
    sosd = not bad.any() and bool((low > slack).any())
    if bad.any():
        wit["sosd"] = float(grid[bad.argmax()])
    elif not sosd:
        wit["sosd"] = None

    up = _upper_partial(a, sa, grid) - _upper_partial(b, sb, grid)
    mean_gap = a.mean() - b.mean()
    bad = up < -slack
    mcx = not bad.any() and mean_gap >= -slack
    if bad.any():
        wit["mcx"] = float(grid[bad.argmax()])
    elif not mcx:
        wit["mcx"] = float("-inf")
    return DominanceReport(bool(fosd), bool(sosd), bool(mcx), wit)


def dominance_frame(report: DominanceReport) -> pd.DataFrame:
    return pd.DataFrame(
        [(o, int(h), w) for o, h, w in report.rows()], columns=["order", "holds", "witness"])


def write_dominance_csv(report: DominanceReport, path) -> None:
    atomic_write_csv(dominance_frame(report), path)


def read_dominance_csv(path) -> DominanceReport:
    df = pd.read_csv(path, float_precision="round_trip")
    holds = dict(zip(df["order"], df["holds"].astype(bool)))
    wit = {o: (None if pd.isna(w) else float(w)) for o, h, w in df.itertuples(index=False) if not h}
    return DominanceReport(holds["fosd"], holds["sosd"], holds["mcx"], wit)


def batch_dominance(batch) -> DominanceReport:
    """Dominance of pooled calibration+test observed scores over their oracle counterparts."""
    if batch.oracle_test_scores is None:
        raise ValueError("oracle scores need true treatment effects")
    v_phi = np.concatenate([batch.calibration.scores, batch.test_scores])
    v_star = np.concatenate([batch.oracle_calibration_scores, batch.oracle_test_scores])
    return check_dominance(v_phi, v_star)
