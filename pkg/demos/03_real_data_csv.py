"""
Using a study exported as CSV
=============================

Real studies come as one row per (individual, decision point) with the
received action, the outcome, the known randomization probability and
covariates ``x1..xP``. No potential outcomes exist, so only pseudo-outcome
coverage can be reported.
"""

#%%
import tempfile
from pathlib import Path

import numpy as np

from itecp import ExperimentConfig, SimConfig, generate, load_csv, run, summarize, write_csv

#%%
# Stand-in for a real export: write a simulated panel without its potential outcomes
tmp = Path(tempfile.mkdtemp())
write_csv(generate(SimConfig(n_individuals=400, n_points=20, n_covariates=8, seed=3)), tmp / "study.csv")
print(open(tmp / "study.csv").readline().strip()[:80], "...")

data = load_csv(tmp / "study.csv")
print("panel:", data.n_individuals, "individuals x", data.n_points, "points x", data.n_covariates, "covariates")

#%%
# Predict the last 5 weeks for everyone held out of fitting, fitting on the
# first 15 and letting test individuals' early weeks join the calibration set.
cfg = ExperimentConfig(data_path=str(tmp / "study.csv"), mode="outward", train_horizon=15,
                       outward_targets="test", augment_cal_with_test_history=True)
batch = run(cfg)
# with only 100 test individuals expect PCov to move by a few points between
# seeds; the covariate process also drifts over the first weeks, which
# favours weights that decay in time over equal weights
row = summarize(batch)[0]
print(f"PCov {row.cov_pseudo:.2f}%  AL {row.avg_length:.3f}  (Cov unavailable: {row.cov_true})")
print("ids in output keep their original labels:", np.unique(batch.labels)[:5])
