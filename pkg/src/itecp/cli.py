"""Command-line front end: ``itecp simulate | run | compare-weights``.

Every command takes ``--config PATH --out DIR [--seed N] [--replicates K]``
plus any number of ``--set section.key=value`` overrides. Replicates run in a
process pool whose size comes from ``ITECP_WORKERS`` (default 1); results
are gathered in seed order, so outputs do not depend on the pool size.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from . import evaluation as ev
from .config import FileConfig
from .panel import ConfigError, atomic_write_csv, write_csv, write_potential_outcomes
from .pipeline import fit
from .synthetic import generate

log = logging.getLogger("itecp")

WORKERS_ENV = "ITECP_WORKERS"


def n_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def _map(fn, tasks):
    """Apply ``fn`` to each task, in a process pool if configured; order is preserved.

    Each result is ``("ok", value)`` or ``("failed", message)``.
    """
    n = min(n_workers(), len(tasks))
    if n <= 1:
        return [_guard(fn, t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_guard, [fn] * len(tasks), tasks))


def _guard(fn, task):
    try:
        return "ok", fn(*task)
    except Exception as e:  # noqa: BLE001 - reported per run in the manifest
        log.debug("run failed:\n%s", traceback.format_exc())
        return "failed", f"{type(e).__name__}: {e}"


def _atomic_write_text(text: str, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Outputs:
    """Tracks files written under one output directory for the manifest."""

    def __init__(self, out_dir):
        self.dir = out_dir
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.dir, name)

    def csv(self, df, name):
        atomic_write_csv(df, self.path(name))

    def manifest(self, command, cfg: FileConfig, runs: dict):
        body = {
            "command": command,
            "config_digest": cfg.digest(),
            "config": cfg.to_dict(),
            "seeds": cfg.seeds(),
            "output_dir": os.path.abspath(self.dir),
            "outputs": sorted(set(self.files)) + ["manifest.json"],
            "runs": runs,
            "failed": sorted(k for k, v in runs.items() if v["status"] != "ok"),
        }
        _atomic_write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                           os.path.join(self.dir, "manifest.json"))
        return not body["failed"]


def _status(results, keys):
    runs = {}
    for key, (state, val) in zip(keys, results):
        runs[key] = {"status": state} if state == "ok" else {"status": state, "error": val}
    return runs


# ---------------------------------------------------------------- simulate

def _simulate_one(cfg: FileConfig, seed: int, out_dir: str):
    data = generate(cfg.sim_config(seed))
    names = [f"panel_seed{seed}.csv", f"potential_outcomes_seed{seed}.csv"]
    write_csv(data, os.path.join(out_dir, names[0]))
    write_potential_outcomes(data, os.path.join(out_dir, names[1]))
    return names


def cmd_simulate(cfg: FileConfig, out_dir: str) -> int:
    if not cfg.is_synthetic:
        raise ConfigError("simulate needs a [simulation] section, not [data]")
    out = _Outputs(out_dir)
    seeds = cfg.seeds()
    results = _map(_simulate_one, [(cfg, s, out_dir) for s in seeds])
    for state, val in results:
        if state == "ok":
            out.files.extend(val)
    return 0 if out.manifest("simulate", cfg, _status(results, [f"seed{s}" for s in seeds])) else 1


# ---------------------------------------------------------------- run

def _run_one(cfg: FileConfig, seed: int):
    batch = fit(cfg.experiment_config(seed)).intervals()
    dom = None
    if batch.oracle_test_scores is not None:
        dom = ev.batch_dominance(batch)
    return (ev.summarize(batch), ev.summarize(batch, "decision_point"), ev.intervals_frame(batch), dom)


def _pooled(df: pd.DataFrame, keys) -> pd.DataFrame:
    """Mean of per-seed rows (cell counts summed), labelled seed='pooled'."""
    num = ["cov_true", "cov_pseudo", "avg_length"]
    cnt = ["n_unbounded", "n_cells", "n_collapsed"]
    g = df.groupby(keys, sort=False, dropna=False) if keys else None
    if g is None:
        row = {**df[num].mean().to_dict(), **df[cnt].sum().to_dict()}
        out = pd.DataFrame([row])
    else:
        out = pd.concat([g[num].mean(), g[cnt].sum()], axis=1).reset_index()
    out.insert(0, "seed", "pooled")
    if "group" in df.columns:
        out["group"] = "overall"
    return out[df.columns]


def cmd_run(cfg: FileConfig, out_dir: str) -> int:
    out = _Outputs(out_dir)
    seeds = cfg.seeds()
    results = _map(_run_one, [(cfg, s) for s in seeds])
    summary, by_point, intervals, dominance = [], [], [], []
    for seed, (state, val) in zip(seeds, results):
        if state != "ok":
            continue
        overall, per_point, frame, dom = val
        summary.append(ev.metrics_frame(overall, seed=seed))
        by_point.append(ev.metrics_frame(per_point, seed=seed))
        frame.insert(0, "seed", seed)
        intervals.append(frame)
        if dom is not None:
            d = ev.dominance_frame(dom)
            d.insert(0, "seed", seed)
            dominance.append(d)
    if summary:
        s = pd.concat(summary, ignore_index=True)
        s["seed"] = s["seed"].astype(object)
        out.csv(pd.concat([s, _pooled(s, [])], ignore_index=True), "summary.csv")
        out.csv(pd.concat(by_point, ignore_index=True), "by_decision_point.csv")
        out.csv(pd.concat(intervals, ignore_index=True), "intervals.csv")
        if dominance:
            out.csv(pd.concat(dominance, ignore_index=True), "dominance.csv")
    return 0 if out.manifest("run", cfg, _status(results, [f"seed{s}" for s in seeds])) else 1


# ---------------------------------------------------------------- compare-weights

def _compare_one(cfg: FileConfig, experiment: str, seed: int, schemes):
    fitted = fit(cfg.experiment_config(seed, experiment))
    res = []
    for s in schemes:
        b = fitted.intervals(s)
        res.append((ev.summarize(b), ev.summarize(b, "decision_point")))
    return res


def _scheme_cols(s):
    return {"scheme": s.kind, "psi": s.psi if s.kind != "equal" else np.nan}


def cmd_compare_weights(cfg: FileConfig, out_dir: str) -> int:
    out = _Outputs(out_dir)
    names, schemes = cfg.compare_plan()
    for name in names:
        cfg.experiment_config(cfg.seeds()[0], name)
    seeds = cfg.seeds()
    tasks = [(cfg, n, s, schemes) for n in names for s in seeds]
    results = _map(_compare_one, tasks)
    traces, summary = [], []
    for (_, name, seed, _), (state, val) in zip(tasks, results):
        if state != "ok":
            continue
        for s, (overall, per_point) in zip(schemes, val):
            extra = {"experiment": name, "seed": seed, **_scheme_cols(s)}
            traces.append(ev.metrics_frame(per_point, **extra))
            summary.append(ev.metrics_frame(overall, **extra))
    if summary:
        t = pd.concat(traces, ignore_index=True).rename(columns={"group": "decision_point"})
        out.csv(t, "traces.csv")
        s = pd.concat(summary, ignore_index=True).drop(columns="group")
        s["seed"] = s["seed"].astype(object)
        s = pd.concat([s, _pooled(s, ["experiment", "scheme", "psi"])], ignore_index=True)
        if len(schemes) > 1:
            # differences against the first listed scheme, within experiment and seed
            ref = s[(s["scheme"] == schemes[0].kind)
                    & ((s["psi"] == schemes[0].psi) | (schemes[0].kind == "equal"))]
            ref = ref.set_index(["experiment", "seed"])
            key = pd.MultiIndex.from_frame(s[["experiment", "seed"]])
            s["ref_scheme"] = schemes[0].kind
            s["d_cov_pseudo"] = s["cov_pseudo"].to_numpy() - ref["cov_pseudo"].reindex(key).to_numpy()
            s["d_avg_length"] = s["avg_length"].to_numpy() - ref["avg_length"].reindex(key).to_numpy()
        out.csv(s, "summary.csv")
    keys = [f"{n}/seed{s}" for (_, n, s, _) in tasks]
    return 0 if out.manifest("compare-weights", cfg, _status(results, keys)) else 1


# ---------------------------------------------------------------- entry point

COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "compare-weights": cmd_compare_weights}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="itecp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, help="experiment config file")
        c.add_argument("--out", required=True, help="output directory")
        c.add_argument("--seed", type=int, default=None, help="base seed (overrides [run] seed)")
        c.add_argument("--replicates", type=int, default=None,
                       help="number of seeds base..base+K-1 (overrides [run] replicates)")
        c.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value; repeatable")
        c.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = FileConfig.read(args.config, args.set).with_run(args.seed, args.replicates)
        status = COMMANDS[args.command](cfg, args.out)
    except (ConfigError, ValueError, OSError) as e:
        print(f"itecp {args.command}: error: {e}", file=sys.stderr)
        return 2
    if status:
        print(f"itecp {args.command}: some runs failed; see {os.path.join(args.out, 'manifest.json')}",
              file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
