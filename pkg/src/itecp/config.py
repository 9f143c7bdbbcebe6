"""Experiment configuration files.

A config is a ``key = value`` text file grouped under bracketed sections::

    [simulation]            ; synthetic data, or use [data] instead
    n_individuals = 2000
    n_points = 50
    changepoint = none

    [data]                  ; real panel in long CSV format
    path = panel.csv        ; relative paths are resolved against the config file
    potential_outcomes = po.csv

    [method]
    alpha = 0.05
    learner = dr
    scheme = decay
    psi = 0.7

    [split]
    train_frac = 0.75

    [run]
    seed = 0
    replicates = 1

    [compare]
    schemes = equal, decay
    psi = 0.5, 0.7, 0.9
    experiments = downward, outward

    [experiment:outward]
    simulation.n_points = 90
    method.mode = outward

Precedence, lowest first: built-in defaults, the file, ``--set
section.key=value`` flags, then ``--seed`` / ``--replicates``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace

from .conformal import WeightScheme
from .panel import ColumnSchema, ConfigError
from .pipeline import ExperimentConfig
from .synthetic import SimConfig

SECTIONS = ("simulation", "data", "method", "split", "run", "compare")

_METHOD_KEYS = {
    "alpha": float, "learner": str, "mode": str, "train_horizon": "opt_int",
    "nuisance_lambda": "lam", "qr_lambda": "lam", "cv_folds": int, "cv_seed": int,
    "lags": "int_tuple", "outward_calibration": str, "outward_targets": str,
    "augment_cal_with_test_history": bool,
    # weight scheme
    "scheme": str, "psi": float, "w_inf": float,
}
_SPLIT_KEYS = {"train_frac": float, "n_test": "opt_int"}
_RUN_KEYS = {"seed": int, "replicates": int}
_COMPARE_KEYS = {"schemes": "str_tuple", "psi": "float_tuple", "experiments": "str_tuple"}
_DATA_KEYS = {"path": str, "potential_outcomes": str,
              **{f.name: str for f in fields(ColumnSchema)}}

# changepoint experiments used by compare-weights when the file names none
BUILTIN_EXPERIMENTS = {
    "downward": {"simulation": {"n_points": "520", "changepoint": "500"},
                 "method": {"mode": "downward"}},
    "outward": {"simulation": {"n_points": "90", "changepoint": "45"},
                "method": {"mode": "outward", "train_horizon": "30"}},
}


def _sim_types():
    out = {}
    for f in fields(SimConfig):
        d = f.default
        if f.name == "changepoint":
            out[f.name] = "opt_int"
        elif isinstance(d, tuple):
            out[f.name] = "float_tuple"
        elif isinstance(d, bool):
            out[f.name] = bool
        else:
            out[f.name] = type(d)
    return out


_SIM_KEYS = _sim_types()
_KEYS = {"simulation": _SIM_KEYS, "data": _DATA_KEYS, "method": _METHOD_KEYS, "split": _SPLIT_KEYS,
         "run": _RUN_KEYS, "compare": _COMPARE_KEYS}


def _coerce(section, key, raw):
    kind = _KEYS[section][key]
    s = raw.strip()
    try:
        if kind == "opt_int":
            return None if s.lower() in ("none", "") else int(s)
        if kind == "lam":
            return "cv" if s.lower() == "cv" else float(s)
        if kind == "int_tuple":
            return tuple(int(v) for v in s.split(",") if v.strip())
        if kind == "float_tuple":
            return tuple(float(v) for v in s.split(",") if v.strip())
        if kind == "str_tuple":
            return tuple(v.strip() for v in s.split(",") if v.strip())
        if kind is bool:
            low = s.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(f"not a boolean: {s!r}")
            return low in ("true", "yes", "1", "on")
        if kind is int:
            return int(s)
        if kind is float:
            return float(s)
        return s
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from None


def _check_key(section, key):
    if section not in _KEYS:
        raise ConfigError(f"unknown section [{section}]")
    if key not in _KEYS[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")


def _parse_override(item: str):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    lhs, value = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section.strip(), key.strip(), value.strip()


@dataclass(frozen=True)
class FileConfig:
    """Parsed and type-checked config: plain dicts per section plus named experiment overrides."""

    values: dict
    experiments: dict = field(default_factory=dict)
    base_dir: str = "."

    # ---------------------------------------------------------------- reading
    @classmethod
    def read(cls, path, overrides=()) -> "FileConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_parser(cp, os.path.dirname(os.path.abspath(path)), overrides)

    @classmethod
    def from_string(cls, text: str, base_dir: str = ".", overrides=()) -> "FileConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(str(e)) from None
        return cls.from_parser(cp, base_dir, overrides)

    @classmethod
    def from_parser(cls, cp, base_dir, overrides=()):
        values = {s: {} for s in SECTIONS}
        experiments = {}
        for sec in cp.sections():
            if sec.startswith("experiment:"):
                name = sec.split(":", 1)[1].strip()
                exp = {}
                for k, v in cp.items(sec):
                    if "." not in k:
                        raise ConfigError(f"[{sec}] keys must be section.key, got {k!r}")
                    s, key = k.split(".", 1)
                    _check_key(s, key)
                    exp.setdefault(s, {})[key] = _coerce(s, key, v)
                experiments[name] = exp
                continue
            for k, v in cp.items(sec):
                _check_key(sec, k)
                values[sec][k] = _coerce(sec, k, v)
        for item in overrides:
            s, k, v = _parse_override(item)
            _check_key(s, k)
            values[s][k] = _coerce(s, k, v)
        if values["simulation"] and values["data"]:
            raise ConfigError("use either [simulation] or [data], not both")
        cfg = cls(values, experiments, base_dir)
        cfg.experiment_config(cfg.seeds()[0])  # validate eagerly
        return cfg

    # ---------------------------------------------------------------- access
    def with_run(self, seed=None, replicates=None) -> "FileConfig":
        run = dict(self.values["run"])
        if seed is not None:
            run["seed"] = int(seed)
        if replicates is not None:
            run["replicates"] = int(replicates)
        if run.get("replicates", 1) < 1:
            raise ConfigError("replicates must be >= 1")
        return replace(self, values={**self.values, "run": run})

    def seeds(self) -> list[int]:
        run = self.values["run"]
        base, k = run.get("seed", 0), run.get("replicates", 1)
        if k < 1:
            raise ConfigError("replicates must be >= 1")
        return [base + r for r in range(k)]

    @property
    def is_synthetic(self) -> bool:
        return not self.values["data"]

    def digest(self) -> str:
        """SHA-256 of the effective configuration (after all overrides)."""
        blob = json.dumps({"values": self.values, "experiments": self.experiments},
                          sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return json.loads(json.dumps({"values": self.values, "experiments": self.experiments},
                                     sort_keys=True, default=list))

    def sim_config(self, seed: int, extra: dict | None = None) -> SimConfig:
        kw = {**self.values["simulation"], **(extra or {})}
        kw["seed"] = seed
        return SimConfig(**kw)

    def experiment_config(self, seed: int, experiment: str | None = None) -> ExperimentConfig:
        """Pipeline config for one replicate; ``experiment`` applies a named override block."""
        over = {}
        if experiment is not None:
            over = self.experiments.get(experiment) or BUILTIN_EXPERIMENTS.get(experiment)
            if over is None:
                raise ConfigError(f"unknown experiment {experiment!r}")
            over = {s: {k: (_coerce(s, k, v) if isinstance(v, str) and _KEYS[s][k] is not str else v)
                        for k, v in kv.items()} for s, kv in over.items()}
        sec = {s: {**self.values[s], **over.get(s, {})} for s in SECTIONS}
        m = dict(sec["method"])
        scheme = WeightScheme(m.pop("scheme", "decay"), m.pop("psi", 0.7), m.pop("w_inf", 1.0))
        common = dict(m, **sec["split"], scheme=scheme, split_seed=seed)
        if sec["data"]:
            d = dict(sec["data"])
            path = d.pop("path", None)
            if path is None:
                raise ConfigError("[data] needs path")
            po = d.pop("potential_outcomes", None)
            return ExperimentConfig(
                data_path=os.path.join(self.base_dir, path),
                potential_outcomes_path=None if po is None else os.path.join(self.base_dir, po),
                schema=ColumnSchema(**d), **common)
        return ExperimentConfig(sim=SimConfig(**{**sec["simulation"], "seed": seed}), **common)

    def compare_plan(self):
        """(experiment names, weight schemes) for compare-weights."""
        c = self.values["compare"]
        names = c.get("experiments") or tuple(self.experiments) or tuple(BUILTIN_EXPERIMENTS)
        kinds = c.get("schemes", ("equal", "decay"))
        psis = c.get("psi") or (self.values["method"].get("psi", 0.7),)
        w_inf = self.values["method"].get("w_inf", 1.0)
        schemes = []
        for k in kinds:
            for p in psis:
                s = WeightScheme(k, p, w_inf)
                if s.kind == "equal":
                    s = WeightScheme("equal", float("nan"), w_inf)
                if not any(_same_scheme(s, o) for o in schemes):
                    schemes.append(s)
        return list(names), schemes


def _same_scheme(a, b):
    return a.kind == b.kind and a.w_inf == b.w_inf and (a.psi == b.psi or a.kind == "equal")
