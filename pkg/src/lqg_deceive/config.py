"""Experiment configuration: schema validation and loading.

A config is a JSON object.  ``system``, ``cost`` and ``gamma`` are required;
every other section is optional and falls back to the defaults below.  Any
matrix may be given inline (row-major nested lists) or as a path to a JSON
file holding one, and ``system``/``cost`` may themselves be paths.  Relative
paths resolve against the config's directory.  Unknown keys are rejected
before anything is computed.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .attack import AttackTarget
from .errors import LQGError
from .lqg_core import CostParams, LinearSystem, Policy


class ConfigError(LQGError, ValueError):
    """Malformed or schema-violating configuration."""


class ConfigNotFound(ConfigError, FileNotFoundError):
    pass


_NUM = (int, float)

# section -> {key: (types, default)}; a default of REQUIRED means the key must be present
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {"A": ("matrix", REQUIRED), "B": ("matrix", REQUIRED), "C": ("matrix", None),
               "noise_std": (_NUM, 0.0)},
    "cost": {"D": ("matrix", REQUIRED), "E": ("matrix", REQUIRED), "d": ("vector", None),
             "r": (_NUM, 0.0)},
    "target": {"K": ("matrix", REQUIRED), "k": ("vector", None)},
    "init": {"K": ("matrix", REQUIRED), "k": ("vector", None)},
    "seeds": {"batch": (int, 0), "adp": (int, 0), "bounds": (int, 0)},
    "tolerances": {"riccati": (_NUM, 1e-10), "conic": (_NUM, 1e-8), "batch_conic": (_NUM, 1e-9),
                   "eps_strict": (_NUM, 1e-6), "round_trip": (_NUM, 1e-4), "feasibility": (_NUM, 1e-7)},
    "batch": {"T": (int, 400), "noise_std": (_NUM, None), "control_box": ("vector", [-1.0, 1.0]),
              "max_iters": (int, 200_000)},
    "adp": {"beta": (_NUM, 10.0), "eps1": (_NUM, 1e-5), "eps2": (_NUM, 1e-5), "probe_std": (_NUM, 5.0),
            "noise_std": (_NUM, 0.0), "max_inner": (int, 100_000), "max_outer": (int, 100),
            "min_inner": (int, None)},
    "bounds": {"eps": (_NUM, 1e-3), "n_trials": (int, 100)},
    "feasibility": {"E_trial": ("matrix", None), "grid": (int, 1024)},
}
TOP_LEVEL = {"name": str, "gamma": _NUM, "x0": "vector", "output_dir": str, **{k: dict for k in SCHEMA}}
REQUIRED_TOP = ("system", "cost", "gamma")


def _load_json(path: Path):
    if not path.exists():
        raise ConfigNotFound(f"config not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _resolve(value, base: Path):
    """Replace a string by the JSON content of the file it names."""
    if isinstance(value, str):
        return _load_json(base / value)
    return value


def _check_array(value, kind: str, where: str):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected a numeric {kind}") from exc
    want = 2 if kind == "matrix" else 1
    if kind == "matrix" and arr.ndim == 1 and arr.size:
        arr = arr[None, :]
    if arr.ndim != want:
        raise ConfigError(f"{where}: expected a {kind}, got an array with {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: non-finite entries")
    return arr.tolist()


def _check_scalar(value, types, where: str):
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"{where}: expected {getattr(types, '__name__', 'a number')}, got {value!r}")
    return value


def validate(raw: dict, base: Path | None = None) -> dict:
    """Return a normalized copy of ``raw`` with defaults filled in, or raise :class:`ConfigError`."""
    base = Path(".") if base is None else base
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_TOP if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    out: dict = {"name": raw.get("name", "experiment"), "output_dir": raw.get("output_dir")}
    _check_scalar(out["name"], str, "name")
    gamma = _check_scalar(raw["gamma"], _NUM, "gamma")
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    out["gamma"] = float(gamma)
    out["x0"] = _check_array(_resolve(raw["x0"], base), "vector", "x0") if "x0" in raw else None

    for section, keys in SCHEMA.items():
        given = _resolve(raw.get(section), base) if section in raw else None
        if given is None:
            out[section] = None
            continue
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: expected an object")
        bad = sorted(set(given) - set(keys))
        if bad:
            raise ConfigError(f"unknown keys in {section}: {', '.join(bad)}")
        sec = {}
        for key, (kind, default) in keys.items():
            where = f"{section}.{key}"
            if key not in given or given[key] is None:
                if default is REQUIRED:
                    raise ConfigError(f"missing required key {where}")
                sec[key] = copy.deepcopy(default)
                continue
            value = given[key]
            if kind in ("matrix", "vector"):
                sec[key] = _check_array(_resolve(value, base), kind, where)
            else:
                sec[key] = _check_scalar(value, kind, where)
        out[section] = sec
    # optional sections with all-default contents
    for section in ("seeds", "tolerances", "batch", "adp", "bounds", "feasibility"):
        if out[section] is None:
            out[section] = {k: copy.deepcopy(d) for k, (_, d) in SCHEMA[section].items()}
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration plus typed accessors."""

    data: dict
    source: str | None = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None, source: str | None = None) -> "ExperimentConfig":
        return cls(validate(raw, base), source)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), path.parent, str(path))

    @classmethod
    def default(cls) -> "ExperimentConfig":
        text = resources.files("lqg_deceive").joinpath("data/vehicle6.json").read_text()
        return cls.from_dict(json.loads(text), None, "default")

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        """Copy with every seed replaced by ``seed``."""
        if seed is None:
            return self
        data = copy.deepcopy(self.data)
        data["seeds"] = {k: int(seed) for k in data["seeds"]}
        return ExperimentConfig(data, self.source, {**self.overrides, "seed": int(seed)})

    @property
    def gamma(self) -> float:
        return self.data["gamma"]

    @property
    def system(self) -> LinearSystem:
        s = self.data["system"]
        return LinearSystem(s["A"], s["B"], s["C"], s["noise_std"])

    @property
    def cost(self) -> CostParams:
        c = self.data["cost"]
        return CostParams(c["D"], c["E"], c["d"], c["r"])

    def _policy(self, section: str) -> Policy | None:
        p = self.data[section]
        if p is None:
            return None
        return Policy(p["K"], p["k"])

    @property
    def target(self) -> AttackTarget:
        pol = self._policy("target")
        if pol is None:
            raise ConfigError("config has no target section")
        return AttackTarget.from_policy(pol)

    @property
    def init(self) -> Policy | None:
        return self._policy("init")

    @property
    def x0(self) -> np.ndarray | None:
        return None if self.data["x0"] is None else np.array(self.data["x0"], dtype=float)

    def section(self, name: str) -> dict:
        return self.data[name]

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()
