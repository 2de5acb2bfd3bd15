"""JSON/CSV helpers shared by the CLI and the experiment runner."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .lqg_core import CostParams, LinearSystem, Policy, Trajectory, ValueQuad


def jsonable(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


def dumps(obj) -> str:
    # sorted keys + fixed float repr keep repeated runs byte-identical
    return json.dumps(jsonable(obj), indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def matrix(value, name: str = "matrix") -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a row-major nested list")
    return arr


def system_to_dict(sys: LinearSystem) -> dict:
    return {"A": sys.A, "B": sys.B, "C": sys.C, "noise_std": sys.noise_std}


def cost_to_dict(cost: CostParams) -> dict:
    return {"D": cost.D, "E": cost.E, "d": cost.d, "r": cost.r}


def policy_to_dict(policy: Policy) -> dict:
    return {"K": policy.K, "k": policy.k}


def value_to_dict(value: ValueQuad) -> dict:
    return {"P": value.P, "h": value.h, "l": value.l}


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Header ``t, x_1..x_n, u_1..u_m, c`` then one row per step."""
    n = traj.states.shape[1]
    m = traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)] + ["c"])
        for t in range(traj.T):
            w.writerow([t, *map(_fmt, traj.states[t]), *map(_fmt, traj.controls[t]), repr(float(traj.costs[t]))])
