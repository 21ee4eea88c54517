"""Trajectory CSV and report JSON writers.

The trajectory CSV schema is fixed:

    t, x, y, theta, p1, p2, z1, z2, z3, w1, w2, w3, u1, u2,
    H, H_d, Hd_dot, constraint_residual

with floats printed to 17 significant digits, so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .integrator import Trajectory

__all__ = ["CSV_COLUMNS", "write_trajectory_csv", "write_json"]

CSV_COLUMNS = ("t", "x", "y", "theta", "p1", "p2", "z1", "z2", "z3",
               "w1", "w2", "w3", "u1", "u2", "H", "H_d", "Hd_dot",
               "constraint_residual")


def _rows(traj: Trajectory) -> np.ndarray:
    return np.column_stack([
        traj.t, traj.q, traj.p, traj.z, traj.w, traj.u,
        traj.H, traj.H_d, traj.Hd_dot, traj.constraint_residual,
    ])


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    data = _rows(traj)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return path
