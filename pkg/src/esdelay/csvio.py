"""CSV emission for trajectories and reports.

Trajectory schema (fixed column order): j, theta_hat_1..n, theta_1..n, y,
eta, alpha, err. Floats carry 17 significant digits so files round-trip the
underlying doubles exactly and reruns are byte-identical.
"""

from __future__ import annotations

import numpy as np

from esdelay.estimator import Trajectory

__all__ = ["trajectory_header", "write_trajectory_csv", "read_trajectory_csv", "write_chain_csv"]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def trajectory_header(n: int) -> str:
    cols = ["j"]
    cols += [f"theta_hat_{i}" for i in range(1, n + 1)]
    cols += [f"theta_{i}" for i in range(1, n + 1)]
    cols += ["y", "eta", "alpha", "err"]
    return ",".join(cols)


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    n = traj.theta_hat.shape[1] if traj.theta_hat.size else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trajectory_header(n) + "\n")
        for r in range(traj.j.shape[0]):
            parts = [str(int(traj.j[r]))]
            parts += [_fmt(v) for v in traj.theta_hat[r]]
            parts += [_fmt(v) for v in traj.theta[r]]
            parts += [_fmt(traj.y[r]), _fmt(traj.eta[r]), _fmt(traj.alpha[r]), _fmt(traj.err[r])]
            fh.write(",".join(parts) + "\n")


def read_trajectory_csv(path: str):
    """Parse a trajectory CSV back into column arrays keyed by header name."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows:
        return {name: np.empty(0) for name in header}
    mat = np.asarray(rows, dtype=float)
    return {name: mat[:, i] for i, name in enumerate(header)}


def write_chain_csv(values: dict, path: str) -> None:
    """Flat key/value report for a bound chain evaluation."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("quantity,value\n")
        for key, val in values.items():
            fh.write(f"{key},{_fmt(float(val))}\n")
