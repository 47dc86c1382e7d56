from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Trajectory:
    """Sampled multivariate time series with an optional control channel block.

    ``provenance`` records the generating system, its parameters, the seed and
    integrator settings; it is written to a JSON sidecar next to the CSV.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.states.shape[0] != self.times.size:
            self.states = self.states.reshape(self.times.size, -1)
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=np.float64).reshape(self.times.size, -1)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    @property
    def n_states(self) -> int:
        return self.states.shape[1]

    @property
    def n_controls(self) -> int:
        return 0 if self.controls is None else self.controls.shape[1]

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.times[start:stop], self.states[start:stop],
                          None if self.controls is None else self.controls[start:stop],
                          dict(self.provenance))

    def replace(self, **changes) -> "Trajectory":
        values = {"times": self.times, "states": self.states, "controls": self.controls,
                  "provenance": dict(self.provenance)}
        values.update(changes)
        return Trajectory(**values)


def _fmt(a: np.ndarray) -> list[str]:
    return [repr(float(v)) for v in a]


def trajectory_csv(traj: Trajectory, derivatives: np.ndarray | None = None) -> str:
    """CSV text with header ``t,x1..xl[,u1..up][,dx1..dxl]``; floats round-trip exactly."""
    header = ["t"] + [f"x{i + 1}" for i in range(traj.n_states)]
    header += [f"u{i + 1}" for i in range(traj.n_controls)]
    cols = [traj.times[:, None], traj.states]
    if traj.controls is not None:
        cols.append(traj.controls)
    if derivatives is not None:
        derivatives = np.asarray(derivatives, dtype=np.float64).reshape(len(traj), -1)
        header += [f"dx{i + 1}" for i in range(derivatives.shape[1])]
        cols.append(derivatives)
    table = np.hstack(cols)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in table:
        buf.write(",".join(_fmt(row)) + "\n")
    return buf.getvalue()


def save_trajectory(traj: Trajectory, path: str | Path,
                    derivatives: np.ndarray | None = None) -> None:
    path = Path(path)
    path.write_text(trajectory_csv(traj, derivatives))
    path.with_suffix(".json").write_text(json.dumps(traj.provenance, indent=2, sort_keys=True))


def read_trajectory(path: str | Path) -> tuple[Trajectory, np.ndarray | None]:
    """Read a trajectory CSV (and its sidecar, if present); returns ``(trajectory, derivatives)``."""
    path = Path(path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line],
                    dtype=np.float64).reshape(-1, len(header))
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    us = [i for i, h in enumerate(header) if h.startswith("u")]
    ds = [i for i, h in enumerate(header) if h.startswith("dx")]
    side = path.with_suffix(".json")
    provenance = json.loads(side.read_text()) if side.exists() else {}
    traj = Trajectory(data[:, 0], data[:, xs], data[:, us] if us else None, provenance)
    return traj, (data[:, ds] if ds else None)
