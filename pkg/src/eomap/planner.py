"""Planner-side safety filter over candidate ego trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Horizon


@dataclass
class CandidateTrajectory:
    """Ego footprints per future step; ``footprints[i]`` is an (n, 2) array of (row, col)."""

    steps: list
    footprints: list
    name: str = ""

    def __post_init__(self):
        self.steps = [int(s) for s in self.steps]
        self.footprints = [np.asarray(f, dtype=int).reshape(-1, 2) for f in self.footprints]
        if len(self.steps) != len(self.footprints):
            raise ValueError("steps and footprints differ in length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be strictly increasing")
        if self.steps and self.steps[0] <= 0:
            raise ValueError("steps must be positive")


@dataclass
class Conflict:
    step: int
    cell: tuple


def first_conflict(cand: CandidateTrajectory, P, margin=0, T=None):
    """Earliest (step, cell) where the map says the cell is taken by then, else None.

    Cells at the sentinel ``T`` (free for the whole horizon) never conflict.
    """
    P = np.asarray(P)
    T = Horizon().T if T is None else T
    h, w = P.shape
    for step, fp in zip(cand.steps, cand.footprints):
        if len(fp) == 0:
            continue
        r, c = fp[:, 0], fp[:, 1]
        if r.min() < 0 or c.min() < 0 or r.max() >= h or c.max() >= w:
            raise ValueError(f"footprint out of grid bounds at step {step}")
        v = P[r, c]
        hit = np.nonzero((v <= step + margin) & (v < T))[0]
        if len(hit):
            i = hit[0]
            return Conflict(step, (int(r[i]), int(c[i])))
    return None


def filter_safe(candidates, P, margin=0, T=None):
    """Split candidates into (safe, unsafe) where unsafe items are (candidate, Conflict).

    ``T`` is the horizon sentinel of ``P``; it defaults to the standard horizon.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    safe, unsafe = [], []
    for cand in candidates:
        conflict = first_conflict(cand, P, margin, T)
        if conflict is None:
            safe.append(cand)
        else:
            unsafe.append((cand, conflict))
    return safe, unsafe


def candidates_from_json(items) -> list:
    """Parse ``[{"name":..., "steps":[...], "footprints":[[[r,c],...],...]}, ...]``."""
    return [CandidateTrajectory(d["steps"], d["footprints"], d.get("name", str(i)))
            for i, d in enumerate(items)]
