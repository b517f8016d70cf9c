"""Locomotion cost functions and the softplus score transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from walkbo.sim.walker import TrajectorySummary

KINDS = ("atrias", "smooth", "nonsmooth")

# cost below which a rollout counts as walking, per cost kind
WALK_THRESHOLD = {"atrias": 20.0, "smooth": 0.2, "nonsmooth": 100.0}
# looser "any walking" threshold for the atrias cost
ATRIAS_WALKING = 50.0


@dataclass(frozen=True)
class CostSpec:
    kind: str = "atrias"
    v_tgt: float | tuple = 1.0
    fall_base: float = 100.0
    velocity_weight: float = 10.0
    time_weight: float = 1.0
    distance_weight: float = 0.3
    speed_weight: float = 0.01
    weight: float = 60.0 * 9.81   # N, normalizes cost of transport

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    @classmethod
    def default(cls, kind: str, v_tgt=1.0, **overrides) -> "CostSpec":
        base = {"atrias": dict(fall_base=100.0, velocity_weight=10.0),
                "smooth": dict(),
                "nonsmooth": dict(fall_base=300.0, velocity_weight=100.0)}[kind]
        base.update(overrides)
        return cls(kind=kind, v_tgt=v_tgt, **base)

    @property
    def threshold(self) -> float:
        return WALK_THRESHOLD[self.kind]

    @property
    def worst_case(self) -> float:
        """Cost recorded when an evaluation fails outright."""
        if self.kind == "smooth":
            return self.time_weight + self.distance_weight + self.speed_weight * 10.0
        return self.fall_base

    def targets(self, n: int) -> np.ndarray:
        v = np.atleast_1d(np.asarray(self.v_tgt, dtype=float))
        if v.size == 1:
            return np.full(n, v[0])
        return v[:n]

    @property
    def scalar_target(self) -> float:
        return float(np.atleast_1d(np.asarray(self.v_tgt, dtype=float))[0])


def _velocity_error(summary: TrajectorySummary, spec: CostSpec) -> np.ndarray:
    speeds = np.asarray(summary.segment_speeds, dtype=float)
    if speeds.size == 0:
        speeds = np.array([summary.v_mean])
    return spec.targets(speeds.size) - speeds


def cost_atrias(summary: TrajectorySummary, spec: CostSpec) -> float:
    if summary.fell:
        return spec.fall_base - summary.x_fall
    err = _velocity_error(summary, spec)
    return float(spec.velocity_weight * np.dot(err, err))


def cost_smooth(summary: TrajectorySummary, spec: CostSpec) -> float:
    # distance clamped at zero: the printed form has a pole at d = -1
    d = max(summary.x_torso, 0.0)
    t = summary.t_walk
    return (spec.time_weight / (1.0 + t) + spec.distance_weight / (1.0 + d)
            + spec.speed_weight * (summary.v_mean - spec.scalar_target))


def cost_of_transport(summary: TrajectorySummary, spec: CostSpec) -> float:
    return summary.energy / (spec.weight * summary.x_com)


def cost_nonsmooth(summary: TrajectorySummary, spec: CostSpec) -> float:
    if summary.fell:
        return spec.fall_base - summary.x_fall
    if summary.x_com <= 0.0:
        # no forward progress: cost of transport undefined, score as a fall at x_com
        return spec.fall_base - summary.x_com
    err = np.linalg.norm(_velocity_error(summary, spec))
    return float(spec.velocity_weight * err + cost_of_transport(summary, spec))


_COSTS = {"atrias": cost_atrias, "smooth": cost_smooth, "nonsmooth": cost_nonsmooth}


def evaluate(summary: TrajectorySummary, spec: CostSpec) -> float:
    return float(_COSTS[spec.kind](summary, spec))


def softplus(a):
    """ln(1 + e^a) without overflow."""
    a = np.asarray(a, dtype=float)
    out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
    return float(out) if out.ndim == 0 else out


def score_transform(cost, c_walk: float):
    """Reflected, shifted softplus: large for costs below ``c_walk``, ~0 far above it."""
    return softplus(c_walk - np.asarray(cost, dtype=float))
