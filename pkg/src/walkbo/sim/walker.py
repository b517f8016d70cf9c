"""Planar torso-on-massless-legs walker driven by a Raibert-style controller.

The plant is a rigid torso whose ground reaction force acts at the stance
foot.  Stance control applies PD laws for pitch (horizontal force) and CoM
height (vertical force, plus nominal-weight feedforward).  Foot placement
happens on a fixed step clock.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from walkbo.sim import _core

PERTURB_RANGE = 0.15
ROUGH_HEIGHT = 0.06
FLAT_SEED = 0


@dataclass(frozen=True)
class Bounds:
    low: tuple
    high: tuple

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("bounds need two equal-length, non-empty vectors")
        if not np.all(lo < hi):
            raise ValueError("every low bound must be strictly below its high bound")
        object.__setattr__(self, "low", tuple(float(v) for v in lo))
        object.__setattr__(self, "high", tuple(float(v) for v in hi))

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.low)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.high)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == (self.dim,) and bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def scale(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube into the box."""
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.scale(rng.random((n, self.dim)))


@dataclass(frozen=True)
class PerturbationFactors:
    mass_scale: float = 1.0
    inertia_scale: float = 1.0
    com_offset_scale: float = 1.0

    def __post_init__(self):
        for name in ("mass_scale", "inertia_scale", "com_offset_scale"):
            v = getattr(self, name)
            if not (1.0 - PERTURB_RANGE - 1e-12 <= v <= 1.0 + PERTURB_RANGE + 1e-12):
                raise ValueError(f"{name}={v} outside [0.85, 1.15]")


@dataclass(frozen=True)
class GroundProfile:
    """Piecewise-constant height field.

    ``heights[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``; the first
    breakpoint is always -inf.
    """

    breakpoints: tuple = (-np.inf,)
    heights: tuple = (0.0,)

    def __post_init__(self):
        if len(self.breakpoints) != len(self.heights) or not self.breakpoints:
            raise ValueError("breakpoints and heights must be non-empty and equal length")
        if self.breakpoints[0] != -np.inf:
            raise ValueError("first breakpoint must be -inf")
        if not all(a < b for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def flat(cls) -> "GroundProfile":
        return cls()

    @property
    def is_flat(self) -> bool:
        return len(self.heights) == 1 and self.heights[0] == 0.0

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.breakpoints, dtype=float), np.array(self.heights, dtype=float)

    def height(self, x: float) -> float:
        bx, bh = self.arrays()
        return float(_core.ground_height(float(x), bx, bh))


@dataclass(frozen=True)
class SimConfig:
    torso_mass: float = 60.0            # kg
    torso_inertia: float = 2.5          # kg m^2
    com_offset: float = 0.15            # m, hip to CoM along the torso axis
    leg_length: float = 1.05            # m, maximum hip-to-foot reach
    z_des: float = 0.9                  # m, CoM height above the stance foot
    theta_des: float = 0.0              # rad
    k_pz: float = 8000.0                # N/m
    k_dz: float = 1000.0                # N s/m
    schedule: tuple = ((1, 1.0),)       # (steps, v_tgt) segments; last one never ends
    horizon: float = 3.5                # s
    timestep: float = 1e-3              # s
    z_min: float | None = None          # m, defaults to 0.5 * z_des
    theta_max: float = 1.0              # rad
    gravity: float = 9.81               # m/s^2
    init_speed_ratio: float = 0.9
    family: str = "raibert5"
    swing_apex: float = 0.1             # m, used when the family does not optimize it
    swing_retraction: float = 0.0       # m/s, likewise
    perturbation: PerturbationFactors = field(default_factory=PerturbationFactors)
    ground: GroundProfile = field(default_factory=GroundProfile)

    def __post_init__(self):
        if self.timestep <= 0:
            raise ValueError("timestep must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not self.schedule:
            raise ValueError("target-speed schedule is empty")
        sched = tuple((int(n), float(v)) for n, v in self.schedule)
        if any(n < 1 for n, _ in sched[:-1]):
            raise ValueError("schedule segments need at least one step")
        object.__setattr__(self, "schedule", sched)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown controller family {self.family!r}")

    @property
    def fall_height(self) -> float:
        return 0.5 * self.z_des if self.z_min is None else self.z_min

    @property
    def mass(self) -> float:
        return self.torso_mass * self.perturbation.mass_scale

    @property
    def inertia(self) -> float:
        return self.torso_inertia * self.perturbation.inertia_scale

    @property
    def offset(self) -> float:
        return self.com_offset * self.perturbation.com_offset_scale

    @property
    def controller(self) -> "ControllerFamily":
        return FAMILIES[self.family]

    def packed(self) -> np.ndarray:
        v = np.zeros(_core.N_CFG)
        v[_core.I_MASS] = self.mass
        v[_core.I_INERTIA] = self.inertia
        v[_core.I_COM] = self.offset
        v[_core.I_MASS_NOM] = self.torso_mass
        v[_core.I_LEG] = self.leg_length
        v[_core.I_ZDES] = self.z_des
        v[_core.I_THDES] = self.theta_des
        v[_core.I_KPZ] = self.k_pz
        v[_core.I_KDZ] = self.k_dz
        v[_core.I_HORIZON] = self.horizon
        v[_core.I_DT] = self.timestep
        v[_core.I_ZMIN] = self.fall_height
        v[_core.I_THMAX] = self.theta_max
        v[_core.I_G] = self.gravity
        v[_core.I_V0] = self.init_speed_ratio
        return v

    def schedule_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        steps = np.array([n for n, _ in self.schedule], dtype=np.int64)
        speeds = np.array([v for _, v in self.schedule], dtype=float)
        return steps, speeds

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ground"] = {"breakpoints": [None if np.isinf(b) else b for b in self.ground.breakpoints],
                       "heights": list(self.ground.heights)}
        d["schedule"] = [list(s) for s in self.schedule]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ControllerFamily:
    """Maps a flat parameter vector to the gains the rollout kernel consumes.

    ``raibert5``: [k, C, T, K_pt, K_dt].
    ``extended``: per schedule phase [k_i, C_i, T_i] for three phases, then
    K_pt, K_dt, swing apex height [m], swing retraction speed [m/s].
    """

    name: str
    n_phases: int
    swing_params: bool
    bounds: Bounds

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def names(self) -> list[str]:
        if self.n_phases == 1 and not self.swing_params:
            return ["k", "C", "T", "K_pt", "K_dt"]
        out = []
        for i in range(self.n_phases):
            out += [f"k{i}", f"C{i}", f"T{i}"]
        return out + ["K_pt", "K_dt", "apex", "retraction"]

    def split(self, params: np.ndarray, cfg: SimConfig):
        """Return (phase_gains[n, n_phases, 3], kpt, kdt, apex, retraction) for a batch."""
        p = np.atleast_2d(np.asarray(params, dtype=float))
        n = p.shape[0]
        nph = self.n_phases
        gains = np.ascontiguousarray(p[:, : 3 * nph].reshape(n, nph, 3))
        kpt = np.ascontiguousarray(p[:, 3 * nph])
        kdt = np.ascontiguousarray(p[:, 3 * nph + 1])
        if self.swing_params:
            apex = np.ascontiguousarray(p[:, 3 * nph + 2])
            retr = np.ascontiguousarray(p[:, 3 * nph + 3])
        else:
            apex = np.full(n, cfg.swing_apex)
            retr = np.full(n, cfg.swing_retraction)
        return gains, kpt, kdt, apex, retr

    def phase_gains(self, params, phase: int = 0) -> tuple[float, float, float]:
        p = np.asarray(params, dtype=float)
        j = min(phase, self.n_phases - 1)
        return float(p[3 * j]), float(p[3 * j + 1]), float(p[3 * j + 2])

    def pitch_gains(self, params) -> tuple[float, float]:
        p = np.asarray(params, dtype=float)
        return float(p[3 * self.n_phases]), float(p[3 * self.n_phases + 1])


FAMILIES = {
    "raibert5": ControllerFamily(
        "raibert5", 1, False,
        Bounds((-1.0, -2.0, 0.05, 0.0, 0.0), (2.0, 2.0, 0.8, 4000.0, 1500.0))),
    "extended": ControllerFamily(
        "extended", 3, True,
        Bounds((-1.0, -2.0, 0.1) * 3 + (0.0, 0.0, 0.1, 0.0),
               (2.0, 2.0, 0.8) * 3 + (6000.0, 2000.0, 0.3, 2.0))),
}


@dataclass
class WalkerState:
    x: float
    z: float
    theta: float
    xdot: float
    zdot: float
    thetadot: float
    foot_x: float = 0.0
    foot_z: float = 0.0
    clock: float = 0.0
    swing_x: np.ndarray | None = None
    swing_z: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta, self.xdot, self.zdot, self.thetadot])

    @property
    def d(self) -> float:
        """Horizontal stance-foot-to-CoM distance."""
        return self.x - self.foot_x

    def mechanical_energy(self, mass: float, inertia: float, gravity: float) -> float:
        return (0.5 * mass * (self.xdot ** 2 + self.zdot ** 2)
                + 0.5 * inertia * self.thetadot ** 2 + mass * gravity * self.z)


@dataclass(frozen=True)
class TrajectorySummary:
    t_walk: float
    energy: float
    x_torso: float
    z_torso: float
    theta_torso: float
    x_com: float
    z_com: float
    v_mean: float
    fell: bool
    x_fall: float
    segment_speeds: tuple = ()

    FEATURES = ("t_walk", "energy", "x_torso", "z_torso", "theta_torso", "x_com", "z_com", "v_mean")

    def features(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FEATURES])

    @classmethod
    def from_array(cls, row, speeds=()) -> "TrajectorySummary":
        row = np.asarray(row, dtype=float)
        return cls(*(float(v) for v in row[:8]), bool(row[_core.S_FELL] > 0.5),
                   float(row[_core.S_XFALL]),
                   tuple(float(s) for s in speeds if np.isfinite(s)))


def plan_touchdown(state: WalkerState, params, v_tgt: float, family: ControllerFamily | None = None,
                   phase: int = 0) -> float:
    """Touchdown target relative to the current CoM x."""
    fam = family or FAMILIES["raibert5"]
    k, c, t_step = fam.phase_gains(params, phase)
    return float(_core.plan_touchdown(state.xdot, v_tgt, state.d, k, c, t_step))


def stance_forces(state: WalkerState, params, cfg: SimConfig) -> tuple[float, float]:
    """Pitch and height PD laws, without the weight feedforward."""
    kpt, kdt = cfg.controller.pitch_gains(params)
    fx, fz = _core.stance_forces(state.z - state.foot_z, state.theta, state.zdot, state.thetadot,
                                 kpt, kdt, cfg.k_pz, cfg.k_dz, cfg.z_des, cfg.theta_des)
    return float(fx), float(fz)


def step_dynamics(state: WalkerState, forces: tuple[float, float], cfg: SimConfig,
                  dt: float | None = None) -> WalkerState:
    """One RK4 step with the applied force (F_x, F_z) held at the stance foot."""
    dt = cfg.timestep if dt is None else dt
    fx, fz = forces
    s = _core.rk4_step(state.vector(), float(fx), float(fz), state.foot_x, state.foot_z,
                       cfg.mass, cfg.inertia, cfg.gravity, dt)
    return replace(state, x=s[0], z=s[1], theta=s[2], xdot=s[3], zdot=s[4], thetadot=s[5],
                   clock=state.clock + dt)


def check_params(params, cfg: SimConfig, bounds: Bounds | None = None) -> np.ndarray:
    bounds = bounds or cfg.controller.bounds
    p = np.atleast_2d(np.asarray(params, dtype=float))
    if p.shape[1] != bounds.dim:
        raise ValueError(f"expected {bounds.dim} parameters for family {cfg.family}, got {p.shape[1]}")
    bad = np.any((p < bounds.lo) | (p > bounds.hi), axis=1)
    if np.any(bad):
        raise ValueError(f"parameters outside bounds at row {int(np.argmax(bad))}")
    return p


def rollout_many(params, cfg: SimConfig, bounds: Bounds | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batch rollout. Returns (summaries[n, 10], segment_speeds[n, n_seg])."""
    p = check_params(params, cfg, bounds)
    gains, kpt, kdt, apex, retr = cfg.controller.split(p, cfg)
    steps, speeds = cfg.schedule_arrays()
    bx, bh = cfg.ground.arrays()
    return _core.rollout_batch(gains, kpt, kdt, apex, retr, steps, speeds, cfg.packed(), bx, bh)


def rollout(params, cfg: SimConfig, bounds: Bounds | None = None) -> TrajectorySummary:
    out, speeds = rollout_many(params, cfg, bounds)
    return TrajectorySummary.from_array(out[0], speeds[0])


def perturb(cfg: SimConfig, seed: int) -> SimConfig:
    rng = np.random.default_rng(seed)
    lo, hi = 1.0 - PERTURB_RANGE, 1.0 + PERTURB_RANGE
    f = rng.uniform(lo, hi, size=3)
    return replace(cfg, perturbation=PerturbationFactors(*(float(v) for v in f)))


def rough_ground(seed: int, extent: float = 20.0) -> GroundProfile:
    """Random step terrain; seed 0 is reserved for flat ground."""
    if extent <= 0:
        raise ValueError("extent must be positive")
    if seed == FLAT_SEED:
        return GroundProfile.flat()
    rng = np.random.default_rng(seed)
    xs = [-np.inf]
    hs = [float(rng.uniform(-ROUGH_HEIGHT, ROUGH_HEIGHT))]
    x = 0.0
    while x < extent:
        x += float(rng.uniform(0.3, 1.0))
        xs.append(x)
        hs.append(float(rng.uniform(-ROUGH_HEIGHT, ROUGH_HEIGHT)))
    return GroundProfile(tuple(xs), tuple(hs))
