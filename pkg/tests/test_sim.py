import json
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkbo.sim import (
    FAMILIES,
    GroundProfile,
    PerturbationFactors,
    SimConfig,
    WalkerState,
    perturb,
    plan_touchdown,
    rollout,
    rollout_many,
    rough_ground,
    stance_forces,
    step_dynamics,
)
from walkbo.sim import _core

# Located by a coarse grid search over (k, C, T) at fixed pitch gains; every
# neighbour on that grid also walks, so the point is not a knife-edge.
STABLE_GAINS = (0.5, -0.25, 0.25, 1500.0, 400.0)
fin = st.floats(-5, 5, allow_nan=False)


def state(**kw):
    base = dict(x=0.0, z=0.9, theta=0.0, xdot=0.0, zdot=0.0, thetadot=0.0)
    base.update(kw)
    return WalkerState(**base)


class TestTouchdown:
    def test_worked_example(self):
        s = state(xdot=1.0, x=0.05)
        xp = plan_touchdown(s, (0.2, 0.1, 0.35, 0, 0), 0.4)
        assert xp == pytest.approx(0.2 * 0.6 + 0.1 * 0.05 + 0.5 * 0.35, abs=1e-15)
        assert xp == pytest.approx(0.3, abs=1e-12)

    def test_feedback_terms_vanish_on_target(self):
        s = state(xdot=0.8)
        assert plan_touchdown(s, (3.0, -2.0, 0.4, 0, 0), 0.8) == pytest.approx(0.5 * 0.8 * 0.4)

    def test_all_zero_gains(self):
        assert plan_touchdown(state(xdot=1.3, x=0.2), (0, 0, 0, 0, 0), 0.5) == 0.0

    @given(v=fin, vt=fin, d=fin, k=fin, c=fin, t=st.floats(0, 2))
    def test_linear_with_exact_coefficients(self, v, vt, d, k, c, t):
        got = _core.plan_touchdown(v, vt, d, k, c, t)
        assert got == pytest.approx(k * (v - vt) + c * d + 0.5 * v * t, abs=1e-9)

    def test_extended_family_uses_phase_gains(self):
        fam = FAMILIES["extended"]
        p = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.45, 0, 0, 0.1, 0])
        s = state(xdot=1.0, x=0.1)
        assert plan_touchdown(s, p, 1.0, fam, phase=1) == pytest.approx(0.5 * 0.1 + 0.5 * 0.6)
        # phases past the last reuse the last phase's gains
        assert plan_touchdown(s, p, 1.0, fam, phase=7) == plan_touchdown(s, p, 1.0, fam, phase=2)


class TestStanceForces:
    cfg = SimConfig(k_pz=2000.0, k_dz=0.0, z_des=0.9)

    def test_zero_error_gives_zero(self):
        assert stance_forces(state(z=0.9), (0, 0, 0.3, 100, 10), SimConfig()) == (0.0, 0.0)

    def test_pitch_law(self):
        fx, _ = stance_forces(state(theta=0.1), (0, 0, 0.3, 100.0, 0.0), self.cfg)
        assert fx == pytest.approx(-10.0)

    def test_height_law(self):
        _, fz = stance_forces(state(z=0.85), (0, 0, 0.3, 0, 0), self.cfg)
        assert fz == pytest.approx(100.0)

    def test_height_measured_from_stance_foot(self):
        s = state(z=0.95, foot_z=0.05)
        assert stance_forces(s, (0, 0, 0.3, 0, 0), self.cfg)[1] == pytest.approx(0.0, abs=1e-12)

    @given(th=fin, thd=fin, kp=st.floats(0, 1e4), kd=st.floats(0, 1e4))
    def test_pitch_pd_form(self, th, thd, kp, kd):
        fx, _ = _core.stance_forces(0.9, th, 0.0, thd, kp, kd, 0.0, 0.0, 0.9, 0.0)
        assert fx == pytest.approx(kp * (0.0 - th) - kd * thd, rel=1e-12, abs=1e-9)


class TestDynamics:
    cfg = SimConfig()

    def test_ballistic_velocity(self):
        s = state(z=2.0, xdot=1.0, zdot=0.5, thetadot=0.3)
        for _ in range(1000):
            s = step_dynamics(s, (0.0, 0.0), self.cfg)
        assert s.zdot == pytest.approx(0.5 - 9.81 * 1.0, abs=1e-9)
        assert s.z == pytest.approx(2.0 + 0.5 - 0.5 * 9.81, abs=1e-9)
        assert s.x == pytest.approx(1.0, abs=1e-9)
        assert s.theta == pytest.approx(0.3, abs=1e-9)

    def test_flight_energy_drift(self):
        s = state(z=3.0, xdot=0.7, zdot=2.0, thetadot=-1.1)
        m, inertia, g = self.cfg.mass, self.cfg.inertia, self.cfg.gravity
        e0 = s.mechanical_energy(m, inertia, g)
        for _ in range(1000):
            s = step_dynamics(s, (0.0, 0.0), self.cfg)
        assert abs(s.mechanical_energy(m, inertia, g) - e0) / e0 <= 1e-6

    def test_weight_support_holds_height(self):
        s = state(z=0.9)
        for _ in range(500):
            s = step_dynamics(s, (0.0, self.cfg.mass * self.cfg.gravity), self.cfg)
        assert s.z == pytest.approx(0.9, abs=1e-12)
        assert s.zdot == pytest.approx(0.0, abs=1e-12)

    def test_off_axis_force_produces_torque(self):
        # foot ahead of the CoM: upward force pitches the torso backward (negative)
        s = replace(state(z=0.9), foot_x=0.2, foot_z=0.0)
        s1 = step_dynamics(s, (0.0, 100.0), self.cfg)
        assert s1.thetadot > 0.0 or s1.thetadot < 0.0
        r_x, r_z = 0.2, -0.9
        expected = (r_x * 100.0 - r_z * 0.0) / self.cfg.inertia
        assert s1.thetadot == pytest.approx(expected * self.cfg.timestep, rel=1e-9)


class TestRollout:
    def test_stable_gain_set_walks_near_target(self):
        out = rollout(STABLE_GAINS, SimConfig())
        assert not out.fell
        assert out.t_walk == SimConfig().horizon
        assert abs(out.v_mean - 1.0) < 0.3

    def test_degenerate_gains_fall_immediately(self):
        out = rollout((-1.0, 2.0, 0.8, 0.0, 0.0), SimConfig())
        assert out.fell
        assert out.t_walk < 1.0
        assert abs(out.x_fall) < 1.0

    def test_bitwise_determinism(self):
        p = FAMILIES["raibert5"].bounds.uniform(np.random.default_rng(3), 20)
        a, sa = rollout_many(p, SimConfig())
        b, sb = rollout_many(p, SimConfig())
        assert a.tobytes() == b.tobytes()
        assert np.array_equal(sa, sb, equal_nan=True)

    def test_rejects_out_of_bounds(self):
        with pytest.raises(ValueError, match="outside bounds"):
            rollout((10.0, 0.0, 0.3, 0.0, 0.0), SimConfig())
        with pytest.raises(ValueError, match="expected 5"):
            rollout((0.0, 0.0, 0.3), SimConfig())

    def test_summary_invariants_on_random_batch(self):
        cfg = SimConfig()
        p = FAMILIES["raibert5"].bounds.uniform(np.random.default_rng(0), 300)
        out, _ = rollout_many(p, cfg)
        t = out[:, _core.S_TWALK]
        fell = out[:, _core.S_FELL] > 0.5
        assert np.all((t >= 0) & (t <= cfg.horizon))
        assert np.all(t[fell] < cfg.horizon)
        assert np.all(t[~fell] == cfg.horizon)
        assert np.all(out[:, _core.S_ENERGY] >= 0)
        assert np.all(out[fell, _core.S_XFALL] == out[fell, _core.S_XCOM])
        # hip sits com_offset below the CoM along the torso axis
        th = out[:, _core.S_THETA]
        np.testing.assert_allclose(out[:, _core.S_XCOM] + cfg.com_offset * np.sin(th), out[:, _core.S_XTORSO])
        np.testing.assert_allclose(out[:, _core.S_ZCOM] - cfg.com_offset * np.cos(th), out[:, _core.S_ZTORSO])

    def test_extended_family_reports_segment_speeds(self):
        fam = FAMILIES["extended"]
        p = np.array(STABLE_GAINS[:3] * 3 + (1500.0, 400.0, 0.15, 0.5))
        cfg = SimConfig(family="extended", schedule=((4, 0.8), (4, 1.0), (1, 1.2)), horizon=5.0)
        out = rollout(p, cfg)
        assert fam.dim == 13
        assert not out.fell
        assert len(out.segment_speeds) == 3

    def test_ridge_between_footholds_trips_low_swing(self):
        cfg = SimConfig(family="extended", schedule=((4, 1.0),), horizon=3.0)
        ridge = replace(cfg, ground=GroundProfile((-np.inf, 0.7, 0.78), (0.0, 0.15, 0.0)))
        low = np.array(STABLE_GAINS[:3] * 3 + (1500.0, 400.0, 0.1, 0.0))
        high = np.r_[low[:11], 0.3, low[12]]
        assert not rollout(low, cfg).fell
        tripped = rollout(low, ridge)
        assert tripped.fell and tripped.t_walk < 1.0
        assert not rollout(high, ridge).fell


class TestSwing:
    def test_endpoints_and_apex(self):
        cx, cz = _core.swing_coeffs(0.0, 0.0, 0.6, 0.04, 0.1, 0.0, 0.25)
        assert _core.poly5(cx, 0.0) == 0.0 and _core.poly5(cx, 1.0) == pytest.approx(0.6)
        assert _core.poly5(cz, 0.0) == 0.0 and _core.poly5(cz, 1.0) == pytest.approx(0.04)
        assert _core.poly5(cz, 0.5) == pytest.approx(0.14)

    def test_trip_only_when_obstacle_pokes_through(self):
        bx, bh = np.array([-np.inf, 0.25, 0.35]), np.array([0.0, 0.08, 0.0])
        low = _core.swing_coeffs(0.0, 0.0, 0.6, 0.0, 0.05, 0.0, 0.25)
        high = _core.swing_coeffs(0.0, 0.0, 0.6, 0.0, 0.2, 0.0, 0.25)
        assert _core.swing_trips(*low, bx, bh)
        assert not _core.swing_trips(*high, bx, bh)

    @given(z0=st.floats(-0.06, 0.06), z1=st.floats(-0.06, 0.06), apex=st.floats(0.1, 0.3),
           h=st.floats(0.05, 1.5))
    def test_never_trips_on_a_single_step(self, z0, z1, apex, h):
        bx, bh = np.array([-np.inf, h / 2]), np.array([z0, z1])
        cx, cz = _core.swing_coeffs(0.0, z0, h, z1, apex, 0.0, 0.25)
        assert not _core.swing_trips(cx, cz, bx, bh)


class TestPerturbation:
    def test_bounds_and_mean(self):
        f = np.array([[getattr(perturb(SimConfig(), s).perturbation, a) for a in
                       ("mass_scale", "inertia_scale", "com_offset_scale")] for s in range(10_000)])
        assert f.min() >= 0.85 and f.max() <= 1.15
        assert abs(f[:, 0].mean() - 1.0) <= 0.01

    def test_deterministic(self):
        assert perturb(SimConfig(), 42) == perturb(SimConfig(), 42)

    def test_scales_physical_parameters(self):
        c = perturb(SimConfig(), 7)
        assert c.mass == pytest.approx(60.0 * c.perturbation.mass_scale)
        assert c.packed()[_core.I_MASS_NOM] == 60.0

    def test_factor_validation(self):
        with pytest.raises(ValueError):
            PerturbationFactors(1.2, 1.0, 1.0)


class TestRoughGround:
    @settings(max_examples=200)
    @given(seed=st.integers(1, 2**31))
    def test_profile_properties(self, seed):
        g = rough_ground(seed, 15.0)
        h = np.array(g.heights)
        b = np.array(g.breakpoints[1:])
        assert np.all(np.abs(h) <= 0.06)
        assert np.all(np.diff(b) >= 0.3 - 1e-12) and np.all(np.diff(b) <= 1.0 + 1e-12)
        assert b[0] >= 0.3 and b[-1] >= 15.0

    def test_seed_zero_is_flat(self):
        g = rough_ground(0)
        assert g.is_flat and g.height(123.0) == 0.0

    def test_repeatable_and_prefix_stable(self):
        a, b = rough_ground(5, 10.0), rough_ground(5, 30.0)
        assert rough_ground(5, 10.0) == a
        n = len(a.breakpoints)
        assert b.breakpoints[:n] == a.breakpoints and b.heights[:n] == a.heights

    def test_height_lookup(self):
        g = GroundProfile((-np.inf, 1.0, 2.0), (0.0, 0.05, -0.02))
        assert [g.height(x) for x in (0.5, 1.0, 1.5, 2.5)] == [0.0, 0.05, 0.05, -0.02]


FALLBACK_SCRIPT = """
import json, numpy as np
from walkbo.sim import SimConfig, FAMILIES, rollout_many, rough_ground
from walkbo._jit import JIT_DISABLED
p = FAMILIES['raibert5'].bounds.uniform(np.random.default_rng(11), 6)
out, sp = rollout_many(p, SimConfig(ground=rough_ground(4)))
print(json.dumps({'jit_disabled': JIT_DISABLED, 'out': out.tolist()}))
"""


def test_python_fallback_matches_jit():
    res = {}
    for flag in ("0", "1"):
        env = dict(os.environ, WALKBO_DISABLE_JIT=flag)
        proc = subprocess.run([sys.executable, "-c", FALLBACK_SCRIPT], env=env, capture_output=True,
                              text=True, check=True, timeout=600)
        res[flag] = json.loads(proc.stdout)
    assert res["1"]["jit_disabled"] and not res["0"]["jit_disabled"]
    np.testing.assert_allclose(res["0"]["out"], res["1"]["out"], rtol=0, atol=1e-9)
