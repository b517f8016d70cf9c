"""Hot loops of the planar walker.

Everything here works on flat float arrays so it compiles under numba; with
``WALKBO_DISABLE_JIT=1`` the same source runs as ordinary Python.
"""

import numpy as np

from walkbo._jit import njit

# layout of the packed configuration vector
I_MASS = 0
I_INERTIA = 1
I_COM = 2
I_MASS_NOM = 3
I_LEG = 4
I_ZDES = 5
I_THDES = 6
I_KPZ = 7
I_KDZ = 8
I_HORIZON = 9
I_DT = 10
I_ZMIN = 11
I_THMAX = 12
I_G = 13
I_V0 = 14
N_CFG = 15

# layout of the summary vector
S_TWALK = 0
S_ENERGY = 1
S_XTORSO = 2
S_ZTORSO = 3
S_THETA = 4
S_XCOM = 5
S_ZCOM = 6
S_VMEAN = 7
S_FELL = 8
S_XFALL = 9
N_SUMMARY = 10

TRIP_SAMPLES = 16


@njit
def ground_height(x, bx, bh):
    i = np.searchsorted(bx, x, side="right") - 1
    if i < 0:
        i = 0
    return bh[i]


@njit
def plan_touchdown(v, v_tgt, d, k, c, t_step):
    return k * (v - v_tgt) + c * d + 0.5 * v * t_step


@njit
def stance_forces(z_rel, theta, zdot, thetadot, kpt, kdt, kpz, kdz, z_des, theta_des):
    fx = kpt * (theta_des - theta) + kdt * (0.0 - thetadot)
    fz = kpz * (z_des - z_rel) + kdz * (0.0 - zdot)
    return fx, fz


@njit
def derivs(s, fx, fz, foot_x, foot_z, mass, inertia, g):
    out = np.empty(6)
    rx = foot_x - s[0]
    rz = foot_z - s[1]
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = fx / mass
    out[4] = fz / mass - g
    out[5] = (rx * fz - rz * fx) / inertia
    return out


@njit
def rk4_step(s, fx, fz, foot_x, foot_z, mass, inertia, g, dt):
    k1 = derivs(s, fx, fz, foot_x, foot_z, mass, inertia, g)
    k2 = derivs(s + 0.5 * dt * k1, fx, fz, foot_x, foot_z, mass, inertia, g)
    k3 = derivs(s + 0.5 * dt * k2, fx, fz, foot_x, foot_z, mass, inertia, g)
    k4 = derivs(s + dt * k3, fx, fz, foot_x, foot_z, mass, inertia, g)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit
def in_contact(s, foot_x, foot_z, com_offset, leg_max):
    hip_x = s[0] + com_offset * np.sin(s[2])
    hip_z = s[1] - com_offset * np.cos(s[2])
    if hip_z <= foot_z:
        return False
    dx = foot_x - hip_x
    dz = foot_z - hip_z
    return dx * dx + dz * dz <= leg_max * leg_max


@njit
def swing_coeffs(x0, z0, x1, z1, apex, retraction, t_step):
    """Quintic coefficients (ascending powers of normalized time) for the swing foot.

    x: rest-to-rest except for a terminal velocity of ``-retraction``;
    z: min-jerk blend between the two ground heights plus a symmetric bump
    that puts mid-swing at ``max(z0, z1) + apex``.
    """
    cx = np.zeros(6)
    cz = np.zeros(6)
    h = x1 - x0
    v1 = -retraction * t_step
    # x(s) = x0 + a3 s^3 + a4 s^4 + a5 s^5 with x(1)=x1, x'(1)=v1, x''(1)=0
    cx[0] = x0
    cx[3] = 10.0 * h - 4.0 * v1
    cx[4] = -15.0 * h + 7.0 * v1
    cx[5] = 6.0 * h - 3.0 * v1
    bump = max(z0, z1) + apex - 0.5 * (z0 + z1)
    dz = z1 - z0
    # 16 s^2 (1-s)^2 = 16 s^2 - 32 s^3 + 16 s^4
    cz[0] = z0
    cz[2] = 16.0 * bump
    cz[3] = 10.0 * dz - 32.0 * bump
    cz[4] = -15.0 * dz + 16.0 * bump
    cz[5] = 6.0 * dz
    return cx, cz


@njit
def poly5(c, s):
    return c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))))


@njit
def swing_trips(cx, cz, bx, bh):
    for j in range(1, TRIP_SAMPLES):
        s = j / TRIP_SAMPLES
        if poly5(cz, s) < ground_height(poly5(cx, s), bx, bh):
            return True
    return False


@njit
def rollout_core(phase_gains, kpt, kdt, apex, retraction, seg_steps, seg_v, cfg, bx, bh):
    """Simulate one rollout.

    phase_gains: (n_phase, 3) rows of (k, C, T); segment i uses row
    min(i, n_phase - 1).  seg_steps[i] is the number of steps spent in
    schedule segment i (the last segment never ends).

    Returns (summary[N_SUMMARY], segment_mean_speed[n_seg], segment_time[n_seg]).
    """
    mass = cfg[I_MASS]
    inertia = cfg[I_INERTIA]
    com = cfg[I_COM]
    mass_nom = cfg[I_MASS_NOM]
    leg_max = cfg[I_LEG]
    z_des = cfg[I_ZDES]
    th_des = cfg[I_THDES]
    kpz = cfg[I_KPZ]
    kdz = cfg[I_KDZ]
    horizon = cfg[I_HORIZON]
    dt = cfg[I_DT]
    z_min = cfg[I_ZMIN]
    th_max = cfg[I_THMAX]
    g = cfg[I_G]

    n_seg = seg_v.shape[0]
    n_phase = phase_gains.shape[0]
    seg_dist = np.zeros(n_seg)
    seg_time = np.zeros(n_seg)

    seg = 0
    steps_in_seg = 0
    phase = 0
    k = phase_gains[phase, 0]
    c_gain = phase_gains[phase, 1]
    t_step = phase_gains[phase, 2]

    v0 = cfg[I_V0] * seg_v[0]
    g0 = ground_height(0.0, bx, bh)
    s = np.zeros(6)
    s[1] = g0 + z_des
    s[2] = th_des
    s[3] = v0
    foot_x = 0.0
    foot_z = g0
    swing_x = -0.5 * v0 * t_step
    swing_z = ground_height(swing_x, bx, bh)
    clock = 0.5 * t_step

    n_steps = int(np.round(horizon / dt))
    energy = 0.0
    fell = False
    t_walk = horizon
    seg_x0 = 0.0

    for i in range(n_steps):
        fx = 0.0
        fz = 0.0
        if in_contact(s, foot_x, foot_z, com, leg_max):
            fx, fz = stance_forces(s[1] - foot_z, s[2], s[4], s[5], kpt, kdt, kpz, kdz, z_des, th_des)
            fz += mass_nom * g
            if fz <= 0.0:
                fz = 0.0
                fx = 0.0
        energy += (abs(fx * s[3]) + abs(fz * s[4])) * dt
        s = rk4_step(s, fx, fz, foot_x, foot_z, mass, inertia, g, dt)
        clock += dt
        seg_time[seg] += dt

        if s[1] - ground_height(s[0], bx, bh) < z_min or abs(s[2]) > th_max:
            fell = True
            t_walk = i * dt
            break

        if clock >= t_step - 1e-12:
            v = s[3]
            d = s[0] - foot_x
            xp = plan_touchdown(v, seg_v[seg], d, k, c_gain, t_step)
            new_x = s[0] + xp
            new_z = ground_height(new_x, bx, bh)
            cx, cz = swing_coeffs(swing_x, swing_z, new_x, new_z, apex, retraction, t_step)
            if swing_trips(cx, cz, bx, bh):
                fell = True
                t_walk = i * dt
                break
            swing_x = foot_x
            swing_z = foot_z
            foot_x = new_x
            foot_z = new_z
            clock = 0.0
            steps_in_seg += 1
            if seg < n_seg - 1 and steps_in_seg >= seg_steps[seg]:
                seg_dist[seg] = s[0] - seg_x0
                seg_x0 = s[0]
                seg += 1
                steps_in_seg = 0
                if seg < n_phase:
                    phase = seg
                k = phase_gains[phase, 0]
                c_gain = phase_gains[phase, 1]
                t_step = phase_gains[phase, 2]

    seg_dist[seg] = s[0] - seg_x0
    seg_speed = np.zeros(n_seg)
    for j in range(n_seg):
        if seg_time[j] > 0.0:
            seg_speed[j] = seg_dist[j] / seg_time[j]

    out = np.zeros(N_SUMMARY)
    out[S_TWALK] = t_walk
    out[S_ENERGY] = energy
    out[S_XTORSO] = s[0] + com * np.sin(s[2])
    out[S_ZTORSO] = s[1] - com * np.cos(s[2])
    out[S_THETA] = s[2]
    out[S_XCOM] = s[0]
    out[S_ZCOM] = s[1]
    if t_walk > 0.0:
        out[S_VMEAN] = s[0] / t_walk
    out[S_FELL] = 1.0 if fell else 0.0
    out[S_XFALL] = s[0] if fell else 0.0
    return out, seg_speed, seg_time


@njit
def rollout_batch(phase_gains, kpt, kdt, apex, retraction, seg_steps, seg_v, cfg, bx, bh):
    """Row-wise rollouts: phase_gains (n, n_phase, 3), other gains (n,).

    Segment speeds of segments never reached are NaN.
    """
    n = kpt.shape[0]
    out = np.zeros((n, N_SUMMARY))
    speeds = np.zeros((n, seg_v.shape[0]))
    for i in range(n):
        o, sp, st = rollout_core(phase_gains[i], kpt[i], kdt[i], apex[i], retraction[i],
                                 seg_steps, seg_v, cfg, bx, bh)
        out[i] = o
        for j in range(sp.shape[0]):
            speeds[i, j] = sp[j] if st[j] > 0.0 else np.nan
    return out, speeds
