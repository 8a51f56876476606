"""Closed loop gait episodes: plant, observer, controller, wearer, scorer.

One episode integrates the slow subsystem of the two time scale design:
the rotor is slaved to the spring's quasi steady manifold, so link and
rotor accelerate together, (M(q) + B) qdd + C qd + g = u + tau_e, and the
spring transmits tau_o = u - B qdd (theta = q + tau_o / K, thetad = qd,
which idles the fast damping term by construction).  The spring mode
itself is the boundary layer: its stability is certified separately by
controller.boundary_layer_check, and resolving it explicitly would hinge
on rotor friction that the plant model deliberately omits.  Everything
the episode measures, impedance tracking, observer convergence, anomaly
response, lives in the slow subsystem.  The full coupled SEA dynamics
remain available through dynamics.step for open loop work.

The plant and the disturbance observer are co-integrated in a single RK4
pass; the observer's error subsystem is homogeneous along the joint flow,
so co-integration preserves the zero-disturbance manifold that separate
stepping destroys.  The motor torque is held constant over each control
interval (1 kHz by default) and the wearer's intent is sampled at the RK4
stage times from tables precomputed on a half-step grid.

Slower machinery runs on the log stride (100 Hz by default): state
logging, the adaptive oscillator bank that tracks gait phase, and anomaly
scoring over a trailing window of estimated interaction torque plus per
joint phase.  Scores latch between updates and pass through a first order
filter, which turns the staircase into the smooth s(t), sdot(t) the
controller needs for w and its slope.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import controller, dmp, dynamics, observer, wearer
from .errors import NumericalDivergence

# |q| or |qdot| beyond this aborts the episode as diverged
STATE_LIMIT = 1e4
# default sampling ranges for the observer gain bounds
Q_RANGE_DEFAULT = (-1.5, 1.5)
QD_RANGE_DEFAULT = (-6.0, 6.0)
# commanded torque continuity bound for clean (conflict-free) runs, N*m
CLEAN_STEP_DU_BOUND = 1.0


@dataclass(frozen=True)
class EpisodeLog:
    """Episode record sampled at the log stride.

    Arrays are (T,) or (T, n).  q_d/qdot_d hold the commanded reference
    in impedance mode and the wearer's clean intent in transparent mode
    (there is no command to log, and the intent is the natural tracking
    reference for analysis).  phase is the per joint oscillator phase
    wrapped to [0, 2pi); fused_phase is the unwrapped across-joint mean
    that heel strike extraction needs.  s is the filtered anomaly score
    actually used by the controller, w its tanh weighting.
    """

    t: np.ndarray
    q: np.ndarray
    q_d: np.ndarray
    tau_e: np.ndarray
    tau_e_hat: np.ndarray
    z: np.ndarray
    s: np.ndarray
    w: np.ndarray
    u: np.ndarray
    saturated: np.ndarray
    qdot: np.ndarray
    qdot_d: np.ndarray
    phase: np.ndarray
    fused_phase: np.ndarray
    omega: np.ndarray
    heel_strikes: np.ndarray
    mode: str
    log_dt: float
    max_step_du: float

    @property
    def n_joints(self):
        return self.q.shape[1]


def _desired_tables(desired, omega, phase_offsets, duration, dt, n, n_steps,
                    q0, qd0):
    """Normalize the reference input to (q_d, qd_d, qdd_d) step tables.

    Model rollouts are seeded at the plant's initial state so the
    reference engages where the wearer already is and converges onto
    the primitive's own cycle instead of stepping to it.
    """
    if isinstance(desired, dmp.DmpModel):
        if desired.klass == dmp.RHYTHMIC:
            traj = dmp.integrate_output(desired, omega=omega,
                                        total_time=duration, dt=dt,
                                        phase_offsets=phase_offsets,
                                        q0=q0, qd0=qd0)
        else:
            traj = dmp.integrate_output(desired, total_time=duration, dt=dt,
                                        q0=q0, qd0=qd0)
        tabs = (traj.q, traj.qd, traj.qdd)
    elif isinstance(desired, dmp.DmpTrajectory):
        tabs = (desired.q, desired.qd, desired.qdd)
    else:
        tabs = tuple(np.asarray(a, dtype=np.float64) for a in desired)
        if len(tabs) != 3:
            raise ValueError("desired tables must be (q_d, qd_d, qdd_d)")
    for a in tabs:
        if a.ndim != 2 or a.shape[1] != n:
            raise ValueError("desired tables must be (steps, n_joints)")
        if a.shape[0] < n_steps + 1:
            raise ValueError("desired tables shorter than the episode")
    return tabs


def _resolve_observer(obs, p, qd0):
    if obs is None:
        s1, s2 = observer.compute_bounds(p, Q_RANGE_DEFAULT, QD_RANGE_DEFAULT)
        return observer.make_observer(s1, s2, p.n_joints, qdot0=qd0)
    if isinstance(obs, tuple):
        s1, s2 = obs
        return observer.make_observer(s1, s2, p.n_joints, qdot0=qd0)
    return obs


def run_episode(p, profile, task, *, duration, desired=None, cfg=None,
                obs=None, conflict=None, scorer=None, score_window=50,
                score_stride=10, omega=None, phase_offsets=None, bank=None,
                dt=1e-3, log_stride=10, q0=None, qd0=None):
    """Simulate one bout against a simulated wearer and return its log.

    desired selects the mode.  None runs the robot transparent (gravity
    feedforward only; the wearer drags the reflected inertia through
    their own impedance).  A rhythmic DmpModel, a DmpTrajectory, or a
    (q_d, qd_d, qdd_d) tuple of step tables runs the variable impedance
    controller against that reference; rhythmic models play back at
    `omega` (default 2*pi*cadence) with optional per joint
    phase_offsets.

    obs may be an ObserverState, a (sigma1, sigma2) bound pair, or None
    to estimate bounds from the plant.  scorer, if given, is called
    every score_stride log samples with the trailing (score_window, 2n)
    array of [tau_e_hat joints..., wrapped phase joints...] and must
    return a finite nonnegative score; the result latches until the
    next call.  Raises NumericalDivergence if the state leaves the
    finite band, which the HIL loop converts into a penalty cost.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    if log_stride < 1:
        raise ValueError("log_stride must be >= 1")
    n = p.n_joints
    if profile.n_joints != n:
        raise ValueError("profile and plant disagree on joint count")
    cfg = controller.ImpedanceConfig() if cfg is None else cfg
    if omega is None:
        omega = 2.0 * np.pi * profile.cadence_hz
    n_steps = int(round(duration / dt))
    transparent = desired is None

    # wearer intent on the half-step grid covers every RK4 stage time
    t_half = 0.5 * dt * np.arange(2 * n_steps + 1)
    qh_e, qdh_e, ks_e = wearer.intent_tables(profile, task, t_half, conflict)
    kh, ch = profile.k_h, profile.c_h

    q = wearer.intended_trajectory(profile, task, 0.0) if q0 is None \
        else np.array(q0, dtype=np.float64)
    qd = wearer.intended_velocity(profile, task, 0.0) if qd0 is None \
        else np.array(qd0, dtype=np.float64)
    if not transparent:
        q_d_tab, qd_d_tab, qdd_d_tab = _desired_tables(
            desired, omega, phase_offsets, duration, dt, n, n_steps, q, qd)
    obs = _resolve_observer(obs, p, qd)
    y = obs.y.copy()
    a_inv = obs.a_inv
    if bank is None:
        bank = dmp.make_oscillator_bank(n, omega)

    kspring = p.k_spring
    rotor = np.broadcast_to(p.rotor_inertia, (n,))
    rotor_m = np.diag(rotor)
    tau_o = dynamics.gravity_vec(p, q)
    decoupled = p.coupling == "decoupled" or n == 1
    if decoupled:
        mdiag = p.masses * p.coms**2 + p.inertias
        mgc = p.masses * p.gravity * p.coms

    def rhs(i, q, qd, y, u):
        # slow subsystem: rotor slaved to the quasi steady spring manifold
        tau_e = ks_e[i] * kh * (qh_e[i] - q) + ch * (qdh_e[i] - qd)
        if decoupled:
            grav = mgc * np.sin(q)
            qdd = (u + tau_e - grav) / (mdiag + rotor)
            tau_o = u - rotor * qdd
            ydot = -a_inv * (y + tau_o - grav + a_inv * qd) / mdiag
        else:
            m = dynamics.mass_matrix(p, q)
            cor_qd = dynamics.coriolis(p, q, qd) @ qd
            grav = dynamics.gravity_vec(p, q)
            qdd = np.linalg.solve(m + rotor_m, u + tau_e - cor_qd - grav)
            tau_o = u - rotor * qdd
            ydot = -a_inv * np.linalg.solve(
                m, y + tau_o - cor_qd - grav + a_inv * qd)
        return qd, qdd, ydot, tau_o

    n_logs = n_steps // log_stride + 1
    L = {name: np.empty((n_logs, n)) for name in
         ("q", "q_d", "tau_e", "tau_e_hat", "z", "u", "qdot", "qdot_d",
          "phase")}
    s_log = np.empty(n_logs)
    w_log = np.empty(n_logs)
    sat_log = np.zeros(n_logs, dtype=bool)
    fused_log = np.empty(n_logs)
    omega_log = np.empty(n_logs)
    t_log = dt * log_stride * np.arange(n_logs)
    if transparent:
        qh_clean = wearer.intended_trajectory(profile, task, t_log)
        qdh_clean = wearer.intended_velocity(profile, task, t_log)

    filt = controller.ScoreFilter(cfg.score_cutoff_hz)
    s_latch = 0.0
    max_du = 0.0
    u_prev = None
    q_hold = q.copy()
    zeros = np.zeros(n)
    h2 = 0.5 * dt
    dt_osc = dt * log_stride

    for k in range(n_steps + 1):
        tau_hat = y + a_inv * qd
        s_f, sdot = filt.update(s_latch, dt)
        if transparent:
            u_raw = dynamics.gravity_vec(p, q)
            u = np.clip(u_raw, -cfg.u_max, cfg.u_max)
            sat = bool(np.any(u != u_raw))
            z_now = zeros
            w_now = float(controller.weighting(cfg, s_f))
        else:
            state = dynamics.RobotState(q, qd, q + tau_o / kspring, qd, k * dt)
            res = controller.control_step(
                cfg, p, state, q_d_tab[k], qd_d_tab[k], qdd_d_tab[k],
                tau_hat, s_f, sdot)
            u, sat, z_now, w_now = res.u, res.saturated, res.z, res.w
        if u_prev is not None:
            max_du = max(max_du, float(np.max(np.abs(u - u_prev))))
        u_prev = u

        if k % log_stride == 0:
            j = k // log_stride
            if k > 0:
                bank = dmp.oscillator_step(bank, q_hold, dt_osc)
                q_hold = q.copy()
            i0 = 2 * k
            L["q"][j] = q
            L["qdot"][j] = qd
            L["q_d"][j] = qh_clean[j] if transparent else q_d_tab[k]
            L["qdot_d"][j] = qdh_clean[j] if transparent else qd_d_tab[k]
            L["tau_e"][j] = ks_e[i0] * kh * (qh_e[i0] - q) + ch * (qdh_e[i0] - qd)
            L["tau_e_hat"][j] = tau_hat
            L["z"][j] = z_now
            L["u"][j] = u
            L["phase"][j] = np.mod(bank.phases[:, 1], 2.0 * np.pi)
            s_log[j] = s_f
            w_log[j] = w_now
            sat_log[j] = sat
            fused_log[j] = float(np.mean(bank.phases[:, 1]))
            omega_log[j] = dmp.fused_frequency(bank)
            if (scorer is not None and j + 1 >= score_window
                    and (j + 1 - score_window) % score_stride == 0):
                win = np.concatenate(
                    [L["tau_e_hat"][j + 1 - score_window:j + 1],
                     L["phase"][j + 1 - score_window:j + 1]], axis=1)
                s_new = float(scorer(win))
                if not np.isfinite(s_new) or s_new < 0:
                    raise ValueError("scorer must return a finite "
                                     "nonnegative value")
                s_latch = s_new

        if k == n_steps:
            break
        i0 = 2 * k
        a1 = rhs(i0, q, qd, y, u)
        a2 = rhs(i0 + 1, q + h2 * a1[0], qd + h2 * a1[1], y + h2 * a1[2], u)
        a3 = rhs(i0 + 1, q + h2 * a2[0], qd + h2 * a2[1], y + h2 * a2[2], u)
        a4 = rhs(i0 + 2, q + dt * a3[0], qd + dt * a3[1], y + dt * a3[2], u)
        q = q + dt / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0])
        qd = qd + dt / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1])
        y = y + dt / 6.0 * (a1[2] + 2.0 * a2[2] + 2.0 * a3[2] + a4[2])
        tau_o = a4[3]
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))
                and np.all(np.isfinite(y))
                and np.max(np.abs(q)) < STATE_LIMIT
                and np.max(np.abs(qd)) < STATE_LIMIT):
            raise NumericalDivergence(
                "episode diverged at t=%.4f" % ((k + 1) * dt))

    try:
        heel = wearer.heel_strikes(t_log, fused_log)
    except ValueError:
        heel = np.empty(0)
    return EpisodeLog(
        t=t_log, q=L["q"], q_d=L["q_d"], tau_e=L["tau_e"],
        tau_e_hat=L["tau_e_hat"], z=L["z"], s=s_log, w=w_log, u=L["u"],
        saturated=sat_log, qdot=L["qdot"], qdot_d=L["qdot_d"],
        phase=L["phase"], fused_phase=fused_log, omega=omega_log,
        heel_strikes=heel, mode="transparent" if transparent else "impedance",
        log_dt=dt * log_stride, max_step_du=max_du)


# ---------------------------------------------------------------------------
# analysis helpers


def slice_log(log, t0, t1):
    """Sub-log over t0 <= t <= t1 (heel strikes filtered to the window)."""
    mask = (log.t >= t0) & (log.t <= t1)
    if not np.any(mask):
        raise ValueError("empty time window")
    hs = log.heel_strikes
    return replace(
        log, t=log.t[mask], q=log.q[mask], q_d=log.q_d[mask],
        tau_e=log.tau_e[mask], tau_e_hat=log.tau_e_hat[mask],
        z=log.z[mask], s=log.s[mask], w=log.w[mask], u=log.u[mask],
        saturated=log.saturated[mask], qdot=log.qdot[mask],
        qdot_d=log.qdot_d[mask], phase=log.phase[mask],
        fused_phase=log.fused_phase[mask], omega=log.omega[mask],
        heel_strikes=hs[(hs >= t0) & (hs <= t1)])


def tracking_rmse(log, t_min=0.0):
    """RMSE of q - q_d (radians) pooled over joints, from t_min on."""
    m = log.t >= t_min
    return float(np.sqrt(np.mean((log.q[m] - log.q_d[m]) ** 2)))


def mean_score(log, t_min=0.0):
    m = log.t >= t_min
    return float(np.mean(log.s[m]))


def mean_z_norm(log, t_min=0.0):
    """Time average of ||z|| (rad/s) from t_min on."""
    m = log.t >= t_min
    return float(np.mean(np.linalg.norm(log.z[m], axis=1)))


def realized_impedance(log, t_min=2.0):
    """Per joint least squares fit tau_e_hat ~ c*(qdot - qdot_d) + k*(q - q_d).

    In steady cyclic operation with z held near zero the fit recovers
    w(s)*C_d and w(s)*K_d.  Returns (c_hat, k_hat), each (n,).
    """
    m = log.t >= t_min
    ev = log.qdot[m] - log.qdot_d[m]
    ep = log.q[m] - log.q_d[m]
    tau = log.tau_e_hat[m]
    n = log.n_joints
    c_hat = np.empty(n)
    k_hat = np.empty(n)
    for i in range(n):
        x = np.column_stack([ev[:, i], ep[:, i]])
        beta, *_ = np.linalg.lstsq(x, tau[:, i], rcond=None)
        c_hat[i], k_hat[i] = beta
    return c_hat, k_hat


# ---------------------------------------------------------------------------
# CSV interchange


def _fmt(v):
    return repr(float(v))


def _header_names(n):
    def cols(stem):
        return [f"{stem}{i}" for i in range(n)]
    return (["t"] + cols("q") + cols("q_d") + cols("tau_e")
            + cols("tau_e_hat") + cols("z") + ["s", "w"] + cols("u")
            + ["saturated"] + cols("qdot") + cols("qdot_d") + cols("phase")
            + ["fused_phase", "omega"])


def episode_to_csv(log, path_or_fh, config_hash="unconfigured", seed=0):
    """Write the log with provenance comments and a documented header."""
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w") if own else path_or_fh
    try:
        fh.write("# config_hash=%s seed=%d\n" % (config_hash, int(seed)))
        fh.write("# mode=%s n_joints=%d log_dt=%s max_step_du=%s\n"
                 % (log.mode, log.n_joints, _fmt(log.log_dt),
                    _fmt(log.max_step_du)))
        fh.write("# heel_strikes=%s\n"
                 % ";".join(_fmt(v) for v in log.heel_strikes))
        fh.write(",".join(_header_names(log.n_joints)) + "\n")
        for j in range(log.t.size):
            row = ([_fmt(log.t[j])] + [_fmt(v) for v in log.q[j]]
                   + [_fmt(v) for v in log.q_d[j]]
                   + [_fmt(v) for v in log.tau_e[j]]
                   + [_fmt(v) for v in log.tau_e_hat[j]]
                   + [_fmt(v) for v in log.z[j]]
                   + [_fmt(log.s[j]), _fmt(log.w[j])]
                   + [_fmt(v) for v in log.u[j]]
                   + [str(int(log.saturated[j]))]
                   + [_fmt(v) for v in log.qdot[j]]
                   + [_fmt(v) for v in log.qdot_d[j]]
                   + [_fmt(v) for v in log.phase[j]]
                   + [_fmt(log.fused_phase[j]), _fmt(log.omega[j])])
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()


def _parse_kv(line, prefix="# "):
    out = {}
    for item in line[len(prefix):].strip().split():
        key, _, val = item.partition("=")
        out[key] = val
    return out


def episode_from_csv(path_or_fh):
    """Read a log written by episode_to_csv; returns (log, provenance)."""
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "r") if own else path_or_fh
    try:
        lines = fh.read().splitlines()
    finally:
        if own:
            fh.close()
    if len(lines) < 4 or not lines[0].startswith("# config_hash="):
        raise ValueError("not an episode CSV")
    prov = _parse_kv(lines[0])
    meta = _parse_kv(lines[1])
    hs_text = lines[2].partition("=")[2]
    heel = np.array([float(v) for v in hs_text.split(";") if v]) \
        if hs_text else np.empty(0)
    n = int(meta["n_joints"])
    header = lines[3].split(",")
    if header != _header_names(n):
        raise ValueError("unexpected column layout")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[4:]])
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError("malformed data rows")
    idx = 0

    def take(width):
        nonlocal idx
        block = data[:, idx:idx + width]
        idx += width
        return block[:, 0] if width == 1 else block

    log = EpisodeLog(
        t=take(1), q=take(n), q_d=take(n), tau_e=take(n), tau_e_hat=take(n),
        z=take(n), s=take(1), w=take(1), u=take(n),
        saturated=take(1).astype(bool), qdot=take(n), qdot_d=take(n),
        phase=take(n), fused_phase=take(1), omega=take(1),
        heel_strikes=heel, mode=meta["mode"], log_dt=float(meta["log_dt"]),
        max_step_du=float(meta["max_step_du"]))
    return log, prov
