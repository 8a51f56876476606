"""Simulated wearers: intent trajectories, interaction torque, conflicts.

A subject is a bundle of per-task movement parameters plus a coupling
impedance. Rhythmic tasks (walk, stairs) are 3-harmonic Fourier series per
joint; discrete tasks (squat, stand) are minimum-jerk point-to-point curves
with a small sin^2 shape term so subjects differ in path, not just endpoints.

Per-task parameters derive from the walk parameters through a fixed smooth
degree-2 map (`apply_task_map`) plus per-subject noise, which is what makes
subject-to-subject task translation learnable: the walk gait is a sufficient
statistic for the subject's style, and the map is deliberately nonlinear.

The wearer couples to the robot through a first-order impedance,

    tau_e = K_h (q_h - q) + C_h (q'_h - q')

where q_h is the intended trajectory. Conflicts perturb that intent on one
side only (the first joint is the affected side; holding a leg back or
stumbling is a lateralized event, so the other joints keep the clean gait):
"asynchronization" phase-shifts the affected joint's q_h by severity*pi/2
during the event, "imbalance" scales its K_h by (1 - severity) and
superimposes a slow drift.
"""

from dataclasses import dataclass, field

import numpy as np

RHYTHMIC_TASKS = ("walk", "stairs_up", "stairs_down")
DISCRETE_TASKS = ("squat", "stand")
TASKS = RHYTHMIC_TASKS + DISCRETE_TASKS

CONFLICT_KINDS = ("asynchronization", "imbalance")

# imbalance drift shape (severity scales the amplitude)
DRIFT_AMP_RAD = 0.2
DRIFT_HZ = 0.3

_D2R = np.pi / 180.0


@dataclass(frozen=True)
class TaskGait:
    """Rhythmic variant: per-joint 3-harmonic series (degrees / radians)."""

    amplitudes_deg: np.ndarray  # (n, 3)
    phases_rad: np.ndarray      # (n, 3)
    offset_deg: np.ndarray      # (n,)

    def __post_init__(self):
        object.__setattr__(self, "amplitudes_deg",
                           np.atleast_2d(np.asarray(self.amplitudes_deg, dtype=np.float64)))
        object.__setattr__(self, "phases_rad",
                           np.atleast_2d(np.asarray(self.phases_rad, dtype=np.float64)))
        object.__setattr__(self, "offset_deg",
                           np.atleast_1d(np.asarray(self.offset_deg, dtype=np.float64)))
        if self.amplitudes_deg.shape != self.phases_rad.shape:
            raise ValueError("amplitude/phase shapes disagree")
        if self.amplitudes_deg.shape[1] != 3:
            raise ValueError("expected 3 harmonics")
        if self.offset_deg.size != self.amplitudes_deg.shape[0]:
            raise ValueError("offset length disagrees with joint count")


@dataclass(frozen=True)
class DiscreteMotion:
    """Discrete variant: minimum-jerk base plus sin^2 shape bumps."""

    start_deg: np.ndarray   # (n,)
    delta_deg: np.ndarray   # (n,)  signed displacement to the goal
    bump_deg: np.ndarray    # (n, 3)
    duration: float         # seconds

    def __post_init__(self):
        object.__setattr__(self, "start_deg",
                           np.atleast_1d(np.asarray(self.start_deg, dtype=np.float64)))
        object.__setattr__(self, "delta_deg",
                           np.atleast_1d(np.asarray(self.delta_deg, dtype=np.float64)))
        object.__setattr__(self, "bump_deg",
                           np.atleast_2d(np.asarray(self.bump_deg, dtype=np.float64)))
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.bump_deg.shape != (self.start_deg.size, 3):
            raise ValueError("bump table must be (n_joints, 3)")


@dataclass(frozen=True)
class ConflictEvent:
    kind: str
    onset: float
    duration: float
    severity: float

    def __post_init__(self):
        if self.kind not in CONFLICT_KINDS:
            raise ValueError("unknown conflict kind %r" % (self.kind,))
        if not 0.0 < self.severity <= 1.0:
            raise ValueError("severity must lie in (0, 1]")
        if self.onset < 0 or self.duration <= 0:
            raise ValueError("onset must be >= 0 and duration > 0")

    def active(self, t):
        return self.onset <= t < self.onset + self.duration


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int
    cadence_hz: float
    k_h: np.ndarray  # (n,) diagonal human stiffness
    c_h: np.ndarray  # (n,) diagonal human damping
    gaits: dict      # task name -> TaskGait | DiscreteMotion

    def __post_init__(self):
        object.__setattr__(self, "k_h", np.atleast_1d(np.asarray(self.k_h, dtype=np.float64)))
        object.__setattr__(self, "c_h", np.atleast_1d(np.asarray(self.c_h, dtype=np.float64)))
        if not 0.5 <= self.cadence_hz <= 1.5:
            raise ValueError("cadence out of the plausible 0.5..1.5 Hz band")
        if np.any(self.k_h < 0) or np.any(self.c_h < 0):
            raise ValueError("impedance diagonals must be non-negative")
        if "walk" not in self.gaits:
            raise ValueError("a profile always carries a walk gait")

    @property
    def n_joints(self):
        return self.k_h.size


# Fixed degree-2 task maps: value' = c0 + c1*value + c2*value^2, applied
# elementwise to the walk parameters. Phases shift additively. The quadratic
# coefficients are sized so curvature contributes on the order of the linear
# term across the sampled population (a linear regressor underfits on
# purpose).
TASK_MAPS = {
    "stairs_up": {
        "amp": ((6.0, 0.50, 0.020), (2.0, 0.60, 0.050), (1.0, 0.50, 0.080)),
        "offset": (18.0, 0.90, 0.012),
        "phase_shift": (0.4, 0.8, 1.2),
    },
    "stairs_down": {
        "amp": ((4.0, 0.55, 0.015), (1.5, 0.70, 0.040), (0.8, 0.60, 0.060)),
        "offset": (12.0, 0.85, 0.010),
        "phase_shift": (-0.3, -0.6, -0.9),
    },
    "squat": {
        "start": (2.0, 0.15, 0.002),
        "delta": (40.0, 1.20, 0.030),
        "bump": ((1.0, 0.15, 0.004), (0.5, 0.10, 0.010), (0.2, 0.08, 0.020)),
        "duration": (1.6, 0.5),  # duration = d0 + d1 / cadence
    },
    "stand": {
        "start": (75.0, 0.30, 0.004),
        "delta": (-30.0, -1.10, -0.025),
        "bump": ((0.8, 0.12, 0.003), (0.4, 0.08, 0.008), (0.15, 0.06, 0.015)),
        "duration": (1.2, 0.4),
    },
}


def _poly2(coef, x):
    c0, c1, c2 = coef
    return c0 + c1 * x + c2 * x * x


def apply_task_map(walk, cadence_hz, task):
    """Map a walk TaskGait to the given task's noise-free variant."""
    m = TASK_MAPS[task]
    if task in RHYTHMIC_TASKS[1:]:
        amps = np.stack(
            [_poly2(m["amp"][k], walk.amplitudes_deg[:, k]) for k in range(3)], axis=1
        )
        phases = walk.phases_rad + np.asarray(m["phase_shift"])
        offset = _poly2(m["offset"], walk.offset_deg)
        return TaskGait(amps, phases, offset)
    if task in DISCRETE_TASKS:
        # discrete endpoints/shape derive from the first-harmonic amplitude
        # and the walk baseline; both knees move together
        a1 = walk.amplitudes_deg[:, 0]
        start = _poly2(m["start"], walk.offset_deg)
        delta = _poly2(m["delta"], a1)
        bump = np.stack(
            [_poly2(m["bump"][k], walk.amplitudes_deg[:, k]) for k in range(3)], axis=1
        )
        d0, d1 = m["duration"]
        return DiscreteMotion(start, delta, bump, d0 + d1 / cadence_hz)
    raise ValueError("no task map for %r" % (task,))


def sample_population(count, seed, task_noise=0.05, n_joints=2):
    """Draw `count` mutually distinct subjects.

    task_noise is the relative sigma of the per-subject perturbation applied
    on top of the fixed task map (0 reproduces the map exactly). Walk gaits
    are bilateral: the second joint mirrors the first at half-period phase
    offset (harmonic k shifts by k*pi) with a small asymmetry.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if n_joints < 1:
        raise ValueError("n_joints must be >= 1")
    rng = np.random.default_rng(seed)
    profiles = []
    for sid in range(count):
        cadence = float(np.clip(rng.normal(1.0, 0.10), 0.75, 1.30))
        a = np.array([
            np.clip(rng.normal(24.0, 2.5), 17.0, 31.0),
            np.clip(rng.normal(9.0, 1.2), 5.5, 12.5),
            np.clip(rng.normal(3.0, 0.6), 1.5, 4.5),
        ])
        ph = np.array([
            rng.normal(-np.pi / 2, 0.15),
            rng.normal(0.6, 0.20),
            rng.normal(1.8, 0.25),
        ])
        off = np.clip(rng.normal(25.0, 2.5), 18.0, 32.0)
        amps = np.zeros((n_joints, 3))
        phases = np.zeros((n_joints, 3))
        offsets = np.zeros(n_joints)
        for j in range(n_joints):
            asym = 1.0 + 0.02 * rng.standard_normal(3) if j > 0 else np.ones(3)
            amps[j] = a * asym
            phases[j] = ph + (j % 2) * np.arange(1, 4) * np.pi \
                + (0.02 * rng.standard_normal(3) if j > 0 else 0.0)
            offsets[j] = off * (1.0 + (0.02 * rng.standard_normal() if j > 0 else 0.0))
        walk = TaskGait(amps, phases, offsets)

        gaits = {"walk": walk}
        for task in TASKS[1:]:
            base = apply_task_map(walk, cadence, task)
            if isinstance(base, TaskGait):
                gaits[task] = TaskGait(
                    base.amplitudes_deg * (1.0 + task_noise * rng.standard_normal((n_joints, 3))),
                    base.phases_rad + task_noise * rng.standard_normal((n_joints, 3)),
                    base.offset_deg * (1.0 + task_noise * rng.standard_normal(n_joints)),
                )
            else:
                gaits[task] = DiscreteMotion(
                    base.start_deg * (1.0 + task_noise * rng.standard_normal(n_joints)),
                    base.delta_deg * (1.0 + task_noise * rng.standard_normal(n_joints)),
                    base.bump_deg * (1.0 + task_noise * rng.standard_normal((n_joints, 3))),
                    base.duration * float(1.0 + task_noise * rng.standard_normal()),
                )
        profiles.append(SubjectProfile(
            subject_id=sid,
            cadence_hz=cadence,
            k_h=20.0 * (1.0 + 0.10 * rng.standard_normal(n_joints)),
            c_h=2.0 * (1.0 + 0.10 * rng.standard_normal(n_joints)),
            gaits=gaits,
        ))
    return profiles


def _minjerk(s):
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def _minjerk_d(s):
    return s * s * (30.0 + s * (-60.0 + 30.0 * s))


def intended_trajectory(profile, task, t):
    """Intended joint angles q_h(t) in radians; t scalar or 1-D array.

    Returns (n,) for scalar t, (len(t), n) for array t. Discrete tasks hold
    the final posture for t >= duration.
    """
    q, _ = _intent(profile, task, t)
    return q


def intended_velocity(profile, task, t):
    _, qd = _intent(profile, task, t)
    return qd


def _intent(profile, task, t):
    gait = profile.gaits[task]
    t = np.asarray(t, dtype=np.float64)
    scalar = t.ndim == 0
    tt = t[None] if scalar else t
    if isinstance(gait, TaskGait):
        f = profile.cadence_hz
        k = np.arange(1, 4)
        arg = 2.0 * np.pi * f * tt[:, None, None] * k[None, None, :] \
            + gait.phases_rad[None, :, :]
        amps = gait.amplitudes_deg[None, :, :]
        q = gait.offset_deg[None, :] + np.sum(amps * np.sin(arg), axis=2)
        qd = np.sum(amps * (2.0 * np.pi * f * k)[None, None, :] * np.cos(arg), axis=2)
    else:
        s = np.clip(tt / gait.duration, 0.0, 1.0)
        kk = np.arange(1, 4)
        sk = np.sin(np.pi * s[:, None, None] * kk[None, None, :])
        q = gait.start_deg[None, :] + gait.delta_deg[None, :] * _minjerk(s)[:, None] \
            + np.sum(gait.bump_deg[None, :, :] * sk * sk, axis=2)
        dsdt = np.where((tt >= 0) & (tt < gait.duration), 1.0 / gait.duration, 0.0)
        dq_ds = gait.delta_deg[None, :] * _minjerk_d(s)[:, None] + np.sum(
            gait.bump_deg[None, :, :]
            * (np.pi * kk)[None, None, :]
            * np.sin(2.0 * np.pi * s[:, None, None] * kk[None, None, :]),
            axis=2,
        )
        qd = dq_ds * dsdt[:, None]
    q = q * _D2R
    qd = qd * _D2R
    return (q[0], qd[0]) if scalar else (q, qd)


def _conflict_terms(profile, task, t, conflict):
    """Time shift, added drift (pos/vel), and K_h scale for a conflict at t."""
    shift = 0.0
    drift = 0.0
    drift_vel = 0.0
    k_scale = 1.0
    if conflict is not None and conflict.active(t):
        if conflict.kind == "asynchronization":
            # severity*pi/2 of gait phase, expressed as a time shift
            shift = conflict.severity * (np.pi / 2.0) / (2.0 * np.pi * profile.cadence_hz)
        else:
            k_scale = 1.0 - conflict.severity
            w = 2.0 * np.pi * DRIFT_HZ
            drift = conflict.severity * DRIFT_AMP_RAD * np.sin(w * (t - conflict.onset))
            drift_vel = conflict.severity * DRIFT_AMP_RAD * w * np.cos(w * (t - conflict.onset))
    return shift, drift, drift_vel, k_scale


def interaction_torque(profile, task, t, q, qdot, conflict=None):
    """Human-robot coupling torque at time t given robot state (q, q').

    Conflict terms apply to the first joint only (the affected side).
    """
    shift, drift, drift_vel, k_scale = _conflict_terms(profile, task, t, conflict)
    q_h, qd_h = _intent(profile, task, np.float64(t))
    scale = np.ones(profile.n_joints)
    if shift != 0.0:
        q_s, qd_s = _intent(profile, task, np.float64(t + shift))
        q_h = q_h.copy()
        qd_h = qd_h.copy()
        q_h[0] = q_s[0]
        qd_h[0] = qd_s[0]
    if drift != 0.0 or drift_vel != 0.0 or k_scale != 1.0:
        q_h = q_h.copy()
        qd_h = qd_h.copy()
        q_h[0] += drift
        qd_h[0] += drift_vel
        scale[0] = k_scale
    return scale * profile.k_h * (q_h - np.asarray(q)) \
        + profile.c_h * (qd_h - np.asarray(qdot))


def intent_tables(profile, task, t_grid, conflict=None):
    """Vectorized effective intent for the simulator hot loop.

    Returns (q_h_eff, qd_h_eff, k_scale) sampled on t_grid, matching what
    `interaction_torque` computes pointwise.  k_scale is (t, n); conflict
    terms land in column 0 (the affected side).
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    n = profile.n_joints
    k_scale = np.ones((t_grid.size, n))
    q_h, qd_h = _intent(profile, task, t_grid)
    if conflict is None:
        return q_h, qd_h, k_scale
    active = np.array([conflict.active(t) for t in t_grid])
    if np.any(active):
        ta = t_grid[active]
        if conflict.kind == "asynchronization":
            shift = conflict.severity * (np.pi / 2.0) / (2.0 * np.pi * profile.cadence_hz)
            qs, qds = _intent(profile, task, ta + shift)
            q_h[active, 0] = qs[:, 0]
            qd_h[active, 0] = qds[:, 0]
        else:
            w = 2.0 * np.pi * DRIFT_HZ
            drift = conflict.severity * DRIFT_AMP_RAD * np.sin(w * (ta - conflict.onset))
            drift_vel = conflict.severity * DRIFT_AMP_RAD * w * np.cos(w * (ta - conflict.onset))
            q_h[active, 0] += drift
            qd_h[active, 0] += drift_vel
            k_scale[active, 0] = 1.0 - conflict.severity
    return q_h, qd_h, k_scale


def heel_strikes(times, phase):
    """Event times where the fused gait phase crosses successive 2*pi marks.

    `phase` is a cumulative (unwrapped) phase trace; small local dips are
    tolerated by counting only the first upward crossing of each level.
    Crossing times are linearly interpolated. Raises on an empty trace.
    """
    times = np.asarray(times, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if times.size == 0 or phase.size == 0:
        raise ValueError("empty phase trace")
    if times.size != phase.size:
        raise ValueError("times and phase disagree in length")
    events = []
    level = phase[0] + 2.0 * np.pi
    running = phase[0]
    for i in range(1, times.size):
        running = max(running, phase[i - 1])
        while phase[i] >= level:
            lo = max(running, phase[i - 1])
            frac = (level - lo) / (phase[i] - lo) if phase[i] > lo else 0.0
            events.append(times[i - 1] + frac * (times[i] - times[i - 1]))
            level += 2.0 * np.pi
    return np.asarray(events)


# ---------------------------------------------------------------------------
# population CSV interchange


def population_to_csv(profiles, fh, header_comment=None):
    """Write profiles in the documented flat column order.

    Columns: subject_id, cadence_hz, kh_<j>, ch_<j>, then per rhythmic task
    {task}_amp_<j>_<k>, {task}_phase_<j>_<k>, {task}_offset_<j>, then per
    discrete task {task}_start_<j>, {task}_delta_<j>, {task}_bump_<j>_<k>,
    {task}_duration. j = joint index, k = harmonic index (1-based).
    """
    own = isinstance(fh, (str, bytes))
    f = open(fh, "w") if own else fh
    try:
        n = profiles[0].n_joints
        cols = ["subject_id", "cadence_hz"]
        cols += ["kh_%d" % j for j in range(n)] + ["ch_%d" % j for j in range(n)]
        for task in RHYTHMIC_TASKS:
            for j in range(n):
                cols += ["%s_amp_%d_%d" % (task, j, k) for k in (1, 2, 3)]
                cols += ["%s_phase_%d_%d" % (task, j, k) for k in (1, 2, 3)]
            cols += ["%s_offset_%d" % (task, j) for j in range(n)]
        for task in DISCRETE_TASKS:
            cols += ["%s_start_%d" % (task, j) for j in range(n)]
            cols += ["%s_delta_%d" % (task, j) for j in range(n)]
            for j in range(n):
                cols += ["%s_bump_%d_%d" % (task, j, k) for k in (1, 2, 3)]
            cols.append("%s_duration" % task)
        if header_comment:
            f.write("# %s\n" % header_comment)
        f.write(",".join(cols) + "\n")
        for p in profiles:
            row = [repr(int(p.subject_id)), repr(float(p.cadence_hz))]
            row += [repr(float(v)) for v in p.k_h] + [repr(float(v)) for v in p.c_h]
            for task in RHYTHMIC_TASKS:
                g = p.gaits[task]
                for j in range(n):
                    row += [repr(float(v)) for v in g.amplitudes_deg[j]]
                    row += [repr(float(v)) for v in g.phases_rad[j]]
                row += [repr(float(v)) for v in g.offset_deg]
            for task in DISCRETE_TASKS:
                g = p.gaits[task]
                row += [repr(float(v)) for v in g.start_deg]
                row += [repr(float(v)) for v in g.delta_deg]
                for j in range(n):
                    row += [repr(float(v)) for v in g.bump_deg[j]]
                row.append(repr(float(g.duration)))
            f.write(",".join(row) + "\n")
    finally:
        if own:
            f.close()


def population_from_csv(fh):
    own = isinstance(fh, (str, bytes))
    f = open(fh) if own else fh
    try:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    finally:
        if own:
            f.close()
    header = lines[0].split(",")
    n = sum(1 for c in header if c.startswith("kh_"))
    idx = {c: i for i, c in enumerate(header)}
    profiles = []
    for ln in lines[1:]:
        vals = ln.split(",")

        def get(col):
            return float(vals[idx[col]])

        gaits = {}
        for task in RHYTHMIC_TASKS:
            amps = np.array([[get("%s_amp_%d_%d" % (task, j, k)) for k in (1, 2, 3)]
                             for j in range(n)])
            phases = np.array([[get("%s_phase_%d_%d" % (task, j, k)) for k in (1, 2, 3)]
                               for j in range(n)])
            offs = np.array([get("%s_offset_%d" % (task, j)) for j in range(n)])
            gaits[task] = TaskGait(amps, phases, offs)
        for task in DISCRETE_TASKS:
            start = np.array([get("%s_start_%d" % (task, j)) for j in range(n)])
            delta = np.array([get("%s_delta_%d" % (task, j)) for j in range(n)])
            bump = np.array([[get("%s_bump_%d_%d" % (task, j, k)) for k in (1, 2, 3)]
                             for j in range(n)])
            gaits[task] = DiscreteMotion(start, delta, bump, get("%s_duration" % task))
        profiles.append(SubjectProfile(
            subject_id=int(float(vals[idx["subject_id"]])),
            cadence_hz=get("cadence_hz"),
            k_h=np.array([get("kh_%d" % j) for j in range(n)]),
            c_h=np.array([get("ch_%d" % j) for j in range(n)]),
            gaits=gaits,
        ))
    return profiles
