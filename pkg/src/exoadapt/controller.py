"""Two time-scale variable impedance controller for the SEA plant.

The motor torque splits into a fast term damping the spring's internal
mode and a slow term shaping the interaction:

    u_f = -K_v (thetadot - qdot)
    u_s = -K_z z - tau_hat - k_g sat(z/delta)
          + (M(q) + B) qddot_r + C(q, qdot) qdot_r + g(q)

where z is the impedance vector

    z = qdot - qdot_d + Cd^-1 Kd (q - q_d) - Cd^-1 tau_hat / w

so that z = 0 enforces  Cd (qdot - qdot_d) + Kd (q - q_d) = tau_hat / w.
The scalar weight w maps the anomaly score through a shifted tanh; small
scores (familiar motion) drive w toward its upper bound and stiffen the
rendered impedance, large scores soften it.

All gain matrices are scalar multiples of the identity, so the config
stores plain floats.  The reference acceleration uses the analytic
derivative of the z = 0 manifold; the torque estimate's model-consistent
time derivative is identically zero along the observer dynamics, which
leaves only the -(wdot/w^2) Cd^-1 tau_hat term beyond the tracking
error part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics


@dataclass(frozen=True)
class ImpedanceConfig:
    """Controller constants; defaults reproduce the reference gait setup."""

    c_d: float = 15.0
    k_d: float = 13.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    chi1: float = 10.0
    chi2: float = 12.0
    k_v: float = 1e-3
    k_z: float = 25.0
    k_g: float = 2.0
    delta: float = 0.01
    u_max: float = 200.0
    score_cutoff_hz: float = 5.0

    def __post_init__(self):
        positive = ("c_d", "k_d", "lambda1", "lambda2", "chi1", "k_v",
                    "k_z", "delta", "u_max", "score_cutoff_hz")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.k_g < 0:
            raise ValueError("k_g must be nonnegative")


@dataclass(frozen=True)
class ControlResult:
    u: np.ndarray
    u_fast: np.ndarray
    u_slow: np.ndarray
    z: np.ndarray
    w: float
    wdot: float
    saturated: bool


def weighting(cfg, s):
    """w(s) = lambda1 tanh(-s/chi1 + chi2) + lambda2, decreasing in s."""
    if s < 0:
        raise ValueError("anomaly score must be nonnegative")
    return cfg.lambda1 * np.tanh(-s / cfg.chi1 + cfg.chi2) + cfg.lambda2


def weighting_slope(cfg, s, sdot):
    """dw/dt for a score moving at sdot (analytic tanh derivative)."""
    if s < 0:
        raise ValueError("anomaly score must be nonnegative")
    sech2 = 1.0 - np.tanh(-s / cfg.chi1 + cfg.chi2) ** 2
    return -cfg.lambda1 / cfg.chi1 * sech2 * sdot


def impedance_vector(cfg, q, qd, q_des, qd_des, tau_hat, w):
    """z = qdot error + Cd^-1 Kd position error - Cd^-1 tau_hat / w."""
    if w <= 0:
        raise ValueError("weight must be positive")
    return (qd - qd_des + (cfg.k_d / cfg.c_d) * (q - q_des)
            - tau_hat / (w * cfg.c_d))


def reference_derivatives(cfg, q, qd, q_des, qd_des, qdd_des, tau_hat, w, wdot):
    """(qdot_r, qddot_r) of the z = 0 reference; z = qdot - qdot_r."""
    if w <= 0:
        raise ValueError("weight must be positive")
    ratio = cfg.k_d / cfg.c_d
    qd_r = qd_des - ratio * (q - q_des) + tau_hat / (w * cfg.c_d)
    qdd_r = qdd_des - ratio * (qd - qd_des) - (wdot / w**2) * tau_hat / cfg.c_d
    return qd_r, qdd_r


def fast_torque(cfg, qdot, thetadot):
    return -cfg.k_v * (thetadot - qdot)


def smoothed_sign(z, delta):
    """sat(z/delta): linear inside the band, +-1 outside."""
    return np.clip(z / delta, -1.0, 1.0)


def slow_torque(cfg, p, q, qd, qd_r, qdd_r, z, tau_hat):
    rotor = np.broadcast_to(p.rotor_inertia, (p.n_joints,))
    m = dynamics.mass_matrix(p, q) + np.diag(rotor)
    cor = dynamics.coriolis(p, q, qd)
    grav = dynamics.gravity_vec(p, q)
    return (-cfg.k_z * z - tau_hat - cfg.k_g * smoothed_sign(z, cfg.delta)
            + m @ qdd_r + cor @ qd_r + grav)


def control_step(cfg, p, state, q_des, qd_des, qdd_des, tau_hat, s, sdot=0.0):
    """Full torque command from one sampled state and filtered score.

    Saturation clamps each channel to +-u_max and sets a flag; it is
    reported, not fatal.
    """
    w = float(weighting(cfg, s))
    wdot = float(weighting_slope(cfg, s, sdot))
    z = impedance_vector(cfg, state.q, state.qdot, q_des, qd_des, tau_hat, w)
    qd_r, qdd_r = reference_derivatives(cfg, state.q, state.qdot, q_des,
                                        qd_des, qdd_des, tau_hat, w, wdot)
    u_f = fast_torque(cfg, state.qdot, state.thetadot)
    u_s = slow_torque(cfg, p, state.q, state.qdot, qd_r, qdd_r, z, tau_hat)
    u_raw = u_f + u_s
    u = np.clip(u_raw, -cfg.u_max, cfg.u_max)
    saturated = bool(np.any(u != u_raw))
    return ControlResult(u, u_f, u_s, z, w, wdot, saturated)


# ---------------------------------------------------------------------------
# anomaly score smoothing


@dataclass
class ScoreFilter:
    """First-order low-pass on the window score; also reports its slope.

    Window scores update every few hundred plant steps and are held
    between updates, so the raw signal is piecewise constant.  The
    filter gives the controller a smooth w(s) and a finite wdot.
    """

    cutoff_hz: float = 5.0
    value: float | None = None

    def update(self, s, dt):
        """Advance by dt toward s; returns (filtered score, d/dt estimate)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        omega = 2.0 * np.pi * self.cutoff_hz
        if self.value is None:
            self.value = float(s)
            return self.value, 0.0
        self.value = float(s + (self.value - s) * np.exp(-omega * dt))
        return self.value, omega * (float(s) - self.value)


# ---------------------------------------------------------------------------
# boundary layer stability


@dataclass(frozen=True)
class BoundaryLayerReport:
    epsilon: float
    k1: np.ndarray  # per joint, eps^2 * K
    k2: float
    eigenvalues: np.ndarray  # (n_joints, 2) complex pairs
    stable: bool
    margin: float


def layer_eigenvalues(b, k1, k2):
    """Roots of b s^2 + k2 s + k1 = 0 as a complex pair."""
    disc = complex(k2 * k2 - 4.0 * b * k1)
    root = np.sqrt(disc)
    return np.array([(-k2 + root) / (2.0 * b), (-k2 - root) / (2.0 * b)])


def boundary_layer_check(cfg, p, epsilon):
    """Stability report for the fast spring mode  B eta'' + K2 eta' + K1 eta = 0
    with K1 = eps^2 K and K2 = eps K_v.

    Each joint channel is a decoupled scalar second-order system, so the
    report carries one eigenvalue pair per joint.  Marginal (zero real
    part) counts as not stable.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = p.n_joints
    k1 = np.broadcast_to(epsilon**2 * np.asarray(p.k_spring, dtype=float), (n,))
    k2 = epsilon * cfg.k_v
    rotor = np.broadcast_to(np.asarray(p.rotor_inertia, dtype=float), (n,))
    eig = np.stack(
        [layer_eigenvalues(float(b), float(k), k2) for b, k in zip(rotor, k1)]
    )
    margin = -float(eig.real.max())
    return BoundaryLayerReport(epsilon, k1, k2, eig, margin > 0, margin)
