"""Disturbance observer recovering interaction torque from proprioception.

The plant never measures tau_e directly.  An auxiliary vector y evolves
so that tau_hat = y + p(qdot) tracks the true interaction torque using
only joint positions, velocities, and motor positions:

    ydot = -L [y + K(theta - q) - C(q, qdot) qdot - g(q) + p]
    L = a_inv * M(q)^-1,   p = a_inv * qdot,   A^-1 = a_inv * I

with a_inv = (sigma1 + 2 beta sigma2) / 2 built from workspace bounds
sigma1 >= max ||dM/dt|| and sigma2 >= max ||M||.  The estimation error
obeys  d(tau_hat - tau_e)/dt = -L (tau_hat - tau_e) - taudot_e, so for
bounded taudot_e the error converges to a ball whose radius is computed
by :func:`ultimate_bound_radius`.

The error decay rate is roughly a_inv / lambda_max(M), about 1.1 * beta
for the decoupled knee plant, so beta sets the tracking bandwidth
directly.  Accuracy at millisecond steps requires integrating y jointly
with the plant (see simulate); :func:`observer_step` freezes the robot
state over the step and is only as good as that hold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dynamics
from .errors import NumericalDivergence

BETA_DEFAULT = 20.0


@dataclass(frozen=True)
class ObserverState:
    """Auxiliary vector plus the constants that define the observer.

    a_inv is the scalar in A^-1 = a_inv * I; tau_hat is the estimate at
    the time of the last update (y + a_inv * qdot).
    """

    y: np.ndarray
    tau_hat: np.ndarray
    a_inv: float
    beta: float
    sigma1: float
    sigma2: float

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        th = np.atleast_1d(np.asarray(self.tau_hat, dtype=np.float64))
        if y.shape != th.shape:
            raise ValueError("y and tau_hat must have the same shape")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "tau_hat", th)
        if self.a_inv <= 0:
            raise ValueError("a_inv must be positive")


def compute_bounds(p, q_range, qd_range, n_samples=10_000, seed=0, inflation=0.1):
    """Sampled workspace bounds (sigma1, sigma2) on ||dM/dt|| and ||M||.

    q_range/qd_range are (low, high) pairs, scalars or per joint arrays.
    Norms are spectral; both maxima are inflated by the given fraction.
    """
    n = p.n_joints
    rng = np.random.default_rng(seed)
    q_lo, q_hi = (np.broadcast_to(np.asarray(b, dtype=float), (n,)) for b in q_range)
    d_lo, d_hi = (np.broadcast_to(np.asarray(b, dtype=float), (n,)) for b in qd_range)
    qs = rng.uniform(q_lo, q_hi, size=(n_samples, n))
    qds = rng.uniform(d_lo, d_hi, size=(n_samples, n))
    m_stack = np.empty((n_samples, n, n))
    md_stack = np.empty((n_samples, n, n))
    for i in range(n_samples):
        m_stack[i] = dynamics.mass_matrix(p, qs[i])
        md_stack[i] = dynamics.mass_matrix_dot(p, qs[i], qds[i])
    # symmetric matrices: spectral norm is the largest |eigenvalue|
    sigma2 = np.abs(np.linalg.eigvalsh(m_stack)).max()
    sigma1 = np.abs(np.linalg.eigvalsh(md_stack)).max()
    return (1.0 + inflation) * sigma1, (1.0 + inflation) * sigma2


def make_observer(sigma1, sigma2, n_joints, beta=BETA_DEFAULT, qdot0=None):
    """Observer with y seeded so the initial estimate is exactly zero."""
    if beta <= 0 or sigma2 <= 0 or sigma1 < 0:
        raise ValueError("need beta > 0, sigma2 > 0, sigma1 >= 0")
    a_inv = 0.5 * (sigma1 + 2.0 * beta * sigma2)
    qdot0 = np.zeros(n_joints) if qdot0 is None else np.asarray(qdot0, dtype=float)
    y0 = -a_inv * qdot0
    return ObserverState(y0, np.zeros(n_joints), a_inv, beta, sigma1, sigma2)


def estimate(obs, qdot):
    """tau_hat = y + a_inv * qdot for the current measurements."""
    return obs.y + obs.a_inv * np.asarray(qdot, dtype=float)


def aux_derivative(p, obs_y, a_inv, q, qdot, theta, pieces=None):
    """Right-hand side of the y ODE at one plant state.

    pieces, if given, is (M, spring, coriolis_qdot, grav) precomputed by
    the caller so a co-integrating loop does not rebuild them.
    """
    if pieces is None:
        m = dynamics.mass_matrix(p, q)
        spring = p.k_spring * (theta - q)
        cor_qd = dynamics.coriolis(p, q, qdot) @ qdot
        grav = dynamics.gravity_vec(p, q)
    else:
        m, spring, cor_qd, grav = pieces
    resid = obs_y + spring - cor_qd - grav + a_inv * qdot
    if p.coupling == "decoupled" or p.n_joints == 1:
        return -a_inv * resid / (p.masses * p.coms**2 + p.inertias)
    return -a_inv * np.linalg.solve(m, resid)


def observer_step(obs, p, state, dt):
    """RK4 update of y holding the robot state fixed over the step.

    The hold is exact only for stationary measurements; inside episode
    loops prefer co-integration with the plant (simulate does this).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, qd, th = state.q, state.qdot, state.theta

    def f(y):
        return aux_derivative(p, y, obs.a_inv, q, qd, th)

    y = obs.y
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    y_new = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_new)):
        raise NumericalDivergence("observer state non-finite")
    return replace(obs, y=y_new, tau_hat=y_new + obs.a_inv * qd)


def gamma_matrix(obs, p, q, qdot):
    """Gamma = A + A^T - A^T dM/dt A for A = I / a_inv."""
    n = p.n_joints
    md = dynamics.mass_matrix_dot(p, q, qdot)
    return (2.0 / obs.a_inv) * np.eye(n) - md / obs.a_inv**2


def gamma_min(obs, p, q, qdot):
    """Smallest eigenvalue of Gamma; must stay positive along trajectories."""
    return float(np.linalg.eigvalsh(gamma_matrix(obs, p, q, qdot)).min())


def ultimate_bound_radius(obs, p, q, qdot, zeta, rho=0.5):
    """Error ball radius 2 zeta lmax(M) ||A||^2 / (rho lmin(Gamma)).

    Pointwise in the state; callers take the max along a trajectory.
    zeta bounds ||taudot_e||; rho in (0, 1) splits the decay margin.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    lam_m = float(np.linalg.eigvalsh(dynamics.mass_matrix(p, q)).max())
    lam_g = gamma_min(obs, p, q, qdot)
    if lam_g <= 0:
        raise ValueError("Gamma not positive definite at this state")
    norm_a = 1.0 / obs.a_inv
    return 2.0 * zeta * lam_m * norm_a**2 / (rho * lam_g)
