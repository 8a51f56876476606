"""Series-elastic planar chain dynamics.

Link side:   M(q) q'' + C(q, q') q' + g(q) = K (theta - q) + tau_e
Rotor side:  B theta''            + K (theta - q) = u

with diagonal positive-definite spring stiffness K and rotor inertia B. The
transmitted (spring) torque is tau_o = K (theta - q). Angles are measured
from the downward vertical, so gravity torques go like sin(q) and q = 0 is
the hanging equilibrium.

Two chain layouts are supported:

* "serial"    - standard coupled planar chain, 1 or 2 links, closed-form
                M/C/g with C built from Christoffel symbols (so Mdot - 2C is
                skew-symmetric exactly, and Mdot = C + C^T).
* "decoupled" - n independent single-link joints (the bilateral-knee walking
                plant); M is constant diagonal and C = 0.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalDivergence


@dataclass(frozen=True)
class RobotParams:
    """Plant constants. Arrays all have length n (one entry per joint)."""

    masses: np.ndarray
    lengths: np.ndarray
    coms: np.ndarray          # distance from joint axis to link COM
    inertias: np.ndarray      # link rotational inertia about its COM
    k_spring: np.ndarray      # diagonal of K
    rotor_inertia: np.ndarray  # diagonal of B
    gravity: float = 9.81
    coupling: str = "serial"

    def __post_init__(self):
        for name in ("masses", "lengths", "coms", "inertias", "k_spring", "rotor_inertia"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        n = self.masses.size
        for name in ("lengths", "coms", "inertias", "k_spring", "rotor_inertia"):
            if getattr(self, name).size != n:
                raise ValueError("parameter arrays disagree on joint count")
        if self.coupling not in ("serial", "decoupled"):
            raise ValueError("coupling must be 'serial' or 'decoupled'")
        if self.coupling == "serial" and n not in (1, 2):
            raise ValueError("serial chains support 1 or 2 links")
        if np.any(self.masses <= 0) or np.any(self.lengths <= 0) or np.any(self.coms <= 0):
            raise ValueError("masses, lengths and COM offsets must be positive")
        if np.any(self.inertias < 0):
            raise ValueError("link inertias must be non-negative")
        if np.any(self.k_spring <= 0) or np.any(self.rotor_inertia <= 0):
            raise ValueError("K and B diagonals must be positive")

    @property
    def n_joints(self):
        return self.masses.size


def knee_plant(n_joints=2, mass=3.0, length=0.4, com=0.2, inertia=0.05,
               k_spring=635.0, rotor_inertia=0.05, gravity=9.81):
    """Decoupled single-link knee joints (the walking plant)."""
    ones = np.ones(n_joints)
    return RobotParams(
        masses=mass * ones, lengths=length * ones, coms=com * ones,
        inertias=inertia * ones, k_spring=k_spring * ones,
        rotor_inertia=rotor_inertia * ones, gravity=gravity,
        coupling="decoupled",
    )


def serial_plant(n_joints=2, mass=3.0, length=0.4, com=0.2, inertia=0.05,
                 k_spring=635.0, rotor_inertia=0.05, gravity=9.81):
    """Coupled planar chain with identical links (property-test plant)."""
    ones = np.ones(n_joints)
    return RobotParams(
        masses=mass * ones, lengths=length * ones, coms=com * ones,
        inertias=inertia * ones, k_spring=k_spring * ones,
        rotor_inertia=rotor_inertia * ones, gravity=gravity,
        coupling="serial",
    )


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray
    theta: np.ndarray
    thetadot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        self.qdot = np.atleast_1d(np.asarray(self.qdot, dtype=np.float64))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=np.float64))
        self.thetadot = np.atleast_1d(np.asarray(self.thetadot, dtype=np.float64))

    def copy(self):
        return RobotState(self.q.copy(), self.qdot.copy(),
                          self.theta.copy(), self.thetadot.copy(), self.t)


def mass_matrix(p, q):
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    n = p.n_joints
    if p.coupling == "decoupled" or n == 1:
        return np.diag(p.masses * p.coms**2 + p.inertias)
    m1, m2 = p.masses
    l1 = p.lengths[0]
    lc1, lc2 = p.coms
    i1, i2 = p.inertias
    c2 = np.cos(q[1])
    m11 = i1 + i2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2) + 2.0 * m2 * l1 * lc2 * c2
    m12 = i2 + m2 * lc2**2 + m2 * l1 * lc2 * c2
    m22 = i2 + m2 * lc2**2
    return np.array([[m11, m12], [m12, m22]])


def coriolis(p, q, qdot):
    """Christoffel-form C(q, q') with M' - 2C skew-symmetric."""
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    qdot = np.atleast_1d(np.asarray(qdot, dtype=np.float64))
    n = p.n_joints
    if p.coupling == "decoupled" or n == 1:
        return np.zeros((n, n))
    m2 = p.masses[1]
    l1 = p.lengths[0]
    lc2 = p.coms[1]
    h = -m2 * l1 * lc2 * np.sin(q[1])
    return np.array([
        [h * qdot[1], h * (qdot[0] + qdot[1])],
        [-h * qdot[0], 0.0],
    ])


def gravity_vec(p, q):
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    g0 = p.gravity
    n = p.n_joints
    if p.coupling == "decoupled" or n == 1:
        return p.masses * g0 * p.coms * np.sin(q)
    m1, m2 = p.masses
    l1 = p.lengths[0]
    lc1, lc2 = p.coms
    s1 = np.sin(q[0])
    s12 = np.sin(q[0] + q[1])
    return np.array([
        (m1 * lc1 + m2 * l1) * g0 * s1 + m2 * lc2 * g0 * s12,
        m2 * lc2 * g0 * s12,
    ])


def mass_matrix_dot(p, q, qdot):
    """dM/dt along (q, q'); equals C + C^T for Christoffel C."""
    c = coriolis(p, q, qdot)
    return c + c.T


def sea_torque(p, state):
    """Transmitted spring torque tau_o = K (theta - q)."""
    return p.k_spring * (state.theta - state.q)


def _accelerations(p, q, qdot, theta, thetadot, u, tau_e):
    tau_o = p.k_spring * (theta - q)
    rhs = tau_o + tau_e - coriolis(p, q, qdot) @ qdot - gravity_vec(p, q)
    if p.coupling == "decoupled" or p.n_joints == 1:
        qddot = rhs / (p.masses * p.coms**2 + p.inertias)
    else:
        qddot = np.linalg.solve(mass_matrix(p, q), rhs)
    thetaddot = (u - tau_o) / p.rotor_inertia
    return qddot, thetaddot


def step(p, state, u, tau_e, dt):
    """One RK4 step of the coupled link/rotor ODE with constant u, tau_e.

    dt must lie in (0, 0.01]; non-finite state raises NumericalDivergence.
    """
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must be in (0, 0.01], got %r" % (dt,))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    tau_e = np.atleast_1d(np.asarray(tau_e, dtype=np.float64))

    def deriv(q, qdot, theta, thetadot):
        qdd, tdd = _accelerations(p, q, qdot, theta, thetadot, u, tau_e)
        return qdot, qdd, thetadot, tdd

    q, qd, th, thd = state.q, state.qdot, state.theta, state.thetadot
    k1 = deriv(q, qd, th, thd)
    k2 = deriv(q + 0.5 * dt * k1[0], qd + 0.5 * dt * k1[1],
               th + 0.5 * dt * k1[2], thd + 0.5 * dt * k1[3])
    k3 = deriv(q + 0.5 * dt * k2[0], qd + 0.5 * dt * k2[1],
               th + 0.5 * dt * k2[2], thd + 0.5 * dt * k2[3])
    k4 = deriv(q + dt * k3[0], qd + dt * k3[1], th + dt * k3[2], thd + dt * k3[3])
    new = RobotState(
        q + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        qd + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        th + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        thd + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
        state.t + dt,
    )
    if not (np.all(np.isfinite(new.q)) and np.all(np.isfinite(new.qdot))
            and np.all(np.isfinite(new.theta)) and np.all(np.isfinite(new.thetadot))):
        raise NumericalDivergence("plant state non-finite at t=%.6f" % new.t)
    return new


def link_potential(p, q):
    """Gravitational potential energy (zero at the hanging configuration)."""
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    g0 = p.gravity
    if p.coupling == "decoupled" or p.n_joints == 1:
        return float(np.sum(p.masses * g0 * p.coms * (1.0 - np.cos(q))))
    m1, m2 = p.masses
    l1 = p.lengths[0]
    lc1, lc2 = p.coms
    h1 = lc1 * (1.0 - np.cos(q[0]))
    h2 = l1 * (1.0 - np.cos(q[0])) + lc2 * (1.0 - np.cos(q[0] + q[1]))
    return float(g0 * (m1 * h1 + m2 * h2))


def total_energy(p, state):
    """Kinetic + rotor kinetic + spring elastic + gravitational energy."""
    m = mass_matrix(p, state.q)
    defl = state.theta - state.q
    return (
        0.5 * float(state.qdot @ m @ state.qdot)
        + 0.5 * float(np.sum(p.rotor_inertia * state.thetadot**2))
        + 0.5 * float(np.sum(p.k_spring * defl**2))
        + link_potential(p, state.q)
    )
