"""Shared helpers for tests: a plant+observer co-integrator used as the
reference route when checking observer behavior outside the episode
machinery."""

import numpy as np

from exoadapt import dynamics, observer


def co_integrate(p, obs, tau_fn, u_fn, state0, t_final, dt):
    """RK4 of (q, qdot, theta, thetadot, y) with tau_e(t) evaluated at
    stage times and u held constant across each step.

    Returns (final RobotState-like tuple, y, history) where history is a
    list of (t, tau_hat, tau_true) after every step.
    """
    q, qd = state0.q.copy(), state0.qdot.copy()
    th, thd = state0.theta.copy(), state0.thetadot.copy()
    y = obs.y.copy()
    a = obs.a_inv
    hist = []
    n = int(round(t_final / dt))
    for k in range(n):
        t = k * dt
        u = u_fn(t)

        def f(q, qd, th, thd, y, t):
            qdd, tdd = dynamics._accelerations(p, q, qd, th, thd, u, tau_fn(t))
            ydot = observer.aux_derivative(p, y, a, q, qd, th)
            return qd, qdd, thd, tdd, ydot

        k1 = f(q, qd, th, thd, y, t)
        k2 = f(q + 0.5 * dt * k1[0], qd + 0.5 * dt * k1[1],
               th + 0.5 * dt * k1[2], thd + 0.5 * dt * k1[3],
               y + 0.5 * dt * k1[4], t + 0.5 * dt)
        k3 = f(q + 0.5 * dt * k2[0], qd + 0.5 * dt * k2[1],
               th + 0.5 * dt * k2[2], thd + 0.5 * dt * k2[3],
               y + 0.5 * dt * k2[4], t + 0.5 * dt)
        k4 = f(q + dt * k3[0], qd + dt * k3[1], th + dt * k3[2],
               thd + dt * k3[3], y + dt * k3[4], t + dt)
        q = q + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        qd = qd + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th = th + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        thd = thd + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        y = y + dt / 6.0 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        hist.append((t + dt, y + a * qd, tau_fn(t + dt)))
    return (q, qd, th, thd), y, hist


def equilibrium_state(p, q0):
    """Rest state with the spring wound to balance gravity exactly."""
    g0 = dynamics.gravity_vec(p, q0)
    theta0 = q0 + g0 / p.k_spring
    return dynamics.RobotState(q0, np.zeros_like(q0), theta0,
                               np.zeros_like(q0), 0.0), g0
