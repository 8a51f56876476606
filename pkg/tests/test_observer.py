"""Interaction torque observer: workspace bounds, convergence, error ball."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from exoadapt import dynamics, observer
from support import co_integrate, equilibrium_state

Q_RANGE = (-0.2, 1.2)
QD_RANGE = (-4.0, 4.0)


@pytest.fixture(scope="module")
def knee_setup():
    p = dynamics.knee_plant()
    sig1, sig2 = observer.compute_bounds(p, Q_RANGE, QD_RANGE)
    return p, sig1, sig2


class TestBounds:
    def test_one_link_constant_mass(self):
        p = dynamics.knee_plant(n_joints=1)
        s1, s2 = observer.compute_bounds(p, Q_RANGE, QD_RANGE, inflation=0.0)
        assert s1 == 0.0
        assert s2 == pytest.approx(3.0 * 0.2**2 + 0.05, rel=1e-12)

    def test_two_link_covers_denser_grid(self):
        p = dynamics.serial_plant()
        s1, s2 = observer.compute_bounds(p, (-0.5, 1.0), (-3.0, 3.0))
        rng = np.random.default_rng(99)
        qs = rng.uniform(-0.5, 1.0, size=(100_000, 2))
        qds = rng.uniform(-3.0, 3.0, size=(100_000, 2))
        worst_m = worst_md = 0.0
        for i in range(0, 100_000, 10):  # denser check, thinned for speed
            worst_m = max(worst_m, np.abs(np.linalg.eigvalsh(
                dynamics.mass_matrix(p, qs[i]))).max())
            worst_md = max(worst_md, np.abs(np.linalg.eigvalsh(
                dynamics.mass_matrix_dot(p, qs[i], qds[i]))).max())
        assert worst_m <= s2
        assert worst_md <= s1

    def test_doubling_mass_doubles_bounds(self):
        p = dynamics.serial_plant()
        a1, b1 = observer.compute_bounds(p, (-0.5, 1.0), (-3.0, 3.0))
        p2 = dynamics.serial_plant(mass=6.0, inertia=0.10)
        a2, b2 = observer.compute_bounds(p2, (-0.5, 1.0), (-3.0, 3.0))
        assert b2 == pytest.approx(2.0 * b1, rel=1e-12)
        assert a2 == pytest.approx(2.0 * a1, rel=1e-12)


class TestConstruction:
    def test_gain_formula(self, knee_setup):
        _, sig1, sig2 = knee_setup
        obs = observer.make_observer(sig1, sig2, 2, beta=20.0)
        assert obs.a_inv == pytest.approx(0.5 * (sig1 + 2 * 20.0 * sig2),
                                          rel=1e-15)

    def test_initial_estimate_zero(self, knee_setup):
        _, sig1, sig2 = knee_setup
        qd0 = np.array([1.3, -0.4])
        obs = observer.make_observer(sig1, sig2, 2, qdot0=qd0)
        np.testing.assert_allclose(observer.estimate(obs, qd0), 0.0, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            observer.make_observer(0.1, -1.0, 2)
        with pytest.raises(ValueError):
            observer.make_observer(0.1, 1.0, 2, beta=0.0)


class TestConvergence:
    def test_rest_zero_disturbance_fixed_point(self, knee_setup):
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        state, _ = equilibrium_state(p, q0)
        obs = observer.make_observer(sig1, sig2, 2)
        for _ in range(500):
            obs = observer.observer_step(obs, p, state, 1e-3)
        assert np.abs(obs.tau_hat).max() < 1e-12

    def test_moving_zero_disturbance_stays_zero(self, knee_setup):
        # y seeded on the tau_hat = 0 manifold stays there while the
        # plant swings freely; the error subsystem is homogeneous
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        state, _ = equilibrium_state(p, q0)
        state.qdot = np.array([1.0, -0.5])
        obs = observer.make_observer(sig1, sig2, 2, qdot0=state.qdot)
        zero = lambda t: np.zeros(2)
        _, _, hist = co_integrate(p, obs, zero, zero, state, 0.5, 1e-3)
        worst = max(np.abs(h[1]).max() for h in hist)
        assert worst < 1e-12

    def test_constant_step_converges_fast(self, knee_setup):
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        state, g0 = equilibrium_state(p, q0)
        obs = observer.make_observer(sig1, sig2, 2)
        tau_c = np.array([2.0, -1.0])
        _, _, hist = co_integrate(p, obs, lambda t: tau_c, lambda t: g0,
                                  state, 0.5, 1e-3)
        assert np.linalg.norm(hist[-1][1] - tau_c) < 1e-3

    def test_matches_adaptive_integrator(self, knee_setup):
        # same ODE through solve_ivp at tight tolerance
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        state, g0 = equilibrium_state(p, q0)
        obs = observer.make_observer(sig1, sig2, 2)
        tau_c = np.array([2.0, -1.0])

        def rhs(t, x):
            q, qd, th, thd, y = x[:2], x[2:4], x[4:6], x[6:8], x[8:]
            qdd, tdd = dynamics._accelerations(p, q, qd, th, thd, g0, tau_c)
            ydot = observer.aux_derivative(p, y, obs.a_inv, q, qd, th)
            return np.r_[qd, qdd, thd, tdd, ydot]

        x0 = np.r_[state.q, state.qdot, state.theta, state.thetadot, obs.y]
        sol = solve_ivp(rhs, (0.0, 0.5), x0, rtol=1e-10, atol=1e-12)
        ref = sol.y[8:, -1] + obs.a_inv * sol.y[2:4, -1]
        _, _, hist = co_integrate(p, obs, lambda t: tau_c, lambda t: g0,
                                  state, 0.5, 1e-3)
        assert np.linalg.norm(hist[-1][1] - ref) < 1e-9

    def test_decay_steepens_with_beta(self, knee_setup):
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        tau_c = np.array([2.0, -1.0])
        slopes = []
        for beta in (10.0, 30.0):
            state, g0 = equilibrium_state(p, q0)
            obs = observer.make_observer(sig1, sig2, 2, beta=beta)
            _, _, hist = co_integrate(p, obs, lambda t: tau_c, lambda t: g0,
                                      state, 0.3, 1e-3)
            errs = np.array([np.linalg.norm(h[1] - tau_c) for h in hist])
            ts = np.array([h[0] for h in hist])
            coef = np.polyfit(ts[50:250], np.log(errs[50:250]), 1)
            slopes.append(coef[0])
        assert slopes[0] < 0
        assert slopes[1] < slopes[0]  # more negative at larger beta


class TestUltimateBound:
    def test_gamma_closed_form_when_mass_constant(self, knee_setup):
        p, sig1, sig2 = knee_setup
        obs = observer.make_observer(sig1, sig2, 2)
        g = observer.gamma_matrix(obs, p, np.array([0.3, 0.5]),
                                  np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, (2.0 / obs.a_inv) * np.eye(2),
                                   atol=1e-15)
        assert observer.gamma_min(obs, p, np.zeros(2), np.zeros(2)) == \
            pytest.approx(2.0 / obs.a_inv, rel=1e-12)

    def test_gamma_positive_along_serial_motion(self):
        p = dynamics.serial_plant()
        sig1, sig2 = observer.compute_bounds(p, (-0.5, 1.0), (-3.0, 3.0))
        obs = observer.make_observer(sig1, sig2, 2)
        rng = np.random.default_rng(3)
        for _ in range(200):
            q = rng.uniform(-0.5, 1.0, 2)
            qd = rng.uniform(-3.0, 3.0, 2)
            assert observer.gamma_min(obs, p, q, qd) > 0

    def test_ramp_error_inside_ball(self, knee_setup):
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        state, g0 = equilibrium_state(p, q0)
        obs = observer.make_observer(sig1, sig2, 2)
        slope = np.array([4.0, -3.0])  # ||taudot|| = 5
        _, _, hist = co_integrate(p, obs, lambda t: t * slope,
                                  lambda t: g0, state, 1.0, 1e-3)
        radius = observer.ultimate_bound_radius(obs, p, q0, np.zeros(2),
                                                zeta=5.0)
        tail = [np.linalg.norm(h[1] - h[2]) for h in hist[500:]]
        assert max(tail) <= radius

    def test_random_profiles_enter_and_stay(self, knee_setup):
        p, sig1, sig2 = knee_setup
        q0 = np.array([0.4, 0.6])
        rng = np.random.default_rng(11)
        for _ in range(3):
            amp = rng.uniform(0.5, 3.0, 2)
            frq = rng.uniform(1.0, 4.0, 2)
            phs = rng.uniform(0.0, 2 * np.pi, 2)
            off = rng.uniform(-1.0, 1.0, 2)
            tau_fn = lambda t: off + amp * np.sin(frq * t + phs)
            zeta = float(np.linalg.norm(amp * frq))
            state, g0 = equilibrium_state(p, q0)
            obs = observer.make_observer(sig1, sig2, 2)
            _, _, hist = co_integrate(p, obs, tau_fn, lambda t: g0,
                                      state, 1.5, 1e-3)
            radius = observer.ultimate_bound_radius(obs, p, q0, np.zeros(2),
                                                    zeta=zeta)
            errs = [np.linalg.norm(h[1] - h[2]) for h in hist]
            assert max(errs[500:]) <= radius

    def test_radius_validation(self, knee_setup):
        p, sig1, sig2 = knee_setup
        obs = observer.make_observer(sig1, sig2, 2)
        with pytest.raises(ValueError):
            observer.ultimate_bound_radius(obs, p, np.zeros(2), np.zeros(2),
                                           zeta=1.0, rho=1.5)
