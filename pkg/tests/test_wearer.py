import io

import numpy as np
import pytest

from exoadapt import wearer
from exoadapt.wearer import (
    ConflictEvent, DiscreteMotion, TaskGait, apply_task_map, heel_strikes,
    intended_trajectory, intended_velocity, intent_tables, interaction_torque,
    population_from_csv, population_to_csv, sample_population,
)


def test_population_deterministic_and_distinct():
    a = sample_population(5, seed=7)
    b = sample_population(5, seed=7)
    for pa, pb in zip(a, b):
        assert pa.cadence_hz == pb.cadence_hz
        assert np.array_equal(pa.gaits["walk"].amplitudes_deg,
                              pb.gaits["walk"].amplitudes_deg)
    # mutually distinct gait parameters
    amps = [tuple(p.gaits["walk"].amplitudes_deg.ravel()) for p in a]
    assert len(set(amps)) == 5


def test_zero_noise_variants_equal_fixed_map():
    (p,) = sample_population(1, seed=3, task_noise=0.0)
    for task in wearer.TASKS[1:]:
        expect = apply_task_map(p.gaits["walk"], p.cadence_hz, task)
        got = p.gaits[task]
        if isinstance(expect, TaskGait):
            assert np.allclose(got.amplitudes_deg, expect.amplitudes_deg, atol=1e-12)
            assert np.allclose(got.phases_rad, expect.phases_rad, atol=1e-12)
            assert np.allclose(got.offset_deg, expect.offset_deg, atol=1e-12)
        else:
            assert np.allclose(got.start_deg, expect.start_deg, atol=1e-12)
            assert np.allclose(got.delta_deg, expect.delta_deg, atol=1e-12)
            assert np.allclose(got.bump_deg, expect.bump_deg, atol=1e-12)
            assert abs(got.duration - expect.duration) < 1e-12


def test_cadence_band_and_monte_carlo_mean():
    pop = sample_population(1000, seed=11)
    cad = np.array([p.cadence_hz for p in pop])
    assert np.all((cad >= 0.5) & (cad <= 1.5))
    assert 0.8 < cad.mean() < 1.2


def test_walk_trajectory_matches_harmonic_oracle():
    (p,) = sample_population(1, seed=5)
    g = p.gaits["walk"]
    f = p.cadence_hz
    t = 0.37
    for j in range(2):
        expected = g.offset_deg[j]
        for k in (1, 2, 3):
            expected += g.amplitudes_deg[j, k - 1] * np.sin(
                2 * np.pi * f * k * t + g.phases_rad[j, k - 1]
            )
        expected = np.deg2rad(expected)
        assert abs(intended_trajectory(p, "walk", t)[j] - expected) < 1e-12


def test_walk_trajectory_periodic():
    (p,) = sample_population(1, seed=9)
    period = 1.0 / p.cadence_hz
    t = np.linspace(0, period, 50)
    a = intended_trajectory(p, "walk", t)
    b = intended_trajectory(p, "walk", t + period)
    assert np.max(np.abs(a - b)) < 1e-10


def test_velocity_matches_finite_difference():
    (p,) = sample_population(1, seed=13)
    eps = 1e-7
    for task in ("walk", "stairs_up", "squat"):
        for t in (0.21, 0.53, 1.1):
            fd = (intended_trajectory(p, task, t + eps)
                  - intended_trajectory(p, task, t - eps)) / (2 * eps)
            assert np.max(np.abs(intended_velocity(p, task, t) - fd)) < 1e-5


def test_discrete_motion_holds_final_posture():
    (p,) = sample_population(1, seed=2)
    dur = p.gaits["squat"].duration
    q_end = intended_trajectory(p, "squat", dur)
    for t in (dur, dur + 0.5, dur + 3.0):
        assert np.max(np.abs(intended_trajectory(p, "squat", t) - q_end)) < 1e-12
        assert np.max(np.abs(intended_velocity(p, "squat", t))) == 0.0
    # start value is the parameterized start
    q0 = intended_trajectory(p, "squat", 0.0)
    assert np.allclose(np.rad2deg(q0), p.gaits["squat"].start_deg, atol=1e-12)


def test_interaction_torque_zero_on_perfect_tracking():
    (p,) = sample_population(1, seed=1)
    t = 0.4
    q = intended_trajectory(p, "walk", t)
    qd = intended_velocity(p, "walk", t)
    assert np.max(np.abs(interaction_torque(p, "walk", t, q, qd))) < 1e-12


def test_interaction_torque_linear_in_deviation():
    (p,) = sample_population(1, seed=1)
    t = 0.4
    q = intended_trajectory(p, "walk", t)
    qd = intended_velocity(p, "walk", t)
    dq = np.array([0.05, -0.02])
    dqd = np.array([-0.3, 0.1])
    tau = interaction_torque(p, "walk", t, q + dq, qd + dqd)
    assert np.allclose(tau, -p.k_h * dq - p.c_h * dqd, atol=1e-12)


def test_asynchronization_peak_torque_ratio():
    # robot tracks the nominal intent with a 30 ms servo lag; a severity-1
    # asynchronization event multiplies the peak torque by well over 3.
    (p,) = sample_population(1, seed=21)
    period = 1.0 / p.cadence_hz
    lag = 0.030
    conflict = ConflictEvent("asynchronization", onset=0.0, duration=10.0, severity=1.0)
    t_grid = np.linspace(0.0, period, 400)

    def peak(c):
        best = 0.0
        for t in t_grid:
            q = intended_trajectory(p, "walk", t - lag)
            qd = intended_velocity(p, "walk", t - lag)
            tau = interaction_torque(p, "walk", t, q, qd, conflict=c)
            best = max(best, np.max(np.abs(tau)))
        return best

    assert peak(conflict) > 3.0 * peak(None)


def test_imbalance_scales_stiffness_and_adds_drift():
    (p,) = sample_population(1, seed=8)
    conflict = ConflictEvent("imbalance", onset=1.0, duration=5.0, severity=0.6)
    t = 2.0
    q = intended_trajectory(p, "walk", t)
    qd = intended_velocity(p, "walk", t)
    tau = interaction_torque(p, "walk", t, q, qd, conflict=conflict)
    drift = 0.6 * wearer.DRIFT_AMP_RAD * np.sin(2 * np.pi * wearer.DRIFT_HZ * (t - 1.0))
    drift_vel = 0.6 * wearer.DRIFT_AMP_RAD * 2 * np.pi * wearer.DRIFT_HZ \
        * np.cos(2 * np.pi * wearer.DRIFT_HZ * (t - 1.0))
    # the event strikes the first joint only; the other side stays clean
    expected = np.zeros(p.n_joints)
    expected[0] = 0.4 * p.k_h[0] * drift + p.c_h[0] * drift_vel
    assert np.allclose(tau, expected, atol=1e-12)
    # effective intent variance strictly grows vs the clean tables
    tt = np.linspace(1.0, 6.0, 500)
    q_c, _, _ = intent_tables(p, "walk", tt)
    q_i, _, ks = intent_tables(p, "walk", tt, conflict=conflict)
    assert np.var(q_i[:, 0] - q_c[:, 0]) > 0.0
    assert np.array_equal(q_i[:, 1:], q_c[:, 1:])
    assert np.all(ks <= 1.0) and ks.min() == pytest.approx(0.4)
    assert np.all(ks[:, 1:] == 1.0)


def test_intent_tables_match_pointwise_path():
    (p,) = sample_population(1, seed=17)
    conflict = ConflictEvent("asynchronization", onset=0.5, duration=1.0, severity=0.7)
    tt = np.linspace(0.0, 2.0, 101)
    q_h, qd_h, k_scale = intent_tables(p, "walk", tt, conflict=conflict)
    q = np.zeros(2)
    qd = np.zeros(2)
    for i, t in enumerate(tt):
        tau_pt = interaction_torque(p, "walk", t, q, qd, conflict=conflict)
        tau_tab = k_scale[i] * p.k_h * (q_h[i] - q) + p.c_h * (qd_h[i] - qd)
        assert np.max(np.abs(tau_pt - tau_tab)) < 1e-12


def test_conflict_validation():
    with pytest.raises(ValueError):
        ConflictEvent("nope", 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        ConflictEvent("imbalance", 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        ConflictEvent("imbalance", 0.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        ConflictEvent("imbalance", -1.0, 1.0, 0.5)


def test_heel_strikes_constant_rate():
    t = np.arange(0.0, 10.0 + 1e-9, 0.01)
    phase = 2 * np.pi * 1.0 * t
    ev = heel_strikes(t, phase)
    assert len(ev) == 10
    assert np.max(np.abs(ev - np.arange(1, 11))) < 0.01


def test_heel_strikes_chirp_against_quadrature_oracle():
    # phase(t) = 2*pi*(f0*t + 0.5*r*t^2); crossing times solve the quadratic
    f0, r = 0.8, 0.05
    t = np.arange(0.0, 12.0, 0.005)
    phase = 2 * np.pi * (f0 * t + 0.5 * r * t * t)
    ev = heel_strikes(t, phase)
    for m, te in enumerate(ev, start=1):
        # closed-form root of f0*t + r*t^2/2 = m
        t_true = (-f0 + np.sqrt(f0 * f0 + 2 * r * m)) / r
        assert abs(te - t_true) < 0.005


def test_heel_strikes_rejects_empty():
    with pytest.raises(ValueError):
        heel_strikes(np.array([]), np.array([]))


def test_population_csv_round_trip():
    pop = sample_population(3, seed=19)
    buf = io.StringIO()
    population_to_csv(pop, buf, header_comment="config_hash=deadbeef seed=19")
    buf.seek(0)
    back = population_from_csv(buf)
    assert len(back) == 3
    for a, b in zip(pop, back):
        assert a.subject_id == b.subject_id
        assert a.cadence_hz == b.cadence_hz
        assert np.array_equal(a.k_h, b.k_h)
        for task in wearer.TASKS:
            ga, gb = a.gaits[task], b.gaits[task]
            if isinstance(ga, TaskGait):
                assert np.array_equal(ga.amplitudes_deg, gb.amplitudes_deg)
                assert np.array_equal(ga.phases_rad, gb.phases_rad)
                assert np.array_equal(ga.offset_deg, gb.offset_deg)
            else:
                assert np.array_equal(ga.start_deg, gb.start_deg)
                assert np.array_equal(ga.bump_deg, gb.bump_deg)
                assert ga.duration == gb.duration
