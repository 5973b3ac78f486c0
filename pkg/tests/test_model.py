"""Plant construction, state-space lift, and dynamics consistency checks."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powersat.model import (
    LinearPlant,
    State,
    fin_from_config,
    fin_system_model,
    linear_to_statespace,
    two_link_from_config,
    two_link_model,
)

RNG = np.random.default_rng(20260816)


def test_state_validates_dimensions():
    s = State([0.1, 0.2], [0.3, 0.4])
    assert s.dof == 2
    np.testing.assert_array_equal(s.stacked(), [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        State([0.1, 0.2], [0.3])


# -- two-link arm -----------------------------------------------------------

def test_two_link_closed_form_entries():
    # independent hand derivation of the uniform-rod completion:
    # M11 = I1 + I2 + m2 h1^2 + 2 m2 h1 (h2/2) cos q2 = 37.5 + 12 cos q2
    # M12 = I2 + m2 h1 (h2/2) cos q2 = 7.5 + 6 cos q2,  M22 = I2 = 7.5
    # G1 = (m1 h1/2 + m2 h1) g cos q1 + m2 (h2/2) g cos(q1+q2)
    #    = 196 cos q1 + 58.8 cos(q1+q2),  G2 = 58.8 cos(q1+q2)
    arm = two_link_model()
    for q2 in (-2.0, -0.3, 0.0, 1.1, 2.9):
        m = arm.mass_fn(np.array([0.7, q2]))
        assert m[0, 0] == pytest.approx(37.5 + 12 * np.cos(q2), abs=1e-12)
        assert m[0, 1] == pytest.approx(7.5 + 6 * np.cos(q2), abs=1e-12)
        assert m[1, 0] == m[0, 1]
        assert m[1, 1] == 7.5
    for q1, q2 in [(-np.pi / 2, np.pi), (0.4, -1.2), (2.0, 0.3)]:
        g = arm.gravity_fn(np.array([q1, q2]))
        assert g[0] == pytest.approx(
            196 * np.cos(q1) + 58.8 * np.cos(q1 + q2), abs=1e-10)
        assert g[1] == pytest.approx(58.8 * np.cos(q1 + q2), abs=1e-10)
    np.testing.assert_array_equal(arm.damping, np.diag([10.0, 10.0]))


def test_two_link_mass_symmetric_and_spd():
    arm = two_link_model()
    for _ in range(100):
        q = RNG.uniform(-np.pi, np.pi, 2)
        m = arm.mass_fn(q)
        np.testing.assert_allclose(m, m.T, atol=0)
        assert np.linalg.eigvalsh(m).min() > 0


def test_two_link_mdot_minus_2c_skew():
    # finite-difference dM/dt against the Coriolis completion
    arm = two_link_model()
    eps = 1e-6
    for _ in range(100):
        q = RNG.uniform(-np.pi, np.pi, 2)
        qd = RNG.uniform(-3, 3, 2)
        mdot = (arm.mass_fn(q + eps * qd) - arm.mass_fn(q - eps * qd)) \
            / (2 * eps)
        n = mdot - 2 * arm.coriolis_fn(q, qd)
        assert np.abs(n + n.T).max() < 1e-6


def test_two_link_gravity_is_potential_gradient():
    arm = two_link_model()
    eps = 1e-7
    for _ in range(50):
        q = RNG.uniform(-np.pi, np.pi, 2)
        for j in range(2):
            dq = np.zeros(2)
            dq[j] = eps
            fd = (arm.potential_fn(q + dq) - arm.potential_fn(q - dq)) \
                / (2 * eps)
            assert arm.gravity_fn(q)[j] == pytest.approx(fd, abs=1e-5)


def _rk4_step(accel, q, qd, u, dt):
    def f(q, qd):
        return qd, accel(q, qd, u)
    k1q, k1v = f(q, qd)
    k2q, k2v = f(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, qd + dt * k3v)
    return (q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q),
            qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def test_two_link_undamped_energy_conservation():
    # drop the swinging arm with no damping and no input; total energy
    # must be flat to 1e-4 over one second at dt = 1e-4
    arm = two_link_model(joint_damping=0.0)
    q = np.array([-np.pi / 4, 0.6])
    qd = np.array([0.0, 0.0])
    e0 = arm.energy(q, qd)
    dt, zero = 1e-4, np.zeros(2)
    worst = 0.0
    for _ in range(10000):
        q, qd = _rk4_step(arm.accel, q, qd, zero, dt)
        worst = max(worst, abs(arm.energy(q, qd) - e0))
    assert worst < 1e-4


def test_two_link_damped_energy_decreases():
    arm = two_link_model()
    q = np.array([-np.pi / 4, 0.6])
    qd = np.array([0.0, 0.0])
    energies = [arm.energy(q, qd)]
    dt, zero = 1e-3, np.zeros(2)
    for _ in range(2000):
        q, qd = _rk4_step(arm.accel, q, qd, zero, dt)
        energies.append(arm.energy(q, qd))
    assert energies[-1] < energies[0]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_two_link_accel_solves_dynamics():
    arm = two_link_model()
    q = np.array([0.3, -1.1])
    qd = np.array([1.5, -0.4])
    u = np.array([20.0, -5.0])
    qdd = arm.accel(q, qd, u)
    residual = arm.mass_fn(q) @ qdd + arm.coriolis_fn(q, qd) @ qd \
        + arm.damping @ qd + arm.gravity_fn(q) - u
    np.testing.assert_allclose(residual, 0, atol=1e-10)


# -- fin system and state-space lift ----------------------------------------

def test_fin_system_statespace():
    plant = fin_system_model()
    f_c, h_c, g_c = linear_to_statespace(plant)
    np.testing.assert_allclose(
        f_c, np.block([[np.zeros((4, 4)), np.eye(4)],
                       [np.zeros((4, 4)), -0.05 * np.eye(4)]]), atol=0)
    np.testing.assert_allclose(
        h_c, np.vstack([np.zeros((4, 4)), np.eye(4)]), atol=0)
    np.testing.assert_array_equal(g_c, np.zeros(8))
    # zero input holds any pure-position state fixed
    np.testing.assert_array_equal(
        f_c @ np.array([1, 2, 3, 4, 0, 0, 0, 0]) + g_c, np.zeros(8))


def test_statespace_reconstructs_random_plant():
    for _ in range(20):
        n = int(RNG.integers(1, 5))
        a = RNG.standard_normal((n, n))
        m = a @ a.T + n * np.eye(n)
        dmat = np.diag(RNG.uniform(0, 2, n))
        kmat = np.diag(RNG.uniform(0, 5, n))
        grav = RNG.standard_normal(n)
        plant = LinearPlant(m, dmat, kmat, np.eye(n), grav, 0, n)
        f_c, h_c, g_c = linear_to_statespace(plant)
        # read M back out of the lift: M = S (H_c lower block)^{-1}
        np.testing.assert_allclose(
            np.linalg.inv(h_c[n:]), m, atol=1e-10 * np.abs(m).max())
        np.testing.assert_allclose(f_c[n:, :n], -np.linalg.solve(m, kmat),
                                   atol=1e-12)
        np.testing.assert_allclose(f_c[n:, n:], -np.linalg.solve(m, dmat),
                                   atol=1e-12)
        np.testing.assert_allclose(g_c[n:], -np.linalg.solve(m, grav),
                                   atol=1e-12)


def test_underactuated_selection_shape():
    plant = LinearPlant(mass=np.eye(3), damping=np.zeros((3, 3)),
                        stiffness=np.eye(3),
                        actuator_selection=np.vstack([np.zeros((1, 2)),
                                                      np.eye(2)]),
                        gravity_offset=np.zeros(3), n_u=1, n_a=2)
    _, h_c, _ = linear_to_statespace(plant)
    assert h_c.shape == (6, 2)
    with pytest.raises(ValueError):
        LinearPlant(np.eye(3), np.zeros((3, 3)), np.eye(3),
                    np.ones((3, 2)), np.zeros(3), 1, 2)


def test_plant_rejects_bad_matrices():
    with pytest.raises(ValueError):
        LinearPlant(np.diag([1.0, -1.0]), np.zeros((2, 2)),
                    np.zeros((2, 2)), np.eye(2), np.zeros(2), 0, 2)
    with pytest.raises(ValueError):
        LinearPlant(np.eye(2), np.diag([1.0, -0.5]), np.zeros((2, 2)),
                    np.eye(2), np.zeros(2), 0, 2)


@given(st.floats(0.1, 10), st.floats(0.0, 2.0))
@settings(deadline=None, max_examples=30)
def test_single_channel_lift(m, d):
    plant = fin_system_model(m=m, d=d, n_fins=1)
    f_c, h_c, _ = linear_to_statespace(plant)
    assert f_c[1, 1] == pytest.approx(-d / m, rel=1e-12)
    assert h_c[1, 0] == pytest.approx(1 / m, rel=1e-12)


# -- JSON configuration ------------------------------------------------------

def test_config_loaders(tmp_path):
    cfg = {"m1": 16, "m2": 12, "I1": 18, "I2": 7.5,
           "h1": 1, "h2": 1, "d": 10, "g": 9.8}
    path = tmp_path / "arm.json"
    path.write_text(json.dumps(cfg))
    arm = two_link_from_config(path)
    ref = two_link_model()
    q = np.array([0.5, -0.7])
    np.testing.assert_array_equal(arm.mass_fn(q), ref.mass_fn(q))
    np.testing.assert_array_equal(arm.gravity_fn(q), ref.gravity_fn(q))

    fin = fin_from_config({"m": 2.0, "d": 0.1})
    assert fin.mass[0, 0] == 2.0
    assert fin.damping[2, 2] == 0.1
