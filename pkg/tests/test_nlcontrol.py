import json
import math

import numpy as np
import pytest

from powersat.model import State, two_link_model
from powersat.nlcontrol import (
    PBCGains,
    swingup_gains,
    pbc_control,
    pbc_lyapunov,
    pbc_lyapunov_rate,
    run_swingup_example,
    run_pbc_scenario,
)
from powersat.powerlim import PowerBudget, PsatMode, psat_vector
from powersat.sim import simulate

MODEL = two_link_model()
GAINS = swingup_gains()
BUDGET = PowerBudget(per_joint_limit=(1000.0, 1000.0),
                     normalized_resistance=(0.0, 0.0))
WN = 2.0 * math.pi * math.sqrt(2.0)


class TestGains:
    def test_swingup_gain_values(self):
        assert np.allclose(np.diag(GAINS.k_p),
                           [16.0 * WN ** 2, 12.0 * WN ** 2], rtol=1e-12)
        assert np.allclose(np.diag(GAINS.k_d),
                           [2 * 16 * 0.9 * WN, 2 * 12 * 0.9 * WN],
                           rtol=1e-12)

    def test_kp_must_be_positive_definite(self):
        with pytest.raises(ValueError):
            PBCGains(k_p=np.diag([1.0, 0.0]), k_d=np.eye(2))
        with pytest.raises(ValueError):
            PBCGains(k_p=np.array([[1.0, 2.0], [0.0, 1.0]]), k_d=np.eye(2))

    def test_kd_semidefinite_allowed(self):
        g = PBCGains(k_p=np.eye(2), k_d=np.zeros((2, 2)))
        assert np.allclose(g.k_d, 0.0)
        with pytest.raises(ValueError):
            PBCGains(k_p=np.eye(2), k_d=-np.eye(2))


class TestControlLaw:
    def test_origin_outputs_gravity(self):
        u = pbc_control(MODEL, GAINS, np.zeros(2), np.zeros(2))
        assert np.allclose(u, [196.0 + 58.8, 58.8], atol=1e-12)

    def test_vanishing_gains_leave_gravity_compensation(self):
        g = PBCGains(k_p=1e-9 * np.eye(2), k_d=1e-9 * np.eye(2))
        q = np.array([0.7, -1.2])
        u = pbc_control(MODEL, g, q, np.array([2.0, -3.0]))
        assert np.allclose(u, MODEL.gravity_fn(q), atol=1e-6)

    def test_setpoint_shift(self):
        q_star = np.array([0.3, -0.4])
        u = pbc_control(MODEL, GAINS, q_star, np.zeros(2), q_star=q_star)
        assert np.allclose(u, MODEL.gravity_fn(q_star), atol=1e-12)


class TestLyapunov:
    def test_zero_at_origin(self):
        assert pbc_lyapunov(MODEL, GAINS, np.zeros(2), np.zeros(2)) == 0.0

    def test_rest_reduces_to_spring_energy(self):
        q = np.array([0.5, -0.8])
        v = pbc_lyapunov(MODEL, GAINS, q, np.zeros(2))
        assert np.isclose(v, 0.5 * q @ GAINS.k_p @ q, rtol=1e-12)

    def test_positive_away_from_origin(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            q = rng.uniform(-np.pi, np.pi, 2)
            qd = rng.uniform(-5, 5, 2)
            if np.linalg.norm(np.concatenate([q, qd])) < 1e-6:
                continue
            assert pbc_lyapunov(MODEL, GAINS, q, qd) > 0.0


class TestRate:
    def test_zero_velocity_rate(self):
        q = np.array([1.0, -2.0])
        assert pbc_lyapunov_rate(MODEL, GAINS, BUDGET, q, np.zeros(2)) == 0.0

    def test_inactive_limit_is_damping_quadratic(self):
        q = np.array([0.01, -0.02])
        qd = np.array([0.05, 0.03])
        u = pbc_control(MODEL, GAINS, q, qd)
        assert (u * qd <= BUDGET.per_joint_limit).all()
        rate = pbc_lyapunov_rate(MODEL, GAINS, BUDGET, q, qd)
        assert np.isclose(rate, -qd @ (GAINS.k_d + MODEL.damping) @ qd,
                          rtol=1e-12)

    def test_case_split_matches_generic_formula(self):
        rng = np.random.default_rng(0)
        n_bind = 0
        for _ in range(500):
            q = rng.uniform(-np.pi, np.pi, 2)
            qd = rng.uniform(-6, 6, 2)
            u = pbc_control(MODEL, GAINS, q, qd)
            u_sat = psat_vector(u, qd, BUDGET, PsatMode.EXACT_LOSSLESS)
            generic = qd @ u_sat - qd @ u \
                - qd @ (GAINS.k_d + MODEL.damping) @ qd
            analytic = pbc_lyapunov_rate(MODEL, GAINS, BUDGET, q, qd)
            n_bind += (u * qd > np.asarray(BUDGET.per_joint_limit)).any()
            assert abs(generic - analytic) < 1e-10
            assert analytic <= 1e-9
        assert n_bind > 100

    def test_binding_is_more_negative_than_damping_term(self):
        q = np.array([-math.pi / 2, math.pi])
        qd = np.array([3.0, -4.0])
        u = pbc_control(MODEL, GAINS, q, qd)
        assert (u * qd > np.asarray(BUDGET.per_joint_limit)).any()
        rate = pbc_lyapunov_rate(MODEL, GAINS, BUDGET, q, qd)
        assert rate < -qd @ (GAINS.k_d + MODEL.damping) @ qd


@pytest.fixture(scope="module")
def log():
    return run_swingup_example()


class TestExample3:
    def test_power_respects_budget(self, log):
        assert log.power_per_joint.max() <= 1000.0 + 1e-6
        demanded = log.u_cmd * log.qdot
        assert demanded.max() > 1000.0

    def test_converges_to_origin(self, log):
        tail = np.concatenate([log.q[-1], log.qdot[-1]])
        assert np.linalg.norm(tail) < 1e-2

    def test_lyapunov_non_increasing(self, log):
        v = log.scalars["lyapunov"]
        assert v[0] > 6000.0
        assert np.diff(v).max() <= 1e-6 * v[0]

    def test_fd_rate_oracle(self, log):
        # central-difference dV/dt stays nonpositive up to sampling slop
        v = log.scalars["lyapunov"]
        dt = log.times[1] - log.times[0]
        fd = (v[2:] - v[:-2]) / (2 * dt)
        assert fd.max() <= 1e-4 * v[0]
        # away from limiter switches the analytic rate matches
        pbar = np.asarray(BUDGET.per_joint_limit)
        errs = []
        for k in range(1, len(v) - 1, 37):
            demand = log.u_cmd[k] * log.qdot[k]
            margin = np.abs(demand - pbar).min()
            if margin < 50.0:
                continue
            analytic = pbc_lyapunov_rate(MODEL, GAINS, BUDGET,
                                         log.q[k], log.qdot[k])
            errs.append(abs(analytic - fd[k - 1]) / max(1.0, abs(analytic)))
        assert len(errs) > 50
        assert np.median(errs) < 1e-2


class TestUnlimitedBudget:
    def test_rate_still_nonpositive_and_paths_differ(self):
        wide = PowerBudget(per_joint_limit=(1e12, 1e12),
                           normalized_resistance=(0.0, 0.0))
        x0 = State(q=np.array([-math.pi / 2, math.pi]), qdot=np.zeros(2))

        def controller(t, state):
            u = pbc_control(MODEL, GAINS, state.q, state.qdot)
            return u, {"lyapunov": pbc_lyapunov(MODEL, GAINS, state.q,
                                                state.qdot)}

        free = simulate(MODEL, controller, wide, x0, 2.0, 1e-3)
        capped = simulate(MODEL, controller, BUDGET, x0, 2.0, 1e-3)
        v = free.scalars["lyapunov"]
        assert np.diff(v).max() <= 1e-6 * v[0]
        assert np.abs(free.q - capped.q).max() > 1e-3


class TestScenarioConfig:
    def test_swingup_roundtrip(self, tmp_path):
        cfg = {
            "K_p": [16.0 * WN ** 2, 12.0 * WN ** 2],
            "K_d": [2 * 16 * 0.9 * WN, 2 * 12 * 0.9 * WN],
            "per_joint_limit": [1000.0, 1000.0],
            "q0": [-math.pi / 2, math.pi],
            "qdot0": [0.0, 0.0],
            "t_final": 1.0,
            "dt": 1e-3,
        }
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(cfg))
        from_file = run_pbc_scenario(str(path))
        direct = run_swingup_example(t_final=1.0)
        assert np.array_equal(from_file.q, direct.q)
        assert np.array_equal(from_file.u_applied, direct.u_applied)

    def test_setpoint_scenario_converges_to_target(self):
        q_star = [0.3, -0.4]
        log = run_pbc_scenario({
            "K_p": [16.0 * WN ** 2, 12.0 * WN ** 2],
            "K_d": [2 * 16 * 0.9 * WN, 2 * 12 * 0.9 * WN],
            "per_joint_limit": [1000.0, 1000.0],
            "q0": [-1.0, 1.5],
            "qdot0": [0.0, 0.0],
            "q_star": q_star,
            "t_final": 6.0,
            "dt": 1e-3,
        })
        assert np.allclose(log.q[-1], q_star, atol=1e-3)
        assert np.linalg.norm(log.qdot[-1]) < 1e-3
        v = log.scalars["lyapunov"]
        assert np.diff(v).max() <= 1e-6 * v[0]

    def test_csv_export(self, tmp_path, ):
        log = run_swingup_example(t_final=0.05)
        out = tmp_path / "swingup.csv"
        log.to_csv(str(out))
        header = out.read_text().splitlines()[0]
        assert "p_total" in header and "lyapunov" in header
