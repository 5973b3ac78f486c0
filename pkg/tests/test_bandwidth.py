"""Bandwidth limits: period maxima, feasibility geometry, ratio sweep."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from powersat.bandwidth import (
    BandwidthMode,
    BandwidthProblem,
    feasible,
    kink_points,
    max_bandwidth,
    period_maxima,
    ratio_sweep,
    ratio_sweep_to_csv,
)


def default_problem(y_rad=1.0, p_max=400.0, mode=BandwidthMode.EXACT_POWER,
                    **kw):
    base = dict(m=1.0, d=0.05, k=0.0, tau_c=0.0, amplitude=y_rad,
                qdot_max=4.0, p_max=p_max, mode=mode)
    base.update(kw)
    return BandwidthProblem(**base)


def brute_maxima(problem, wc, n=1_000_001):
    # independent re-derivation on a dense grid, power as torque x speed
    t = np.linspace(0.0, 2 * np.pi / wc, n)
    yb = problem.amplitude / math.sqrt(2.0)
    s, c = np.sin(wc * t), np.cos(wc * t)
    qdot = -yb * wc * s
    u = yb * ((problem.k - problem.m * wc ** 2) * c - problem.d * wc * s) \
        - problem.tau_c * np.sign(s)
    return np.abs(qdot).max(), np.abs(u).max(), (u * qdot).max()


def test_maxima_closed_forms_frictionless():
    p = default_problem()
    yb = p.ybar
    for wc in (0.3, 2.0, 11.0, 80.0):
        qd, u, pw = period_maxima(p, wc)
        assert qd == pytest.approx(yb * wc, rel=1e-12)
        assert u == pytest.approx(
            yb * math.hypot(p.k - p.m * wc ** 2, p.d * wc), rel=1e-12)
        pw_true = 0.5 * yb ** 2 * wc * (
            p.d * wc + math.hypot(p.k - p.m * wc ** 2, p.d * wc))
        assert pw == pytest.approx(pw_true, rel=1e-12)


def test_maxima_match_brute_force_general():
    p = default_problem(y_rad=0.4, k=30.0, tau_c=0.8)
    for wc in (0.7, 5.477, 21.3):
        got = period_maxima(p, wc)
        want = brute_maxima(p, wc)
        for g, w in zip(got, want):
            assert g == pytest.approx(w, rel=1e-6)


def test_coulomb_friction_raises_demands():
    wc = 7.0
    base = default_problem(y_rad=0.4)
    rubbed = default_problem(y_rad=0.4, tau_c=1.5)
    _, u0, p0 = period_maxima(base, wc)
    _, u1, p1 = period_maxima(rubbed, wc)
    assert u1 > u0
    assert p1 > p0  # friction adds to supplied power, never subtracts


def test_feasible_limits():
    p = default_problem()
    assert feasible(p, 1e-3)
    w_speed = p.qdot_max / p.ybar
    slack = default_problem(p_max=1e12, u_max=1e12)
    assert feasible(slack, w_speed * (1 - 1e-9))
    assert not feasible(slack, w_speed * (1 + 1e-9))


def test_feasible_set_is_prefix_interval():
    grid = np.geomspace(1e-2, 1e4, 120)
    for mode in BandwidthMode:
        for y_rad, p_max in [(1.0, 400.0), (0.01, 600.0), (0.1, 200.0)]:
            p = default_problem(y_rad=y_rad, p_max=p_max, mode=mode)
            flags = np.array([feasible(p, float(w)) for w in grid])
            idx = np.flatnonzero(flags)
            assert idx.size > 0
            np.testing.assert_array_equal(idx, np.arange(idx.size))


def test_max_bandwidth_speed_only():
    p = default_problem(y_rad=1.0, p_max=1e12, u_max=1e12)
    assert max_bandwidth(p) == pytest.approx(4.0 * math.sqrt(2.0), rel=1e-5)


def test_max_bandwidth_power_only():
    p = default_problem(y_rad=1.0, qdot_max=1e9, p_max=400.0)
    yb = p.ybar

    def excess(wc):
        return 0.5 * yb ** 2 * wc * (
            p.d * wc + math.hypot(p.m * wc ** 2, p.d * wc)) - p.p_max

    want = brentq(excess, 1e-2, 1e3, xtol=1e-12)
    assert max_bandwidth(p) == pytest.approx(want, rel=1e-5)


def test_max_bandwidth_infeasible_raises():
    with pytest.raises(ValueError):
        max_bandwidth(default_problem(qdot_max=1e-9))


def test_default_torque_limit_from_budget():
    p = default_problem(p_max=400.0)
    assert p.u_max == 100.0


def test_ratio_large_amplitude_is_unity():
    rows = ratio_sweep([57.3], [400.0])
    assert rows[0][4] == pytest.approx(1.0, abs=1e-6)


def test_ratio_small_amplitude_near_two():
    rows = ratio_sweep([0.5], [600.0])
    assert rows[0][4] == pytest.approx(2.0258, abs=2e-3)
    assert 1.9 < rows[0][4] < 2.1


def test_ratio_sweep_properties():
    ys = np.linspace(0.5, 57.3, 25)
    rows = ratio_sweep(ys, [200.0, 600.0])
    assert len(rows) == 50
    for y_deg, p_max, wc_exact, wc_approx, ratio in rows:
        assert ratio >= 1.0 - 1e-9
        assert wc_exact >= wc_approx * (1 - 1e-9)
    top = [r for r in rows if r[0] == ys[-1]]
    for row in top:
        assert row[4] == pytest.approx(1.0, abs=1e-6)


def test_two_kinks_at_constraint_handovers():
    # analytic handover amplitudes for m=1, d~0: the power limit hands
    # over to the speed limit at Y = 32*sqrt(2)/P_max and the torque
    # limit at Y = 64*sqrt(2)/P_max
    ys = np.linspace(0.25, 57.3, 120)
    rows = ratio_sweep(ys, [600.0])
    kinks = kink_points(rows, 600.0)
    assert len(kinks) == 2
    grid_step = ys[1] - ys[0]
    assert abs(kinks[0] - math.degrees(32 * math.sqrt(2) / 600)) <= grid_step
    assert abs(kinks[1] - math.degrees(64 * math.sqrt(2) / 600)) <= grid_step


def test_sweep_csv(tmp_path):
    rows = ratio_sweep([1.0, 10.0], [400.0])
    path = tmp_path / "sweep.csv"
    ratio_sweep_to_csv(rows, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "Y_deg,P_max,wc_exact,wc_approx,ratio"
    assert len(lines) == 3


def test_problem_validation():
    with pytest.raises(ValueError):
        default_problem(y_rad=0.0)
    with pytest.raises(ValueError):
        default_problem(m=-1.0)
    with pytest.raises(ValueError):
        period_maxima(default_problem(), 0.0)
