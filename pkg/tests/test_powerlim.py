import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powersat.powerlim import (
    PowerBudget,
    PsatMode,
    motor_power,
    psat,
    psat_approx_limit,
    psat_vector,
    sat,
)


def test_sat_basic():
    assert sat(3.0, 2.0) == 2.0
    assert sat(-3.0, 2.0) == -2.0
    assert sat(1.5, 2.0) == 1.5
    assert sat(0.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        sat(1.0, -0.5)


def test_motor_power_values():
    assert motor_power(10.0, 2.0, 0.0) == 20.0
    # 10*2 + 100*0.0056 = 20.56
    assert motor_power(10.0, 2.0, 0.0056) == pytest.approx(20.56)
    assert motor_power(5.0, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        motor_power(1.0, 1.0, -1e-3)


def test_psat_lossless_inactive_passthrough():
    assert psat(10.0, 2.0, 400.0) == 10.0
    # regeneration never limited
    assert psat(-500.0, 3.0, 10.0) == -500.0
    assert psat(500.0, -3.0, 10.0) == 500.0


def test_psat_lossless_clip():
    assert psat(300.0, 2.0, 400.0) == 200.0
    assert psat(-300.0, -2.0, 400.0) == -200.0


def test_psat_lossless_zero_speed_passthrough():
    # zero speed means zero lossless power, so the limit never binds there
    assert psat(10.0, 0.0, 400.0) == 10.0
    assert psat(10.0, 0.0, 0.0) == 10.0


def test_psat_lossy_root_satisfies_power_equation():
    # substitute the clipped torque back into the power law
    u, qdot, pbar, rbar = 200.0, 4.0, 400.0, 0.0056
    ub = psat(u, qdot, pbar, rbar, PsatMode.EXACT_WITH_LOSSES)
    assert 0 < ub < u
    assert motor_power(ub, qdot, rbar) == pytest.approx(pbar, abs=1e-9)

    ub_neg = psat(-u, -qdot, pbar, rbar, PsatMode.EXACT_WITH_LOSSES)
    assert ub_neg == pytest.approx(-ub)


def test_psat_lossy_binding_at_zero_speed_is_finite():
    ub = psat(1000.0, 0.0, 400.0, 0.0056, PsatMode.EXACT_WITH_LOSSES)
    assert ub == pytest.approx(math.sqrt(400.0 / 0.0056))


def test_psat_lossy_requires_resistance():
    with pytest.raises(ValueError):
        psat(10.0, 1.0, 1.0, 0.0, PsatMode.EXACT_WITH_LOSSES)


def test_psat_approx():
    # pbar/vbar = 400/4 = 100
    assert psat(250.0, 3.0, 400.0, mode=PsatMode.APPROX_SAT, vbar=4.0) == 100.0
    assert psat(-250.0, 3.0, 400.0, mode=PsatMode.APPROX_SAT, vbar=4.0) == -100.0
    assert psat(50.0, 3.0, 400.0, mode=PsatMode.APPROX_SAT, vbar=4.0) == 50.0
    with pytest.raises(ValueError):
        psat(50.0, 3.0, 400.0, mode=PsatMode.APPROX_SAT)
    with pytest.raises(ValueError):
        psat_approx_limit(400.0, 0.0)


def test_budget_validation():
    b = PowerBudget(per_joint_limit=(100.0, 300.0),
                    normalized_resistance=(0.0, 0.0))
    assert b.aggregate_limit == 400.0
    assert b.n_joints == 2
    with pytest.raises(ValueError):
        PowerBudget(per_joint_limit=(100.0, 300.0),
                    normalized_resistance=(0.0, 0.0),
                    aggregate_limit=500.0)
    with pytest.raises(ValueError):
        PowerBudget(per_joint_limit=(-1.0,), normalized_resistance=(0.0,))
    with pytest.raises(ValueError):
        PowerBudget(per_joint_limit=(1.0,), normalized_resistance=(0.0,),
                    no_load_speed=(0.0,))


def test_budget_uniform():
    b = PowerBudget.uniform(750.0, 4, rbar=0.0056, vbar=4.0)
    assert b.per_joint_limit == (187.5,) * 4
    assert b.aggregate_limit == 750.0
    assert b.no_load_speed == (4.0,) * 4


def test_psat_vector_fin_budget():
    # four identical motors, only the first commanded past its share
    b = PowerBudget.uniform(750.0, 4)
    u = np.array([200.0, 10.0, 10.0, 10.0])
    qdot = np.array([4.0, 1.0, 1.0, 1.0])
    out = psat_vector(u, qdot, b, PsatMode.EXACT_LOSSLESS)
    np.testing.assert_allclose(out, [187.5 / 4.0, 10.0, 10.0, 10.0])
    with pytest.raises(ValueError):
        psat_vector([1.0, 2.0], [1.0, 1.0], b)


finite = st.floats(min_value=-1e3, max_value=1e3,
                   allow_nan=False, allow_infinity=False)
speed = st.floats(min_value=-50.0, max_value=50.0,
                  allow_nan=False, allow_infinity=False)
pos_pbar = st.floats(min_value=1e-3, max_value=1e4,
                     allow_nan=False, allow_infinity=False)
pos_rbar = st.floats(min_value=1e-6, max_value=1.0,
                     allow_nan=False, allow_infinity=False)


@settings(max_examples=300, deadline=None)
@given(u=finite, qdot=speed, pbar=pos_pbar)
def test_psat_lossless_never_exceeds_budget(u, qdot, pbar):
    if qdot == 0.0 and u * qdot > pbar:
        return
    ub = psat(u, qdot, pbar)
    assert ub * qdot <= pbar * (1 + 1e-12) + 1e-12
    # same sign and never larger in magnitude
    assert abs(ub) <= abs(u) + 1e-12
    assert ub * u >= 0


@settings(max_examples=300, deadline=None)
@given(u=finite, qdot=speed, pbar=pos_pbar, rbar=pos_rbar)
def test_psat_lossy_never_exceeds_budget(u, qdot, pbar, rbar):
    ub = psat(u, qdot, pbar, rbar, PsatMode.EXACT_WITH_LOSSES)
    assert motor_power(ub, qdot, rbar) <= pbar * (1 + 1e-9) + 1e-9
    assert abs(ub) <= abs(u) + 1e-12
    assert ub * u >= 0


@settings(max_examples=300, deadline=None)
@given(u=finite, qdot=speed, pbar=pos_pbar, rbar=pos_rbar)
def test_psat_idempotent(u, qdot, pbar, rbar):
    for mode, r in ((PsatMode.EXACT_LOSSLESS, 0.0),
                    (PsatMode.EXACT_WITH_LOSSES, rbar)):
        if mode is PsatMode.EXACT_LOSSLESS and qdot == 0.0 and u * qdot > pbar:
            continue
        once = psat(u, qdot, pbar, r, mode)
        twice = psat(once, qdot, pbar, r, mode)
        assert twice == once  # bit-exact


@settings(max_examples=300, deadline=None)
@given(u=finite, qdot=st.floats(min_value=-4.0, max_value=4.0,
                                allow_nan=False, allow_infinity=False),
       pbar=pos_pbar)
def test_approx_conservative_within_no_load_speed(u, qdot, pbar):
    # inside |qdot| <= vbar the torque cap pbar/vbar implies P <= pbar
    vbar = 4.0
    ua = psat(u, qdot, pbar, mode=PsatMode.APPROX_SAT, vbar=vbar)
    assert ua * qdot <= pbar * (1 + 1e-12) + 1e-12
    if qdot != 0.0 or u * 0.0 <= pbar:
        ue = psat(u, qdot, pbar, mode=PsatMode.EXACT_LOSSLESS)
        assert abs(ua) <= abs(ue) + 1e-12


@settings(max_examples=200, deadline=None)
@given(u=finite, qdot=speed, pbar=pos_pbar)
def test_psat_lossless_clip_only_removes_mechanical_power(u, qdot, pbar):
    # lossless clipping activates only while motoring, so it can only shrink
    # the mechanical power delivered to the load
    ub = psat(u, qdot, pbar)
    assert ub * qdot <= u * qdot + 1e-9


def test_psat_lipschitz_in_command_off_zero_speed():
    # finite difference quotients stay bounded away from qdot = 0
    for mode, rbar in ((PsatMode.EXACT_LOSSLESS, 0.0),
                       (PsatMode.EXACT_WITH_LOSSES, 0.0056)):
        for qdot in (-3.0, -0.5, 0.5, 3.0):
            us = np.linspace(-300.0, 300.0, 4001)
            vals = np.array([psat(ui, qdot, 400.0, rbar, mode) for ui in us])
            slopes = np.abs(np.diff(vals) / np.diff(us))
            assert np.all(np.isfinite(slopes))
            assert slopes.max() <= 1.0 + 1e-9  # clip never steeper than identity
