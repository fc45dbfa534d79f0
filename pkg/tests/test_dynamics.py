import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadgc.dynamics import (
    DEFAULT_PARAMS,
    HoverInfeasible,
    QuadParams,
    command_to_actuation,
    dynamics,
    hover_command,
    integrate,
    integrate_zoh,
    jacobians,
    load_params,
    rk4_scalar,
    rotor_forces,
    save_params,
    step_rk4,
    throttles_from_forces,
)

P = DEFAULT_PARAMS
finite = st.floats(-20, 20, allow_nan=False)
unit = st.floats(0, 1)


def test_default_params():
    assert P.f_max == 2.35 and P.f_min == 1.76
    assert P.delta_f == pytest.approx(0.59, abs=1e-15)
    assert (P.beta, P.mass, P.arm_len, P.inertia_xx, P.g0) == (0.5, 0.389, 0.08, 0.001242, 9.81)


def test_params_validation():
    with pytest.raises(ValueError):
        QuadParams(f_max=1.0, f_min=1.5)
    with pytest.raises(ValueError):
        QuadParams(mass=0.0)
    with pytest.raises(ValueError):
        QuadParams(beta=-0.1)


def test_params_json_round_trip(tmp_path):
    path = tmp_path / "p.json"
    save_params(P, path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"f_max", "f_min", "delta_f", "beta", "mass", "arm_len", "inertia_xx", "g0"}
    assert load_params(path) == P


def test_params_json_rejects_inconsistent_delta_f():
    d = P.to_dict()
    d["delta_f"] = 0.6
    with pytest.raises(ValueError):
        QuadParams.from_dict(d)


def test_shipped_params_file_is_default():
    from pathlib import Path

    assert load_params(Path(__file__).parents[1] / "bebop_planar.json") == P


def test_hover_command_value():
    # independent arithmetic: (m g0 - 2 Fmin) / (2 dF)
    expected = (0.389 * 9.81 - 2 * 1.76) / (2 * 0.59)
    u = hover_command(P)
    assert u[0] == u[1] == pytest.approx(expected, abs=1e-12)
    assert u[0] == pytest.approx(0.250924, abs=1e-6)


def test_hover_is_equilibrium():
    f = dynamics(np.zeros(6), hover_command(P), P)
    assert np.max(np.abs(f)) < 1e-12
    s = step_rk4(np.zeros(6), hover_command(P), P, 0.01)
    assert np.max(np.abs(s)) < 1e-9


def test_hover_boundaries():
    g = 9.81
    assert hover_command(QuadParams(mass=2 * 2.35 / g)) == pytest.approx([1.0, 1.0])
    assert hover_command(QuadParams(mass=2 * 1.76 / g)) == pytest.approx([0.0, 0.0], abs=1e-12)
    with pytest.raises(HoverInfeasible):
        hover_command(QuadParams(mass=1.0))
    with pytest.raises(HoverInfeasible):
        hover_command(QuadParams(mass=0.2))


def test_full_throttle_climb_acceleration():
    f = dynamics(np.zeros(6), [1.0, 1.0], P)
    expected = (2 * 0.59 + 2 * 1.76) / 0.389 - 9.81
    assert f[3] == pytest.approx(expected, abs=1e-12)
    assert f[3] == pytest.approx(2.2731, abs=1e-3)
    assert f[5] == 0.0


def test_thrust_acceleration_range():
    lo = dynamics(np.zeros(6), [0, 0], P)[3] + P.g0
    hi = dynamics(np.zeros(6), [1, 1], P)[3] + P.g0
    assert lo == pytest.approx(9.0488, abs=1e-3)
    assert hi == pytest.approx(12.0823, abs=1e-3)


def test_actuation_examples():
    assert command_to_actuation([0, 0], P) == (0.0, 0.0)
    a = command_to_actuation([1, 1], P)
    assert a.thrust_cmd == pytest.approx(3.0334, abs=1e-4) and a.qdot_cmd == 0.0
    assert command_to_actuation([0, 1], P).qdot_cmd == pytest.approx(38.003, abs=0.01)
    # sign matches the plant model
    assert dynamics(np.zeros(6), [0, 1], P)[5] == pytest.approx(command_to_actuation([0, 1], P).qdot_cmd)


def test_rotor_force_round_trip():
    u = np.array([0.1, 0.9])
    assert throttles_from_forces(rotor_forces(u, P), P) == pytest.approx(u)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6), unit, unit, finite, finite)
def test_translation_invariance(s, u1, u2, dx, dz):
    s = np.array(s)
    shifted = s.copy()
    shifted[:2] += (dx, dz)
    assert np.array_equal(dynamics(s, [u1, u2], P), dynamics(shifted, [u1, u2], P))


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6), unit)
def test_equal_throttles_no_pitch_acceleration(s, u):
    assert dynamics(np.array(s), [u, u], P)[5] == 0.0


def test_zero_throttle_falls():
    s = np.array([0, 0, 0, 1.2, 0, 0])
    f = dynamics(s, [0, 0], P)
    assert f[3] == pytest.approx(2 * 1.76 / 0.389 - 9.81 - 0.5 * 1.2)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = rng.normal(size=6)
        u = rng.random(2)
        A, B = jacobians(s, u, P)
        h = 1e-6
        A_fd = np.column_stack([(dynamics(s + h * e, u, P) - dynamics(s - h * e, u, P)) / (2 * h) for e in np.eye(6)])
        B_fd = np.column_stack([(dynamics(s, u + h * e, P) - dynamics(s, u - h * e, P)) / (2 * h) for e in np.eye(2)])
        assert np.allclose(A, A_fd, atol=1e-7)
        assert np.allclose(B, B_fd, atol=1e-7)


def test_broadcasting():
    S = np.random.default_rng(0).normal(size=(4, 3, 6))
    U = np.full((4, 3, 2), 0.3)
    F = dynamics(S, U, P)
    assert F.shape == (4, 3, 6)
    assert np.allclose(F[2, 1], dynamics(S[2, 1], U[2, 1], P))


def _reference(s0, u, tf):
    # fine-step oracle
    _, X = integrate(s0, lambda t: u, P, tf, 1e-5)
    return X[-1]


def test_rk4_fourth_order_convergence():
    s0 = np.array([0.0, 0.0, 1.0, -0.5, 0.4, 0.5])
    u = np.array([0.2, 0.35])
    ref = _reference(s0, u, 1.0)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        _, X = integrate(s0, lambda t: u, P, 1.0, dt)
        errs.append(np.max(np.abs(X[-1] - ref)))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 12 < r1 < 20 and 12 < r2 < 20


def test_single_step_full_throttle_matches_dense():
    s = step_rk4(np.zeros(6), [1, 1], P, 0.1)
    ref = _reference(np.zeros(6), np.array([1.0, 1.0]), 0.1)
    assert np.max(np.abs(s - ref)) < 1e-4
    # linear drag: vz(t) = a (1 - exp(-beta t)) / beta
    a = (2 * 0.59 + 2 * 1.76) / 0.389 - 9.81
    assert s[3] == pytest.approx(a * (1 - math.exp(-0.05)) / 0.5, abs=1e-7)
    assert s[3] < a * 0.1


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step_rk4(np.zeros(6), [0, 0], P, 0.0)


def test_scalar_twins_match_array_rk4():
    rng = np.random.default_rng(7)
    s = rng.normal(size=6)
    U = rng.random((25, 2))
    X = integrate_zoh(s, U, P, 0.01)
    ref = s.copy()
    for i, u in enumerate(U):
        ref = step_rk4(ref, u, P, 0.01)
        assert np.allclose(X[i + 1], ref, rtol=0, atol=1e-12)
    assert np.allclose(rk4_scalar(tuple(s), *U[0], 0.01, P), X[1], atol=1e-14)


def test_nonfinite_state_propagates():
    s = step_rk4(np.array([0, 0, 0, 0, math.nan, 0]), [0.5, 0.5], P, 0.01)
    assert not np.all(np.isfinite(s))
