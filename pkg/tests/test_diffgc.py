import math

import numpy as np
import pytest
from scipy import integrate

from quadgc import diffgc as G
from quadgc import ocp
from quadgc.closedloop import SimConfig
from quadgc.dynamics import DEFAULT_PARAMS as P


def snap_integral(p, tf):
    """Quadrature oracle for the integral of the squared fourth derivative."""
    d4 = np.polynomial.polynomial.polyder(p, 4)
    val, _ = integrate.quad(lambda t: np.polynomial.polynomial.polyval(t, d4) ** 2, 0, tf,
                            epsabs=0, epsrel=1e-13, limit=200)
    return val


# -- cost matrix -------------------------------------------------------------------
def test_cubic_has_no_snap():
    with pytest.warns(UserWarning):
        Q = G.snap_cost_matrix(3, 2.0)
    assert np.array_equal(Q, np.zeros((4, 4)))


@pytest.mark.parametrize("degree", [4, 5, 7, 9])
def test_cost_matrix_vs_quadrature(degree):
    rng = np.random.default_rng(degree)
    for tf in (0.4, 1.3, 3.7):
        p = rng.normal(size=degree + 1)
        Q = G.snap_cost_matrix(degree, tf)
        assert np.allclose(Q, Q.T)
        assert np.linalg.eigvalsh(Q).min() > -1e-9 * np.abs(Q).max()
        ref = snap_integral(p, tf)
        assert abs(p @ Q @ p - ref) <= 1e-6 * ref


def test_cost_is_quadratic():
    p = np.random.default_rng(0).normal(size=8)
    Q = G.snap_cost_matrix(7, 1.3)
    assert (2 * p) @ Q @ (2 * p) == pytest.approx(4 * (p @ Q @ p), rel=1e-12)


# -- boundary constraints and QP ------------------------------------------------------
def test_boundary_rows_reproduce_endpoints():
    rng = np.random.default_rng(1)
    bc0, bcf = rng.normal(size=4), rng.normal(size=4)
    A, b = G.boundary_constraints(bc0, bcf, 7, 2.3)
    assert A.shape == (8, 8) and np.linalg.matrix_rank(A) == 8
    p = G.solve_min_snap_qp(G.SnapQp.build(bc0, bcf, 2.3))
    tr = G.PolyTrajectory(p, p, 2.3)
    got0 = [tr.eval(0.0, d)[0, 0] for d in range(4)]
    gotf = [tr.eval(2.3, d)[0, 0] for d in range(4)]
    assert np.allclose(got0, bc0, atol=1e-10) and np.allclose(gotf, bcf, atol=1e-10)


def test_over_constrained_rejected():
    with pytest.raises(ValueError):
        G.boundary_constraints(np.zeros(5), np.zeros(5), 7, 1.0)


def test_fully_constrained_is_inverse():
    rng = np.random.default_rng(2)
    qp = G.SnapQp.build(rng.normal(size=4), rng.normal(size=4), 1.7)
    p = G.solve_min_snap_qp(qp)
    assert np.allclose(p, np.linalg.solve(qp.A, qp.b), rtol=1e-9, atol=1e-10)


def test_under_constrained_first_order_conditions():
    # degree 9 with 8 constraints leaves two free coefficients
    rng = np.random.default_rng(3)
    qp = G.SnapQp.build(rng.normal(size=4), rng.normal(size=4), 1.5, degree=9)
    p = G.solve_min_snap_qp(qp)
    assert np.max(np.abs(qp.A @ p - qp.b)) <= 1e-8
    # Q p must lie in the row space of A
    g = qp.Q @ p
    lam, *_ = np.linalg.lstsq(qp.A.T, g, rcond=None)
    assert np.max(np.abs(qp.A.T @ lam - g)) <= 1e-8 * max(1.0, np.abs(g).max())


def test_rest_to_rest_constant():
    tr = G.min_snap((1.5, -2.0), (1.5, -2.0), 2.0)
    assert np.allclose(tr.px, [1.5] + [0] * 7, atol=1e-12)
    assert np.allclose(tr.pz, [-2.0] + [0] * 7, atol=1e-12)


def test_min_snap_against_dense_discretized_qp():
    """Degree-7 displaced rest-to-rest with a free extra coefficient (degree 9)
    compared to a brute-force discretization of the snap integral."""
    tf, deg = 2.0, 9
    qp = G.SnapQp.build(G.rest_bc(0.0), G.rest_bc(3.0), tf, degree=deg)
    p = G.solve_min_snap_qp(qp)
    cost = p @ qp.Q @ p
    # oracle: minimize the trapezoid-sum of P''''^2 on 1e4 points over the null space of A
    t = np.linspace(0, tf, 10_001)
    D4 = np.array([G.derivative_row(deg, tk, 4) for tk in t])
    w = np.full(len(t), t[1] - t[0])
    w[[0, -1]] *= 0.5
    H = D4.T @ (w[:, None] * D4)
    p0 = np.linalg.lstsq(qp.A, qp.b, rcond=None)[0]
    _, _, Vt = np.linalg.svd(qp.A)
    Z = Vt[qp.A.shape[0]:].T
    y = np.linalg.solve(Z.T @ H @ Z, -Z.T @ H @ p0)
    p_ref = p0 + Z @ y
    ref = p_ref @ H @ p_ref
    assert abs(cost - ref) <= 1e-4 * ref


def test_s_curve_shape():
    tr = G.min_snap((0.0, 0.0), (3.0, 0.0), 2.0)
    t = np.linspace(0, 2.0, 201)
    x = tr.eval(t)[:, 0]
    v = tr.eval(t, 1)[:, 0]
    assert np.all(np.diff(x) >= -1e-12)
    assert v.max() == pytest.approx(v[100], rel=1e-9)  # symmetric bell
    assert x[100] == pytest.approx(1.5, abs=1e-12)


def test_singular_kkt_reported():
    qp = G.SnapQp.build([0.0, 0.0, 0.0, 0.0], [1.0, 0, 0, 0], 1.0)
    qp.A[4] = qp.A[0]  # duplicate row
    with pytest.raises(G.SingularKkt, match="condition"):
        G.solve_min_snap_qp(qp)


def test_time_scaling_law():
    # same geometric path over twice the time: the n-th derivative scales by 2^-n
    a = G.min_snap((0, 0), (2.0, 1.0), 1.5)
    b = G.min_snap((0, 0), (2.0, 1.0), 3.0)
    s = np.linspace(0, 1, 51)
    for d in range(5):
        assert np.allclose(b.eval(3.0 * s, d), a.eval(1.5 * s, d) * 2.0 ** -d, atol=1e-9)


def test_trajectory_json_round_trip(tmp_path):
    tr = G.min_snap((0, 2.5), (5.0, 2.5), 3.1)
    tr.save(tmp_path / "p.json")
    back = G.PolyTrajectory.load(tmp_path / "p.json")
    assert back.tf == tr.tf and np.array_equal(back.px, tr.px) and np.array_equal(back.pz, tr.pz)
    d = tr.to_dict()
    assert set(d) == {"degree", "tf", "px", "pz"} and d["degree"] == 7
    with pytest.raises(ValueError):
        G.PolyTrajectory.from_dict({**d, "tf": 0.0})
    with pytest.raises(ValueError):
        G.PolyTrajectory.from_dict({**d, "px": d["px"][:-1]})


# -- flatness -----------------------------------------------------------------------------
def test_hover_flat_outputs():
    fo = G.flat_outputs(G.min_snap((1, 1), (1, 1), 2.0), P, 50)
    assert np.allclose(fo.theta, 0) and np.allclose(fo.q, 0) and np.allclose(fo.qdot, 0)
    assert np.allclose(fo.accel, P.g0)
    assert np.allclose(fo.f1, P.mass * P.g0 / 2, atol=1e-12) and np.allclose(fo.f2, fo.f1)
    assert abs(fo.f1[0] - 1.908045) < 1e-6
    assert G.check_feasibility(G.min_snap((1, 1), (1, 1), 2.0)).feasible


def test_vertical_segment_has_no_pitch():
    fo = G.flat_outputs(G.min_snap((0, 0), (0, 2.0), 2.0), P, 200)
    assert np.allclose(fo.theta, 0, atol=1e-14) and np.allclose(fo.q, 0, atol=1e-14)
    assert np.allclose(fo.qdot, 0, atol=1e-12)


def test_flat_output_identities():
    tr = G.min_snap((0, 2.5), (4.0, 1.0), 3.0)
    fo = G.flat_outputs(tr, P, 300)
    assert np.allclose(fo.f1 + fo.f2, P.mass * fo.accel, atol=1e-12)
    assert np.allclose(fo.f2 - fo.f1, P.inertia_xx * fo.qdot / P.arm_len, atol=1e-12)
    # the plant's translational equations hold along the path
    d1, d2 = tr.eval(fo.t, 1), tr.eval(fo.t, 2)
    assert np.allclose(d2[:, 0], -fo.accel * np.sin(fo.theta) - P.beta * d1[:, 0], atol=1e-10)
    assert np.allclose(d2[:, 1], fo.accel * np.cos(fo.theta) - P.g0 - P.beta * d1[:, 1], atol=1e-10)


def test_pitch_rate_vs_finite_differences():
    tr = G.min_snap((0, 2.5), (4.0, 1.0), 3.0)
    fo = G.flat_outputs(tr, P, 10_000)
    h = fo.t[1] - fo.t[0]
    q_fd = np.gradient(fo.theta, h, edge_order=2)
    assert np.max(np.abs(q_fd - fo.q)) <= 1e-4
    qd_fd = np.gradient(fo.q, h, edge_order=2)
    assert np.max(np.abs(qd_fd - fo.qdot)) <= 1e-2 * max(1.0, np.abs(fo.qdot).max())


def test_singular_thrust():
    # a fast vertical drop needs downward thrust
    tr = G.min_snap((0, 0), (0, -5.0), 0.6)
    with pytest.raises(G.SingularThrust):
        G.flat_outputs(tr, P, 100)
    assert not G.check_feasibility(tr).feasible


def test_feasibility_time_compression():
    slow = G.min_snap((0, 2.5), (3.0, 2.5), 4.0)
    assert G.check_feasibility(slow).feasible
    fast = G.PolyTrajectory(*(c * 10.0 ** np.arange(8) for c in (slow.px, slow.pz)), 0.4)
    assert np.allclose(fast.eval(0.2), slow.eval(2.0), atol=1e-9)
    rep = G.check_feasibility(fast)
    assert not rep.feasible and rep.margin < 0
    assert 0 <= rep.worst_time <= 0.4 and rep.worst_rotor in (1, 2)
    assert rep.worst_force < P.f_min or rep.worst_force > P.f_max


# -- minimum-time search ---------------------------------------------------------------------
def test_min_time_postcondition():
    tf, tr = G.min_time_search((0, 2.5), (5.0, 2.5))
    assert G.check_feasibility(tr).feasible and tr.tf == tf
    assert not G.check_feasibility(G.min_snap((0, 2.5), (5.0, 2.5), tf - 0.05)).feasible


def test_coarser_step_is_conservative():
    tf1, _ = G.min_time_search((0, 2.5), (5.0, 2.5), dt_step=0.05, tf_init=8.0)
    tf2, _ = G.min_time_search((0, 2.5), (5.0, 2.5), dt_step=0.10, tf_init=8.0)
    assert tf2 >= tf1


def test_infeasible_init_is_an_error():
    with pytest.raises(G.InfeasibleStart):
        G.min_time_search((0, 2.5), (5.0, 2.5), tf_init=0.5)
    with pytest.raises(ValueError):
        G.min_time_search((0, 2.5), (5.0, 2.5), dt_step=0.0)


def test_slower_than_time_optimal():
    tf_star, _ = G.min_time_search((0, 2.5), (5.0, 2.5))
    sol = ocp.solve_ocp((-5.0, 0.0, 0, 0, 0, 0), epsilon=0.0)
    assert sol.converged
    assert math.isfinite(tf_star) and tf_star > sol.tf


# -- tracking ------------------------------------------------------------------------------------
def test_nominal_tracking_is_exact():
    tf, tr = G.min_time_search((0, 2.5), (3.0, 1.5))
    res = G.simulate_diffgc(tr, cfg=SimConfig(horizon=tf))
    ref = tr.eval(res.t)
    assert np.max(np.hypot(*(res.states[:, :2] - ref).T)) <= 1e-3


def test_feed_forward_only_drifts():
    tf, tr = G.min_time_search((0, 2.5), (3.0, 1.5))
    zero = G.TrackingGains(kp=0, kd=0, k_theta=0, k_q=0)
    res = G.simulate_diffgc(tr, gains=zero, cfg=SimConfig(horizon=tf + 6.0),
                            x0=(0.05, 2.5, 0, 0, 0, 0))
    err = np.hypot(*(res.states[:, :2] - tr.eval(np.minimum(res.t, tf))).T)
    # the offset persists along the plan and nothing pulls it back afterwards
    assert err[res.t <= tf].min() > 0.04
    assert err[-1] > 0.5


def test_feedback_removes_offset():
    tf, tr = G.min_time_search((0, 2.5), (3.0, 1.5))
    res = G.simulate_diffgc(tr, cfg=SimConfig(horizon=tf + 3.0), x0=(0.05, 2.5, 0, 0, 0, 0))
    assert res.final_position_error() < 1e-3


def test_arrival_close_to_planned_time():
    tf, tr = G.min_time_search((0, 2.5), (5.0, 2.5))
    res = G.simulate_diffgc(tr, cfg=SimConfig(horizon=tf + 5.0))
    assert res.arrival_time is not None
    # the arrival test may fire once inside the tolerance ball, before tf
    assert tf - 1.0 <= res.arrival_time <= tf + 0.05


def test_open_loop_replay():
    tf, tr = G.min_time_search((0, 2.5), (4.0, 0.5))
    t, S = G.replay_open_loop(tr)
    assert np.max(np.hypot(*(S[:, :2] - tr.eval(t)).T)) <= 1e-3
