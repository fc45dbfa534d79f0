"""Polynomial guidance with flatness-based feed-forward (the baseline).

Each axis is one polynomial segment ``P(t) = sum_i p_i t^i`` minimizing the
integral of squared snap under endpoint derivative constraints. The planar
model is differentially flat in ``(x, z)``: pitch, thrust and both rotor
forces follow from derivatives of the position up to fourth order. A
minimum-time search shrinks ``tf`` in fixed steps while the rotor forces stay
inside their bounds.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closedloop import SimConfig, SimResult, run_closed_loop
from .dynamics import DEFAULT_PARAMS, QuadParams

DEGREE = 7
FEAS_RATE = 1000.0  # feasibility samples per second


class SingularKkt(np.linalg.LinAlgError):
    pass


class SingularThrust(ValueError):
    pass


class InfeasibleStart(ValueError):
    pass


def _falling(i: np.ndarray, d: int) -> np.ndarray:
    """``i! / (i - d)!`` elementwise, zero where ``i < d``."""
    out = np.ones_like(i, dtype=float)
    for k in range(d):
        out *= i - k
    return np.where(i >= d, out, 0.0)


def snap_cost_matrix(degree: int, tf: float) -> np.ndarray:
    """``Q`` with ``p @ Q @ p == integral_0^tf P''''(t)^2 dt``."""
    n = degree + 1
    if degree < 4:
        warnings.warn(f"degree {degree} < 4 has identically zero snap", stacklevel=2)
        return np.zeros((n, n))
    i = np.arange(n)
    c = _falling(i, 4)
    I, J = np.meshgrid(i, i, indexing="ij")
    pw = I + J - 7
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where((I >= 4) & (J >= 4), np.outer(c, c) * tf ** np.maximum(pw, 1) / np.maximum(pw, 1), 0.0)
    return Q


def derivative_row(degree: int, t: float, d: int) -> np.ndarray:
    """Row ``r`` with ``r @ p == P^(d)(t)``."""
    i = np.arange(degree + 1)
    with np.errstate(invalid="ignore"):
        powers = np.where(i >= d, float(t) ** np.maximum(i - d, 0), 0.0)
    return _falling(i, d) * powers


def boundary_constraints(bc0, bcf, degree: int, tf: float) -> tuple[np.ndarray, np.ndarray]:
    """Pin derivatives ``0..len(bc)-1`` at ``t=0`` (``bc0``) and ``t=tf`` (``bcf``)."""
    bc0, bcf = np.atleast_1d(np.asarray(bc0, float)), np.atleast_1d(np.asarray(bcf, float))
    rows = len(bc0) + len(bcf)
    if rows > degree + 1:
        raise ValueError(f"{rows} boundary rows over-constrain a degree-{degree} polynomial")
    A = np.array([derivative_row(degree, 0.0, d) for d in range(len(bc0))]
                 + [derivative_row(degree, tf, d) for d in range(len(bcf))]).reshape(rows, degree + 1)
    return A, np.concatenate([bc0, bcf])


@dataclass
class SnapQp:
    Q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    tf: float

    @classmethod
    def build(cls, bc0, bcf, tf: float, degree: int = DEGREE) -> "SnapQp":
        A, b = boundary_constraints(bc0, bcf, degree, tf)
        return cls(snap_cost_matrix(degree, tf), A, b, float(tf))


def solve_min_snap_qp(qp: SnapQp) -> np.ndarray:
    """Coefficients minimizing ``p Q p`` subject to ``A p = b`` via the KKT system.

    Columns are scaled by ``tf^-i`` (normalized time) before factorizing,
    which keeps the system well conditioned for long horizons.
    """
    n = qp.Q.shape[0]
    m = qp.A.shape[0]
    D = np.diag(float(qp.tf) ** -np.arange(n, dtype=float))
    Qs = D @ qp.Q @ D
    As = qp.A @ D
    # rescale the cost so its entries are comparable to the constraint rows
    qscale = max(np.abs(Qs).max(), 1e-300)
    K = np.block([[2.0 * Qs / qscale, As.T], [As, np.zeros((m, m))]])
    rhs = np.concatenate([np.zeros(n), qp.b])
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularKkt(f"KKT matrix is singular (condition estimate {cond:.3e})")
    c = np.linalg.solve(K, rhs)[:n]
    return D @ c


@dataclass
class PolyTrajectory:
    px: np.ndarray
    pz: np.ndarray
    tf: float

    @property
    def degree(self) -> int:
        return len(self.px) - 1

    def eval(self, t, d: int = 0) -> np.ndarray:
        """``(len(t), 2)`` array of the ``d``-th derivative of ``(x, z)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.arange(self.degree + 1)
        coef = _falling(i, d)
        P = np.where(i >= d, t[:, None] ** np.maximum(i - d, 0), 0.0) * coef
        return np.column_stack([P @ self.px, P @ self.pz])

    def to_dict(self) -> dict:
        return {"degree": self.degree, "tf": self.tf, "px": self.px.tolist(), "pz": self.pz.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolyTrajectory":
        px, pz = np.array(d["px"], float), np.array(d["pz"], float)
        if len(px) != d["degree"] + 1 or len(pz) != d["degree"] + 1:
            raise ValueError("coefficient count must be degree + 1 per axis")
        if not d["tf"] > 0:
            raise ValueError("tf must be positive")
        return cls(px, pz, float(d["tf"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PolyTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rest_bc(pos) -> np.ndarray:
    """Position with zero velocity, acceleration and jerk."""
    return np.array([float(pos), 0.0, 0.0, 0.0])


def min_snap(start, goal, tf: float, degree: int = DEGREE, start_bc=None, goal_bc=None) -> PolyTrajectory:
    """Rest-to-rest (unless explicit per-axis derivative lists are given)."""
    bc0 = start_bc if start_bc is not None else [rest_bc(start[0]), rest_bc(start[1])]
    bcf = goal_bc if goal_bc is not None else [rest_bc(goal[0]), rest_bc(goal[1])]
    px = solve_min_snap_qp(SnapQp.build(bc0[0], bcf[0], tf, degree))
    pz = solve_min_snap_qp(SnapQp.build(bc0[1], bcf[1], tf, degree))
    return PolyTrajectory(px, pz, float(tf))


@dataclass
class FlatOutputs:
    t: np.ndarray
    accel: np.ndarray  # total thrust acceleration a
    theta: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    f1: np.ndarray
    f2: np.ndarray


def flat_outputs(traj: PolyTrajectory, params: QuadParams = DEFAULT_PARAMS, samples=1000) -> FlatOutputs:
    """Invert the planar model along the polynomial.

    ``samples`` is a count (uniform over ``[0, tf]``) or an array of times.
    """
    if np.ndim(samples) == 0:
        t = np.linspace(0.0, traj.tf, int(samples))
    else:
        t = np.asarray(samples, dtype=float)
    d1, d2, d3, d4 = (traj.eval(t, k) for k in (1, 2, 3, 4))
    b = params.beta
    # thrust direction components: a sin(theta) = nx, a cos(theta) = nz
    nx = -(d2[:, 0] + b * d1[:, 0])
    nz = d2[:, 1] + params.g0 + b * d1[:, 1]
    if np.any(nz <= 0):
        k = int(np.argmin(nz))
        raise SingularThrust(f"thrust would have to point downward at t={t[k]:.4f} s")
    nx1 = -(d3[:, 0] + b * d2[:, 0])
    nz1 = d3[:, 1] + b * d2[:, 1]
    nx2 = -(d4[:, 0] + b * d3[:, 0])
    nz2 = d4[:, 1] + b * d3[:, 1]
    r2 = nx**2 + nz**2
    num = nx1 * nz - nx * nz1
    theta = np.arctan2(nx, nz)
    q = num / r2
    num1 = nx2 * nz - nx * nz2
    qdot = (num1 * r2 - num * 2.0 * (nx * nx1 + nz * nz1)) / r2**2
    a = np.sqrt(r2)
    moment = params.inertia_xx * qdot / params.arm_len
    f1 = 0.5 * (params.mass * a - moment)
    f2 = 0.5 * (params.mass * a + moment)
    return FlatOutputs(t, a, theta, q, qdot, f1, f2)


@dataclass
class Feasibility:
    feasible: bool
    margin: float  # min over samples of distance to the nearer force bound (negative = violated)
    worst_time: float
    worst_force: float
    worst_rotor: int


def check_feasibility(traj: PolyTrajectory, params: QuadParams = DEFAULT_PARAMS,
                      rate: float = FEAS_RATE) -> Feasibility:
    n = max(2, int(math.ceil(traj.tf * rate)) + 1)
    try:
        fo = flat_outputs(traj, params, n)
    except SingularThrust:
        return Feasibility(False, -math.inf, float("nan"), float("nan"), -1)
    F = np.column_stack([fo.f1, fo.f2])
    margin = np.minimum(F - params.f_min, params.f_max - F)
    k, r = np.unravel_index(int(np.argmin(margin)), margin.shape)
    worst = float(margin[k, r])
    return Feasibility(worst >= 0.0, worst, float(fo.t[k]), float(F[k, r]), int(r) + 1)


def default_tf_init(start, goal) -> float:
    """Three times a 2 m/s cruise estimate, at least 1 s."""
    dist = math.hypot(goal[0] - start[0], goal[1] - start[1])
    return 3.0 * max(dist / 2.0, 1.0 / 3.0)


def min_time_search(start, goal, params: QuadParams = DEFAULT_PARAMS, dt_step: float = 0.05,
                    tf_init: float | None = None, degree: int = DEGREE, rate: float = FEAS_RATE):
    """Shrink ``tf`` by ``dt_step`` while the min-snap trajectory stays
    rotor-feasible; returns ``(tf*, trajectory)``.

    An explicit infeasible ``tf_init`` is an error; the default heuristic is
    grown by 1.5x until feasible.
    """
    if not dt_step > 0:
        raise ValueError("dt_step must be positive")

    def feasible(tf):
        tr = min_snap(start, goal, tf, degree)
        return check_feasibility(tr, params, rate).feasible, tr

    if tf_init is None:
        tf = default_tf_init(start, goal)
        ok, traj = feasible(tf)
        for _ in range(20):
            if ok:
                break
            tf *= 1.5
            ok, traj = feasible(tf)
        if not ok:
            raise InfeasibleStart(f"no feasible tf up to {tf:.2f} s")
    else:
        tf = float(tf_init)
        ok, traj = feasible(tf)
        if not ok:
            raise InfeasibleStart(f"tf_init={tf} s is not rotor-feasible")
    tf0, k = tf, 0
    # tf = tf0 - k * dt_step, computed without accumulating rounding
    while tf0 - (k + 1) * dt_step > 0:
        ok, trial = feasible(tf0 - (k + 1) * dt_step)
        if not ok:
            break
        k += 1
        tf, traj = tf0 - k * dt_step, trial
    return tf, traj


# -- tracking -----------------------------------------------------------------
@dataclass(frozen=True)
class TrackingGains:
    kp: float = 6.0  # 1/s^2, position
    kd: float = 4.0  # 1/s, velocity
    ki: float = 0.0  # 1/s^3, integral (off)
    k_theta: float = 400.0  # 1/s^2, pitch
    k_q: float = 40.0  # 1/s, pitch rate


class FlatTracker:
    """Feed-forward from the flat outputs plus PD position feedback.

    The corrected acceleration is turned into a pitch and thrust through the
    same flatness map (using the measured velocity for drag), and an inner
    pitch loop adds to the feed-forward pitch acceleration.
    """

    def __init__(self, traj: PolyTrajectory, params: QuadParams = DEFAULT_PARAMS,
                 gains: TrackingGains = TrackingGains(), dt: float = 0.002):
        self.traj, self.p, self.g, self.dt = traj, params, gains, dt
        self.goal = traj.eval(traj.tf)[0]
        self.i_err = np.zeros(2)

    def reference(self, t: float):
        """Position, velocity, acceleration and flat pitch terms at ``t``
        (held at the goal in hover after ``tf``)."""
        if t >= self.traj.tf:
            return self.goal, np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0
        pos, vel, acc = (self.traj.eval(t, k)[0] for k in (0, 1, 2))
        fo = flat_outputs(self.traj, self.p, np.array([t]))
        return pos, vel, acc, fo.theta[0], fo.q[0], fo.qdot[0]

    def __call__(self, s, t):
        p, g = self.p, self.g
        # errors against the reference at t; feed-forward at mid-step since
        # the command is held over dt
        pos, vel, acc, th_ref, q_ref, _ = self.reference(t)
        _, vel_m, acc_m, th_m, _, qd_ff = self.reference(t + 0.5 * self.dt)
        x = np.array([s[0], s[1]])
        v = np.array([s[2], s[3]])
        e = pos - x
        self.i_err += e * self.dt
        a_fb = g.kp * e + g.kd * (vel - v) + g.ki * self.i_err
        a_des = acc_m + a_fb
        nx = -(a_des[0] + p.beta * (vel_m[0] - vel[0] + v[0]))
        nz = max(a_des[1] + p.g0 + p.beta * (vel_m[1] - vel[1] + v[1]), 1e-3)
        # on the reference (a_fb = 0, v = vel) this is the flat pitch and thrust
        th_des = math.atan2(nx, nz)
        a_tot = math.hypot(nx, nz)
        th_des_now = th_des - th_m + th_ref
        qd_cmd = qd_ff + g.k_theta * (th_des_now - s[4]) + g.k_q * (q_ref - s[5])
        moment = p.inertia_xx * qd_cmd / p.arm_len
        f1 = 0.5 * (p.mass * a_tot - moment)
        f2 = 0.5 * (p.mass * a_tot + moment)
        return (f1 - p.f_min) / p.delta_f, (f2 - p.f_min) / p.delta_f


def simulate_diffgc(traj: PolyTrajectory, params: QuadParams = DEFAULT_PARAMS,
                    gains: TrackingGains = TrackingGains(), cfg: SimConfig = SimConfig(),
                    x0=None) -> SimResult:
    """Fly the tracker from the trajectory start (or ``x0``) toward its end."""
    start = traj.eval(0.0)[0]
    goal = traj.eval(traj.tf)[0]
    if x0 is None:
        x0 = (start[0], start[1], 0.0, 0.0, 0.0, 0.0)
    tracker = FlatTracker(traj, params, gains, cfg.dt)
    return run_closed_loop(tracker, x0, cfg, params, (goal[0], goal[1]))


def replay_open_loop(traj: PolyTrajectory, params: QuadParams = DEFAULT_PARAMS, dt: float = 1e-3):
    """Integrate the plant under the flat rotor forces alone (held mid-step)
    and return ``(t, states)``."""
    from .dynamics import integrate_zoh

    n = max(1, int(math.ceil(traj.tf / dt)))
    h = traj.tf / n
    fo = flat_outputs(traj, params, (np.arange(n) + 0.5) * h)
    U = np.column_stack([fo.f1, fo.f2])
    U = (U - params.f_min) / params.delta_f
    start = traj.eval(0.0)[0]
    v0 = traj.eval(0.0, 1)[0]
    th0 = flat_outputs(traj, params, np.array([0.0]))
    s0 = (start[0], start[1], v0[0], v0[1], th0.theta[0], th0.q[0])
    S = integrate_zoh(s0, U, params, h)
    return np.linspace(0.0, traj.tf, n + 1), S
