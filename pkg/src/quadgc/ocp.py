"""Free-final-time optimal control of the planar quadrotor.

The problem ``min (1-eps) tf + eps * int(u1^2 + u2^2) dt`` subject to the
plant dynamics, ``x(0) = x0`` and ``x(tf) = 0`` is transcribed with
Hermite-Simpson collocation on a uniform grid over normalized time ``[0, 1]``
(the dynamics are scaled by ``tf``) and handed to the interior-point solver in
:mod:`quadgc.nlp`.

Decision vector layout for ``K`` nodes and ``N = K - 1`` segments::

    [ X (K x 6, row major) | U (K x 2) | UM (N x 2) | tf ]

where ``UM`` are the free midpoint controls of each segment.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import nlp
from .dynamics import (
    DEFAULT_PARAMS,
    NU,
    NX,
    QuadParams,
    dynamics,
    hover_command,
    integrate_zoh,
    jacobians,
    step_rk4,
)

SOLUTION_COLUMNS = ("t", "x", "z", "vx", "vz", "theta", "q", "u1", "u2")
DEFECT_TOL = 1e-6


class InvalidConfig(ValueError):
    pass


class OcpNotConverged(nlp.NotConverged):
    """Solver failure; ``solution`` holds the best iterate (``converged=False``)."""

    def __init__(self, message, result, solution):
        super().__init__(message, result)
        self.solution = solution


@dataclass(frozen=True)
class OcpConfig:
    x0: tuple
    epsilon: float = 0.2
    num_nodes: int = 81
    tf_bounds: tuple = (0.05, 20.0)
    control_bounds: tuple = (0.0, 1.0)
    symmetric_controls: bool = False  # enforce u1 == u2 (pitch frozen)
    defect_scale: float = 1.0

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        object.__setattr__(self, "x0", x0)
        if len(x0) != NX or not all(math.isfinite(v) for v in x0):
            raise InvalidConfig(f"x0 must be 6 finite numbers, got {self.x0}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidConfig(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if int(self.num_nodes) != self.num_nodes or self.num_nodes < 3:
            raise InvalidConfig(f"num_nodes must be an integer >= 3, got {self.num_nodes}")
        lo, hi = self.tf_bounds
        if not 0.0 < lo < hi:
            raise InvalidConfig(f"bad tf bounds {self.tf_bounds}")
        ulo, uhi = self.control_bounds
        if not 0.0 <= ulo < uhi <= 1.0:
            raise InvalidConfig(f"bad control bounds {self.control_bounds}")
        if not self.defect_scale > 0:
            raise InvalidConfig("defect_scale must be positive")
        if self.symmetric_controls and any(x0[i] for i in (0, 2, 4, 5)):
            raise InvalidConfig("symmetric controls need x0 with x = vx = theta = q = 0")


@dataclass
class OcpSolution:
    times: np.ndarray  # (K,)
    states: np.ndarray  # (K, 6)
    controls: np.ndarray  # (K, 2)
    mid_controls: np.ndarray | None  # (K-1, 2); None when only nodes are known
    tf: float
    cost: float
    converged: bool
    defect_norm: float
    epsilon: float
    stationarity: float = float("nan")
    iterations: int = 0
    status: str = ""

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def control_at(self, t, clip: bool = False) -> np.ndarray:
        """Piecewise-quadratic control through node, midpoint, node values
        of each segment (the representation implied by the transcription).

        The interpolant may leave [0, 1] slightly between nodes; pass
        ``clip=True`` to saturate it. Without midpoint values (solutions read
        back from a dataset) the profile is piecewise linear."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        N = len(self.times) - 1
        h = self.tf / N
        k = np.clip(np.floor(t / h).astype(int), 0, N - 1)
        s = np.clip(t / h - k, 0.0, 1.0)[:, None]
        a, b = self.controls[k], self.controls[k + 1]
        m = 0.5 * (a + b) if self.mid_controls is None else self.mid_controls[k]
        u = a * (2 * s - 1) * (s - 1) + m * 4 * s * (1 - s) + b * s * (2 * s - 1)
        return np.clip(u, 0.0, 1.0) if clip else u

    def state_at(self, t, params: QuadParams = DEFAULT_PARAMS) -> np.ndarray:
        """Cubic Hermite interpolation of the node states."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        N = len(self.times) - 1
        h = self.tf / N
        k = np.clip(np.floor(t / h).astype(int), 0, N - 1)
        s = np.clip(t / h - k, 0.0, 1.0)[:, None]
        xa, xb = self.states[k], self.states[k + 1]
        fa = dynamics(xa, self.controls[k], params)
        fb = dynamics(xb, self.controls[k + 1], params)
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * xa + h10 * h * fa + h01 * xb + h11 * h * fb

    def metadata(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "tf": self.tf,
            "cost": self.cost,
            "converged": bool(self.converged),
            "defect_norm": self.defect_norm,
            "stationarity": self.stationarity,
            "iterations": self.iterations,
            "status": self.status,
            "num_nodes": int(len(self.times)),
            "mid_controls": None if self.mid_controls is None else self.mid_controls.tolist(),
        }


class NlpProblem:
    """Hermite-Simpson transcription of the minimum time/power problem."""

    def __init__(self, cfg: OcpConfig, params: QuadParams = DEFAULT_PARAMS):
        self.cfg = cfg
        self.params = params
        K = self.K = int(cfg.num_nodes)
        N = self.N = K - 1
        self.n_x = K * NX
        self.n_u = K * NU
        self.n_um = N * NU
        self.n = self.n_x + self.n_u + self.n_um + 1
        self.itf = self.n - 1
        self.x0 = np.array(cfg.x0)
        self.xf = np.zeros(NX)

        ulo, uhi = cfg.control_bounds
        self.lb = np.full(self.n, -np.inf)
        self.ub = np.full(self.n, np.inf)
        self.lb[self.n_x:self.itf] = ulo
        self.ub[self.n_x:self.itf] = uhi
        self.lb[self.itf], self.ub[self.itf] = cfg.tf_bounds

        self.n_defect = N * NX
        # With u1 == u2 the pitch and horizontal channels stay at rest, so their
        # terminal rows would be linearly dependent on the rest; pin only z, vz.
        self.term_idx = np.array([1, 3]) if cfg.symmetric_controls else np.arange(NX)
        self.n_boundary = NX + self.term_idx.size
        self.n_sym = (K + N) if cfg.symmetric_controls else 0
        self.m = self.n_defect + self.n_boundary + self.n_sym

        # Simpson weights on node controls (midpoints carry weight 4)
        self.node_w = np.full(K, 2.0)
        self.node_w[[0, -1]] = 1.0

        self._build_patterns()

    # -- layout helpers -------------------------------------------------
    def unpack(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n,):
            raise ValueError(f"decision vector has shape {w.shape}, expected ({self.n},)")
        X = w[: self.n_x].reshape(self.K, NX)
        U = w[self.n_x: self.n_x + self.n_u].reshape(self.K, NU)
        UM = w[self.n_x + self.n_u: self.itf].reshape(self.N, NU)
        return X, U, UM, w[self.itf]

    def pack(self, X, U, UM, tf) -> np.ndarray:
        return np.concatenate([np.ravel(X), np.ravel(U), np.ravel(UM), [tf]])

    def _build_patterns(self):
        K, N = self.K, self.N
        k = np.arange(N)
        xa = k[:, None] * NX + np.arange(NX)
        xb = (k[:, None] + 1) * NX + np.arange(NX)
        ua = self.n_x + k[:, None] * NU + np.arange(NU)
        ub = self.n_x + (k[:, None] + 1) * NU + np.arange(NU)
        um = self.n_x + self.n_u + k[:, None] * NU + np.arange(NU)
        tf = np.full((N, 1), self.itf)
        self.local_cols = np.hstack([xa, xb, ua, ub, um, tf])  # (N, 19)
        nl = self.local_cols.shape[1]
        rows = (k[:, None, None] * NX + np.arange(NX)[None, :, None]) * np.ones((1, 1, nl), dtype=int)
        cols = np.broadcast_to(self.local_cols[:, None, :], (N, NX, nl))
        bc_rows = self.n_defect + np.arange(self.n_boundary)
        bc_cols = np.concatenate([np.arange(NX), (K - 1) * NX + self.term_idx])
        r = [rows.ravel(), bc_rows]
        c = [cols.ravel(), bc_cols]
        if self.n_sym:
            srow = self.n_defect + self.n_boundary + np.arange(K + N)
            u1 = np.concatenate([self.n_x + np.arange(K) * NU, self.n_x + self.n_u + np.arange(N) * NU])
            r += [srow, srow]
            c += [u1, u1 + 1]
        self._jac_rows = np.concatenate(r)
        self._jac_cols = np.concatenate(c)
        sym_vals = np.concatenate([np.ones(K + N), -np.ones(K + N)]) if self.n_sym else np.zeros(0)
        self._jac_const = np.concatenate([np.ones(self.n_boundary), sym_vals])

        hr = np.broadcast_to(self.local_cols[:, :, None], (N, nl, nl)).ravel()
        hc = np.broadcast_to(self.local_cols[:, None, :], (N, nl, nl)).ravel()
        # cost hessian entries: diagonal on controls, control/tf cross terms
        ctrl = np.arange(self.n_x, self.itf)
        self._hess_rows = np.concatenate([hr, ctrl, ctrl, np.full(ctrl.size, self.itf)])
        self._hess_cols = np.concatenate([hc, ctrl, np.full(ctrl.size, self.itf), ctrl])
        self._ctrl_w = np.concatenate([np.repeat(self.node_w, NU), np.full(self.n_um, 4.0)])

    # -- dynamics pieces ------------------------------------------------
    def _segments(self, XA, XB, UA, UB, UM, TF, need_jac=True):
        """Defects and per-segment local Jacobians (N, 6, 19).

        Each argument is per segment so the segment functions can be
        perturbed independently when differencing for the Hessian.
        """
        p = self.params
        dtau = 1.0 / self.N
        h = (TF * dtau)[:, None]
        fa = dynamics(XA, UA, p)
        fb = dynamics(XB, UB, p)
        xm = 0.5 * (XA + XB) + (h / 8.0) * (fa - fb)
        fm = dynamics(xm, UM, p)
        d = XB - XA - (h / 6.0) * (fa + 4.0 * fm + fb)
        if not need_jac:
            return d, None
        Aa, Ba = jacobians(XA, UA, p)
        Ab, Bb = jacobians(XB, UB, p)
        Am, Bm = jacobians(xm, UM, p)
        I = np.eye(NX)
        h3 = h[:, :, None]
        dxm_dxa = 0.5 * I + (h3 / 8.0) * Aa
        dxm_dxb = 0.5 * I - (h3 / 8.0) * Ab
        dxm_dua = (h3 / 8.0) * Ba
        dxm_dub = -(h3 / 8.0) * Bb
        dxm_dtf = (dtau / 8.0) * (fa - fb)
        J = np.empty((XA.shape[0], NX, 2 * NX + 3 * NU + 1))
        J[:, :, 0:6] = -I - (h3 / 6.0) * (Aa + 4.0 * Am @ dxm_dxa)
        J[:, :, 6:12] = I - (h3 / 6.0) * (Ab + 4.0 * Am @ dxm_dxb)
        J[:, :, 12:14] = -(h3 / 6.0) * (Ba + 4.0 * Am @ dxm_dua)
        J[:, :, 14:16] = -(h3 / 6.0) * (Bb + 4.0 * Am @ dxm_dub)
        J[:, :, 16:18] = -(h3 / 6.0) * 4.0 * Bm
        J[:, :, 18] = -(dtau / 6.0) * (fa + 4.0 * fm + fb) - (h / 6.0) * 4.0 * np.einsum(
            "nij,nj->ni", Am, dxm_dtf
        )
        return d, J

    def _local(self, w):
        X, U, UM, tf = self.unpack(w)
        TF = np.full(self.N, tf)
        return X[:-1], X[1:], U[:-1], U[1:], UM, TF

    def defects(self, w) -> np.ndarray:
        d, _ = self._segments(*self._local(w), need_jac=False)
        return d

    # -- NLP callbacks --------------------------------------------------
    def constraints(self, w) -> np.ndarray:
        X, U, UM, tf = self.unpack(w)
        d = self.defects(w) * self.cfg.defect_scale
        parts = [d.ravel(), X[0] - self.x0, (X[-1] - self.xf)[self.term_idx]]
        if self.n_sym:
            parts += [U[:, 0] - U[:, 1], UM[:, 0] - UM[:, 1]]
        return np.concatenate(parts)

    def jacobian(self, w):
        _, J = self._segments(*self._local(w))
        vals = np.concatenate([(J * self.cfg.defect_scale).ravel(), self._jac_const])
        return sp.csr_matrix((vals, (self._jac_rows, self._jac_cols)), shape=(self.m, self.n))

    def objective(self, w) -> float:
        return eval_cost(w, self)

    def gradient(self, w) -> np.ndarray:
        eps = self.cfg.epsilon
        ctrl = np.asarray(w[self.n_x:self.itf])
        tf = w[self.itf]
        scale = eps / (6.0 * self.N)
        g = np.zeros(self.n)
        g[self.n_x:self.itf] = scale * tf * self._ctrl_w * 2.0 * ctrl
        g[self.itf] = (1.0 - eps) + scale * np.sum(self._ctrl_w * ctrl**2)
        return g

    def hessian(self, w, lam, obj_factor=1.0):
        """Hessian of ``obj_factor * J + lam . c``.

        The defect part is obtained by central differences of the analytic
        segment Jacobians, one local variable at a time across all segments.
        """
        lam_d = np.asarray(lam[: self.n_defect]).reshape(self.N, NX) * self.cfg.defect_scale
        local = self._local(w)
        V = np.hstack([a if a.ndim == 2 else a[:, None] for a in local])  # (N, 19)
        splits = np.cumsum([NX, NX, NU, NU, NU])
        N, nl = V.shape
        # all +/- perturbations of all local variables in one batched call
        step = 1e-5 * np.maximum(1.0, np.abs(V))  # (N, nl)
        E = np.eye(nl)[:, None, :] * step[None, :, :]  # (nl, N, nl)
        Vpm = np.concatenate([V[None] + E, V[None] - E]).reshape(-1, nl)
        _, Jpm = self._segments(*self._split(Vpm, splits))
        gpm = np.einsum("ki,kij->kj", np.tile(lam_d, (2 * nl, 1)), Jpm).reshape(2, nl, N, nl)
        Hl = (gpm[0] - gpm[1]) / (2.0 * step.T[:, :, None])  # (nl, N, nl)
        Hl = np.transpose(Hl, (1, 0, 2))
        Hl = 0.5 * (Hl + np.transpose(Hl, (0, 2, 1)))

        eps = self.cfg.epsilon
        ctrl = np.asarray(w[self.n_x:self.itf])
        tf = w[self.itf]
        scale = obj_factor * eps / (6.0 * self.N)
        diag = scale * tf * self._ctrl_w * 2.0
        cross = scale * self._ctrl_w * 2.0 * ctrl
        vals = np.concatenate([Hl.ravel(), diag, cross, cross])
        return sp.csr_matrix((vals, (self._hess_rows, self._hess_cols)), shape=(self.n, self.n))

    @staticmethod
    def _split(V, splits):
        XA, XB, UA, UB, UM, TF = np.split(V, splits, axis=1)
        return XA, XB, UA, UB, UM, TF[:, 0]

    # -- guesses ----------------------------------------------------------
    def initial_guess(self, tf=None) -> np.ndarray:
        """Straight-line states from x0 to 0, hover controls, tf from distance."""
        if tf is None:
            dist = float(np.hypot(self.x0[0], self.x0[1]))
            tf = 2.0 * dist / 5.0
        lo, hi = self.cfg.tf_bounds
        tf = min(max(tf, lo), hi)
        s = np.linspace(0.0, 1.0, self.K)[:, None]
        X = (1.0 - s) * self.x0 + s * self.xf
        try:
            uh = hover_command(self.params)
        except ValueError:
            uh = np.full(NU, 0.5)
        ulo, uhi = self.cfg.control_bounds
        uh = np.clip(uh, ulo, uhi)
        U = np.tile(uh, (self.K, 1))
        UM = np.tile(uh, (self.N, 1))
        return self.pack(X, U, UM, tf)

    def rollout_guess(self, tf_scale: float = 1.0) -> np.ndarray:
        """Guess resampled from a flight under a simple stabilizing controller.

        The rollout is dynamically consistent almost everywhere, which keeps
        the first Newton steps from collapsing ``tf``. Falls back to
        :meth:`initial_guess` when the controller does not get close.
        """
        if self.cfg.symmetric_controls or not np.any(self.x0):
            return self.initial_guess()
        t, S, U = _stabilizing_rollout(self.x0, self.params)
        if t is None:
            return self.initial_guess()
        lo, hi = self.cfg.tf_bounds
        tf = min(max(t[-1] * tf_scale, lo), hi)
        tk = np.linspace(0.0, 1.0, self.K) * t[-1]
        tm = 0.5 * (tk[:-1] + tk[1:])
        X = np.column_stack([np.interp(tk, t, S[:, j]) for j in range(NX)])
        X[-1] = self.xf
        ulo, uhi = self.cfg.control_bounds
        Uk = np.clip(np.column_stack([np.interp(tk, t, U[:, j]) for j in range(NU)]), ulo, uhi)
        Um = np.clip(np.column_stack([np.interp(tm, t, U[:, j]) for j in range(NU)]), ulo, uhi)
        return self.pack(X, Uk, Um, tf)


def _stabilizing_rollout(x0, p: QuadParams, dt=0.01, horizon=20.0, tol=0.3):
    """Fly a cascaded PD controller (position -> pitch -> throttles) from
    ``x0`` until position and speed are within ``tol`` of the origin."""
    kp, kd, k_th, k_q = 1.0, 1.6, 60.0, 14.0
    s = np.array(x0, dtype=float)
    states, controls = [s], []
    for _ in range(int(horizon / dt)):
        x, z, vx, vz, th, q = s
        ax = np.clip(-kp * x - kd * vx, -8.0, 8.0)
        az = np.clip(-kp * z - kd * vz, -6.0, 6.0)
        tx = -(ax + p.beta * vx)
        tz = az + p.g0 + p.beta * vz
        th_ref = np.clip(math.atan2(tx, max(tz, 1e-3)), -1.2, 1.2)
        u_sum = np.clip((math.hypot(tx, tz) - p.thrust_floor) / p.thrust_gain, 0.05, 1.95)
        u_diff = (k_th * (th_ref - th) - k_q * q) / p.moment_gain
        u = np.clip([0.5 * (u_sum - u_diff), 0.5 * (u_sum + u_diff)], 0.0, 1.0)
        controls.append(u)
        s = step_rk4(s, u, p, dt)
        states.append(s)
        if not np.all(np.isfinite(s)):
            return None, None, None
        if math.hypot(s[0], s[1]) < tol and math.hypot(s[2], s[3]) < tol:
            controls.append(u)
            S = np.array(states)
            return np.arange(len(S)) * dt, S, np.array(controls)
    return None, None, None


def transcribe(cfg: OcpConfig, params: QuadParams = DEFAULT_PARAMS) -> NlpProblem:
    return NlpProblem(cfg, params)


def eval_cost(w, problem: NlpProblem) -> float:
    """``(1-eps) tf + eps * int(u1^2 + u2^2)`` with Simpson quadrature."""
    X, U, UM, tf = problem.unpack(w)
    eps = problem.cfg.epsilon
    g_nodes = np.sum(U**2, axis=1)
    g_mid = np.sum(UM**2, axis=1)
    integral = tf / (6.0 * problem.N) * (
        np.sum(problem.node_w * g_nodes) + 4.0 * np.sum(g_mid)
    )
    return float((1.0 - eps) * tf + eps * integral)


def _to_solution(problem: NlpProblem, res: nlp.NlpResult) -> OcpSolution:
    X, U, UM, tf = problem.unpack(res.x)
    ulo, uhi = problem.cfg.control_bounds
    return OcpSolution(
        times=np.linspace(0.0, tf, problem.K),
        states=X.copy(),
        controls=np.clip(U, ulo, uhi),
        mid_controls=np.clip(UM, ulo, uhi),
        tf=float(tf),
        cost=eval_cost(res.x, problem),
        converged=res.converged,
        defect_norm=float(np.max(np.abs(problem.defects(res.x)))),
        epsilon=problem.cfg.epsilon,
        stationarity=res.stationarity,
        iterations=res.iterations,
        status=res.status,
    )


def solve(problem: NlpProblem, guess=None, options: nlp.SolverOptions | None = None) -> OcpSolution:
    """Solve the transcribed problem; raises :class:`OcpNotConverged` on failure.

    Without an explicit ``guess`` the solver starts from
    :meth:`NlpProblem.rollout_guess`.
    """
    w0 = problem.rollout_guess() if guess is None else np.asarray(guess, dtype=float)
    res = nlp.solve(problem, w0, options, raise_on_failure=False)
    sol = _to_solution(problem, res)
    if not res.converged or sol.defect_norm > DEFECT_TOL:
        sol.converged = False
        raise OcpNotConverged(
            f"OCP from x0={problem.cfg.x0} not converged ({res.status}, "
            f"defect={sol.defect_norm:.2e}, stat={res.stationarity:.2e})",
            res,
            sol,
        )
    return sol


def solve_ocp(x0, epsilon=0.2, params: QuadParams = DEFAULT_PARAMS, num_nodes=81, **kw) -> OcpSolution:
    problem = transcribe(OcpConfig(x0=tuple(x0), epsilon=epsilon, num_nodes=num_nodes, **kw), params)
    return solve(problem)


# -- independent audit ----------------------------------------------------
@dataclass
class VerificationReport:
    terminal_state: np.ndarray
    terminal_pos_error: float
    terminal_vel_error: float
    bound_violation: float
    cost_recomputed: float
    cost_rel_error: float
    interp_overshoot: float = 0.0
    notes: list = field(default_factory=list)

    def ok(self, pos_tol=1e-2, vel_tol=1e-2, cost_tol=1e-3) -> bool:
        return (
            self.terminal_pos_error <= pos_tol
            and self.terminal_vel_error <= vel_tol
            and self.bound_violation <= 1e-9
            and self.cost_rel_error <= cost_tol
        )


def verify(sol: OcpSolution, params: QuadParams = DEFAULT_PARAMS, dt: float = 1e-4) -> VerificationReport:
    """Re-integrate the control profile with fine RK4 steps and audit it.

    The profile is the piecewise quadratic through node, midpoint and node
    controls, held constant over each ``dt`` step at its value at the step
    midpoint (sampling at the step start would add an O(dt) pitch-rate bias
    wherever the throttles move quickly).
    """
    n = max(1, int(math.ceil(sol.tf / dt)))
    h = sol.tf / n
    t_mid = (np.arange(n) + 0.5) * h
    u_hold = sol.control_at(t_mid)
    overshoot = float(max(0.0, -u_hold.min(), u_hold.max() - 1.0))
    x = integrate_zoh(sol.states[0], u_hold, params, h)[-1]
    # fine Simpson quadrature of the power integral
    tt = np.linspace(0.0, sol.tf, 2 * n + 1)
    g = np.sum(sol.control_at(tt) ** 2, axis=1)
    integral = (h / 6.0) * (g[0:-1:2] + 4.0 * g[1::2] + g[2::2]).sum()
    cost = (1.0 - sol.epsilon) * sol.tf + sol.epsilon * integral
    pts = sol.controls if sol.mid_controls is None else np.vstack([sol.controls, sol.mid_controls])
    viol = float(max(0.0, -pts.min(), pts.max() - 1.0))
    notes = []
    if overshoot > 0:
        notes.append(f"quadratic control interpolant leaves [0, 1] by up to {overshoot:.3g}")
    return VerificationReport(
        terminal_state=x,
        terminal_pos_error=float(np.hypot(x[0], x[1])),
        terminal_vel_error=float(np.hypot(x[2], x[3])),
        bound_violation=viol,
        cost_recomputed=float(cost),
        cost_rel_error=float(abs(cost - sol.cost) / max(abs(sol.cost), 1e-12)),
        interp_overshoot=overshoot,
        notes=notes,
    )


# -- serialization ----------------------------------------------------------
def save_solution(sol: OcpSolution, path) -> None:
    """Node CSV at ``path`` plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SOLUTION_COLUMNS)
        for t, s, u in zip(sol.times, sol.states, sol.controls):
            wr.writerow([repr(float(v)) for v in (t, *s, *u)])
    Path(str(path) + ".json").write_text(json.dumps(sol.metadata(), indent=2) + "\n")


def load_solution(path) -> OcpSolution:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    with path.open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != SOLUTION_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        rows = np.array([[float(v) for v in r] for r in rd])
    return OcpSolution(
        times=rows[:, 0],
        states=rows[:, 1:7],
        controls=rows[:, 7:9],
        mid_controls=(None if meta.get("mid_controls") is None
                      else np.array(meta["mid_controls"], dtype=float).reshape(-1, NU)),
        tf=float(meta["tf"]),
        cost=float(meta["cost"]),
        converged=bool(meta["converged"]),
        defect_norm=float(meta["defect_norm"]),
        epsilon=float(meta["epsilon"]),
        stationarity=float(meta.get("stationarity", float("nan"))),
        iterations=int(meta.get("iterations", 0)),
        status=str(meta.get("status", "")),
    )
