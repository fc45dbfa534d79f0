"""Planar quadrotor model in the x-z plane.

State vector ordering is ``[x, z, vx, vz, theta, q]`` and the control is the
pair of normalized rotor throttles ``[u1, u2]`` in ``[0, 1]``. All functions
broadcast over leading dimensions so the collocation code can evaluate whole
grids at once.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

STATE_NAMES = ("x", "z", "vx", "vz", "theta", "q")
CONTROL_NAMES = ("u1", "u2")
NX = 6
NU = 2


class HoverInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class QuadParams:
    f_max: float = 2.35
    f_min: float = 1.76
    beta: float = 0.5
    mass: float = 0.389
    arm_len: float = 0.08
    inertia_xx: float = 0.001242
    g0: float = 9.81

    def __post_init__(self):
        vals = asdict(self)
        if not all(math.isfinite(v) for v in vals.values()):
            raise ValueError(f"non-finite parameter in {vals}")
        if not self.f_max > self.f_min >= 0.0:
            raise ValueError("need f_max > f_min >= 0")
        if min(self.mass, self.arm_len, self.inertia_xx, self.g0) <= 0.0:
            raise ValueError("mass, arm_len, inertia_xx and g0 must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be non-negative")

    @property
    def delta_f(self) -> float:
        return self.f_max - self.f_min

    @property
    def thrust_gain(self) -> float:
        """Thrust acceleration per unit of summed throttle, dF/m."""
        return self.delta_f / self.mass

    @property
    def thrust_floor(self) -> float:
        """Thrust acceleration at zero throttle, 2 F_min / m."""
        return 2.0 * self.f_min / self.mass

    @property
    def moment_gain(self) -> float:
        """Pitch acceleration per unit throttle difference, L dF / Ixx."""
        return self.arm_len * self.delta_f / self.inertia_xx

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_f"] = self.delta_f
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuadParams":
        d = dict(d)
        delta_f = d.pop("delta_f", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown parameter fields: {sorted(unknown)}")
        p = cls(**{k: float(v) for k, v in d.items()})
        if delta_f is not None and abs(float(delta_f) - p.delta_f) > 1e-9:
            raise ValueError(
                f"delta_f={delta_f} inconsistent with f_max - f_min = {p.delta_f}"
            )
        return p


DEFAULT_PARAMS = QuadParams()


def load_params(path) -> QuadParams:
    return QuadParams.from_dict(json.loads(Path(path).read_text()))


def save_params(p: QuadParams, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=2) + "\n")


class Actuation(NamedTuple):
    thrust_cmd: float
    qdot_cmd: float


def dynamics(s, u, p: QuadParams = DEFAULT_PARAMS) -> np.ndarray:
    """Time derivative of the planar state; broadcasts over leading axes."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    vx, vz, th, q = s[..., 2], s[..., 3], s[..., 4], s[..., 5]
    u1, u2 = u[..., 0], u[..., 1]
    acc = (u1 + u2) * p.thrust_gain + p.thrust_floor
    out = np.empty(np.broadcast_shapes(s.shape[:-1], u.shape[:-1]) + (NX,))
    out[..., 0] = vx
    out[..., 1] = vz
    out[..., 2] = -acc * np.sin(th) - p.beta * vx
    out[..., 3] = acc * np.cos(th) - p.g0 - p.beta * vz
    out[..., 4] = q
    out[..., 5] = p.moment_gain * (u2 - u1)
    return out


def jacobians(s, u, p: QuadParams = DEFAULT_PARAMS) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(df/ds, df/du)`` with shapes ``(..., 6, 6)`` and ``(..., 6, 2)``."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    th = s[..., 4]
    acc = (u[..., 0] + u[..., 1]) * p.thrust_gain + p.thrust_floor
    shape = np.broadcast_shapes(s.shape[:-1], u.shape[:-1])
    sin, cos = np.sin(th), np.cos(th)
    A = np.zeros(shape + (NX, NX))
    A[..., 0, 2] = 1.0
    A[..., 1, 3] = 1.0
    A[..., 2, 2] = -p.beta
    A[..., 2, 4] = -acc * cos
    A[..., 3, 3] = -p.beta
    A[..., 3, 4] = -acc * sin
    A[..., 4, 5] = 1.0
    B = np.zeros(shape + (NX, NU))
    B[..., 2, :] = (-p.thrust_gain * sin)[..., None]
    B[..., 3, :] = (p.thrust_gain * cos)[..., None]
    B[..., 5, 0] = -p.moment_gain
    B[..., 5, 1] = p.moment_gain
    return A, B


def step_rk4(s, u, p: QuadParams = DEFAULT_PARAMS, dt: float = 0.002) -> np.ndarray:
    """One classical RK4 step with the control held constant over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=float)
    k1 = dynamics(s, u, p)
    k2 = dynamics(s + 0.5 * dt * k1, u, p)
    k3 = dynamics(s + 0.5 * dt * k2, u, p)
    k4 = dynamics(s + dt * k3, u, p)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(s0, control, p: QuadParams, tf: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate with RK4 from 0 to ``tf``; ``control(t)`` is sampled at the
    start of each step (zero-order hold). Returns ``(t, states)``."""
    n = max(1, int(round(tf / dt)))
    h = tf / n
    t = np.linspace(0.0, tf, n + 1)
    out = np.empty((n + 1, NX))
    out[0] = s0
    for i in range(n):
        out[i + 1] = step_rk4(out[i], control(t[i]), p, h)
    return t, out


def hover_command(p: QuadParams = DEFAULT_PARAMS) -> np.ndarray:
    weight = p.mass * p.g0
    if not 2.0 * p.f_min <= weight <= 2.0 * p.f_max:
        raise HoverInfeasible(
            f"m*g0 = {weight:.4f} N outside [2*f_min, 2*f_max] = "
            f"[{2 * p.f_min:.4f}, {2 * p.f_max:.4f}] N"
        )
    u = (weight - 2.0 * p.f_min) / (2.0 * p.delta_f)
    u = min(max(u, 0.0), 1.0)
    return np.array([u, u])


def command_to_actuation(u, p: QuadParams = DEFAULT_PARAMS) -> Actuation:
    # pitch sign follows the plant model (u2 - u1), see dynamics()
    u1, u2 = float(u[0]), float(u[1])
    return Actuation((u1 + u2) * p.thrust_gain, p.moment_gain * (u2 - u1))


def rotor_forces(u, p: QuadParams = DEFAULT_PARAMS) -> np.ndarray:
    return p.f_min + np.asarray(u, dtype=float) * p.delta_f


def throttles_from_forces(forces, p: QuadParams = DEFAULT_PARAMS) -> np.ndarray:
    return (np.asarray(forces, dtype=float) - p.f_min) / p.delta_f


def rk4_scalar(state, u1: float, u2: float, dt: float, p: QuadParams = DEFAULT_PARAMS) -> tuple:
    """One RK4 step on a plain tuple state; the loop-friendly twin of
    :func:`step_rk4` (no array allocation)."""
    x, z, vx, vz, th, q = state
    kb, g0 = p.beta, p.g0
    acc = (u1 + u2) * p.thrust_gain + p.thrust_floor
    qd = p.moment_gain * (u2 - u1)
    h2 = 0.5 * dt
    sin, cos = math.sin, math.cos
    a1x = -acc * sin(th) - kb * vx
    a1z = acc * cos(th) - g0 - kb * vz
    vx2, vz2, th2, q2 = vx + h2 * a1x, vz + h2 * a1z, th + h2 * q, q + h2 * qd
    a2x = -acc * sin(th2) - kb * vx2
    a2z = acc * cos(th2) - g0 - kb * vz2
    vx3, vz3, th3, q3 = vx + h2 * a2x, vz + h2 * a2z, th + h2 * q2, q + h2 * qd
    a3x = -acc * sin(th3) - kb * vx3
    a3z = acc * cos(th3) - g0 - kb * vz3
    vx4, vz4, th4, q4 = vx + dt * a3x, vz + dt * a3z, th + dt * q3, q + dt * qd
    a4x = -acc * sin(th4) - kb * vx4
    a4z = acc * cos(th4) - g0 - kb * vz4
    h6 = dt / 6.0
    return (
        x + h6 * (vx + 2 * vx2 + 2 * vx3 + vx4),
        z + h6 * (vz + 2 * vz2 + 2 * vz3 + vz4),
        vx + h6 * (a1x + 2 * a2x + 2 * a3x + a4x),
        vz + h6 * (a1z + 2 * a2z + 2 * a3z + a4z),
        th + h6 * (q + 2 * q2 + 2 * q3 + q4),
        q + dt * qd,
    )


def integrate_zoh(s0, controls, p: QuadParams = DEFAULT_PARAMS, dt: float = 0.002) -> np.ndarray:
    """RK4 over a sequence of held controls; returns the ``len(controls) + 1``
    visited states."""
    controls = np.asarray(controls, dtype=float)
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty((len(controls) + 1, NX))
    out[0] = s0
    s = tuple(float(v) for v in s0)
    for i, (u1, u2) in enumerate(controls.tolist()):
        s = rk4_scalar(s, u1, u2, dt, p)
        out[i + 1] = s
    return out
