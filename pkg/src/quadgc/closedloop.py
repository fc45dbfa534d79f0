"""Closed-loop flights of a policy against the plant, with actuation delay.

The controller at time ``t`` sees the state measured at ``t - tau``; the delay
is a whole number of integration steps. The same loop and the same arrival
test serve the network controller and the polynomial tracking baseline.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import DEFAULT_PARAMS, NX, QuadParams, rk4_scalar
from .network import MlpParams, softplus

SIM_COLUMNS = ("t", "x", "z", "vx", "vz", "theta", "q", "u1", "u2")


class BracketInvalid(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    tau: float = 0.0
    horizon: float = 20.0
    pos_tol: float = 0.15
    speed_tol: float = 0.3
    hold: float = 0.2
    diverge_pos: float = 50.0
    diverge_theta: float = math.pi
    stop_on_arrival: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def delay_steps(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


class DelayLine:
    """Ring buffer returning the state pushed ``n`` calls earlier; before
    that, the state it was primed with."""

    def __init__(self, n: int, initial):
        if n < 0:
            raise ValueError("delay must be non-negative")
        self.n = n
        self._buf = deque([initial] * n, maxlen=n + 1)

    def push(self, state):
        if self.n == 0:
            return state
        self._buf.append(state)
        return self._buf.popleft()


@dataclass
class SimResult:
    t: np.ndarray
    states: np.ndarray
    commands: np.ndarray
    target: tuple
    arrival_time: float | None
    diverged: bool
    config: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def final_position_error(self) -> float:
        return float(math.hypot(self.states[-1, 0] - self.target[0], self.states[-1, 1] - self.target[1]))

    def position_error(self) -> np.ndarray:
        return np.hypot(self.states[:, 0] - self.target[0], self.states[:, 1] - self.target[1])

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SIM_COLUMNS)
            for t, s, u in zip(self.t, self.states, self.commands):
                wr.writerow([repr(float(v)) for v in (t, *s, *u)])


def load_sim_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != SIM_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        a = np.array([[float(v) for v in r] for r in rd]).reshape(-1, len(SIM_COLUMNS))
    return a[:, 0], a[:, 1:7], a[:, 7:9]


def arrival_time(t, states, target, pos_tol=0.15, speed_tol=0.3, hold=0.2) -> float | None:
    """Start of the first window of length ``hold`` during which position
    error stays below ``pos_tol`` and speed below ``speed_tol``."""
    t = np.asarray(t, dtype=float)
    states = np.asarray(states, dtype=float)
    if len(t) == 0:
        return None
    ok = (np.hypot(states[:, 0] - target[0], states[:, 1] - target[1]) < pos_tol) & (
        np.hypot(states[:, 2], states[:, 3]) < speed_tol
    )
    start = None
    slack = 1e-9 * max(1.0, abs(t[-1]))
    for i, good in enumerate(ok):
        if not good:
            start = None
            continue
        if start is None:
            start = i
        if t[i] - t[start] >= hold - slack:
            return float(t[start])
    return None


def run_closed_loop(policy: Callable, x0, cfg: SimConfig, params: QuadParams = DEFAULT_PARAMS,
                    target=(0.0, 0.0)) -> SimResult:
    """Generic loop: ``policy(measured_state, t) -> (u1, u2)``.

    Each step pops the delayed measurement, asks the policy, clamps to
    [0, 1], holds the command over ``dt`` and advances the plant with RK4.
    """
    n = cfg.steps
    dt = cfg.dt
    xt, zt = float(target[0]), float(target[1])
    s = tuple(float(v) for v in x0)
    if len(s) != NX or not all(math.isfinite(v) for v in s):
        raise ValueError(f"x0 must be 6 finite numbers, got {x0}")
    line = DelayLine(cfg.delay_steps, s)
    T = np.empty(n + 1)
    S = np.empty((n + 1, NX))
    U = np.empty((n + 1, 2))
    diverged = False
    need_hold = int(math.ceil(cfg.hold / dt - 1e-9))
    run = 0
    last = n
    for i in range(n + 1):
        t = i * dt
        meas = line.push(s)
        u1, u2 = policy(meas, t)
        u1 = min(max(float(u1), 0.0), 1.0)
        u2 = min(max(float(u2), 0.0), 1.0)
        T[i], S[i], U[i] = t, s, (u1, u2)
        if (math.hypot(s[0] - xt, s[1] - zt) > cfg.diverge_pos or abs(s[4]) > cfg.diverge_theta
                or not all(math.isfinite(v) for v in s)):
            diverged = True
            last = i
            break
        if cfg.stop_on_arrival:
            inside = (math.hypot(s[0] - xt, s[1] - zt) < cfg.pos_tol
                      and math.hypot(s[2], s[3]) < cfg.speed_tol)
            run = run + 1 if inside else 0
            if run > need_hold:
                last = i
                break
        if i == n:
            break
        s = rk4_scalar(s, u1, u2, dt, params)
    T, S, U = T[: last + 1], S[: last + 1], U[: last + 1]
    arr = arrival_time(T, S, (xt, zt), cfg.pos_tol, cfg.speed_tol, cfg.hold)
    return SimResult(T, S, U, (xt, zt), arr, diverged, asdict(cfg))


def net_policy(net: MlpParams, target=(0.0, 0.0)) -> Callable:
    """Per-sample forward pass on the target-relative state."""
    Ws = [ly.w for ly in net.layers]
    bs = [ly.b for ly in net.layers]
    acts = [ly.act for ly in net.layers]
    scale = np.asarray(net.normalization, dtype=float)
    shift = np.array([target[0], target[1], 0.0, 0.0, 0.0, 0.0])

    def policy(s, t):
        a = (np.array(s) - shift) / scale
        for W, b, act in zip(Ws, bs, acts):
            z = W @ a + b
            a = softplus(z) if act == "softplus" else 1.0 / (1.0 + np.exp(-z))
        return a[0], a[1]

    return policy


def simulate_gcnet(net: MlpParams, x0, target=(0.0, 0.0), cfg: SimConfig = SimConfig(),
                   params: QuadParams = DEFAULT_PARAMS) -> SimResult:
    return run_closed_loop(net_policy(net, target), x0, cfg, params, target)


def delay_sweep(net: MlpParams, x0, target=(0.0, 0.0), taus=(0.0, 0.018, 0.036),
                cfg: SimConfig = SimConfig(), params: QuadParams = DEFAULT_PARAMS) -> list[SimResult]:
    """One flight per delay on a shared time grid (arrival never stops a run)."""
    out = []
    for tau in taus:
        c = SimConfig(**{**asdict(cfg), "tau": float(tau), "stop_on_arrival": False})
        out.append(simulate_gcnet(net, x0, target, c, params))
    return out


def terminal_pitch_deviation(res: SimResult, window: float = 1.0) -> float:
    """Largest |theta| over the last ``window`` seconds of a flight (a
    diverged flight counts as infinitely deviated)."""
    if res.diverged:
        return math.inf
    mask = res.t >= res.t[-1] - window - 1e-12
    return float(np.max(np.abs(res.states[mask, 4])))


def save_sweep(results: list[SimResult], outdir, prefix="delay") -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    index = []
    for r in results:
        ms = int(round(r.config["tau"] * 1000))
        name = f"{prefix}_{ms:03d}ms.csv"
        r.save_csv(outdir / name)
        index.append({"tau": r.config["tau"], "file": name, "arrival_time": r.arrival_time,
                      "diverged": r.diverged, "terminal_pitch_dev": terminal_pitch_deviation(r)})
    path = outdir / f"{prefix}_index.json"
    path.write_text(json.dumps(index, indent=2) + "\n")
    return path


# -- stability margin --------------------------------------------------------
@dataclass
class StabilityReport:
    tau_s: float
    resolution: float
    trace: list  # (tau, stable, max excursion) in evaluation order
    postcondition_ok: bool
    note: str = "bisection assumes stability is monotone in the delay"

    def to_dict(self) -> dict:
        return asdict(self)


def hover_excursion(net: MlpParams, tau: float, params: QuadParams = DEFAULT_PARAMS,
                    dt: float = 0.001, duration: float = 20.0) -> float:
    """Largest distance from the target while station-keeping at it from
    rest with delay ``tau``; ``inf`` on divergence."""
    cfg = SimConfig(dt=dt, tau=tau, horizon=duration)
    res = simulate_gcnet(net, np.zeros(NX), (0.0, 0.0), cfg, params)
    if res.diverged:
        return math.inf
    return float(res.position_error().max())


def stability_margin(net: MlpParams, params: QuadParams = DEFAULT_PARAMS, tau_range=(0.0, 0.2),
                     dt: float = 0.001, duration: float = 20.0, max_excursion: float = 0.5) -> StabilityReport:
    """Largest delay (on a ``dt`` grid) for which hover station-keeping holds
    within ``max_excursion`` for ``duration`` seconds, found by bisection."""
    trace = []

    def stable(k: int) -> bool:
        exc = hover_excursion(net, k * dt, params, dt, duration)
        ok = exc <= max_excursion
        trace.append((k * dt, ok, exc))
        return ok

    lo = int(round(tau_range[0] / dt))
    hi = int(round(tau_range[1] / dt))
    if hi <= lo:
        raise BracketInvalid(f"empty delay bracket {tau_range}")
    s_lo, s_hi = stable(lo), stable(hi)
    if s_lo == s_hi or not s_lo:
        raise BracketInvalid(
            f"bracket {tau_range} does not straddle the margin (stable at low end: {s_lo}, "
            f"at high end: {s_hi})"
        )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stable(mid):
            lo = mid
        else:
            hi = mid
    post = lo == 0 or stable(lo - 1)
    return StabilityReport(tau_s=lo * dt, resolution=dt, trace=trace, postcondition_ok=bool(post))
