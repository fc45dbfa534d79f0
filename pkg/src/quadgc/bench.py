"""Head-to-head arrival-time comparison of the network and the baseline.

Both controllers fly the same start/target pairs through
:func:`quadgc.closedloop.run_closed_loop` and are timed with the same
:func:`quadgc.closedloop.arrival_time` criterion.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffgc
from .closedloop import SimConfig, SimResult, simulate_gcnet
from .dynamics import DEFAULT_PARAMS, QuadParams
from .network import MlpParams

GRID_COLUMNS = ("x_f", "z_f", "tf_diffgc", "tf_gcnet", "sigma")


def sigma(tf_diffgc, tf_gcnet) -> float | None:
    """Relative speed-up of the network; None when either time is missing."""
    if tf_diffgc is None or tf_gcnet is None:
        return None
    if not tf_diffgc > 0:
        raise ValueError("tf_diffgc must be positive")
    return (tf_diffgc - tf_gcnet) / tf_diffgc


@dataclass(frozen=True)
class BenchmarkSpec:
    start: tuple = (0.0, 2.5)
    x_range: tuple = (1.0, 10.0)
    z_range: tuple = (0.0, 5.0)
    nx: int = 10
    nz: int = 6
    horizon: float = 25.0  # seconds of flight allowed beyond the planned time

    def targets(self) -> list[tuple[float, float]]:
        xs = np.linspace(*self.x_range, self.nx)
        zs = np.linspace(*self.z_range, self.nz)
        return [(float(x), float(z)) for z in zs for x in xs]


@dataclass
class ComparisonCell:
    target: tuple
    tf_diffgc: float | None
    tf_gcnet: float | None
    tf_planned: float | None = None  # min-time polynomial duration
    note: str = ""

    @property
    def sigma(self) -> float | None:
        return sigma(self.tf_diffgc, self.tf_gcnet)


def _arrival_cfg(cfg: SimConfig, horizon: float) -> SimConfig:
    return SimConfig(**{**asdict(cfg), "horizon": horizon, "stop_on_arrival": True})


def run_cell(target, net: MlpParams, spec: BenchmarkSpec = BenchmarkSpec(), cfg: SimConfig = SimConfig(),
             params: QuadParams = DEFAULT_PARAMS, gains=diffgc.TrackingGains(),
             dt_step: float = 0.05) -> ComparisonCell:
    start = spec.start
    x0 = (start[0], start[1], 0.0, 0.0, 0.0, 0.0)
    notes = []
    tf_d = tf_plan = None
    try:
        tf_plan, traj = diffgc.min_time_search(start, target, params, dt_step)
        rd = diffgc.simulate_diffgc(traj, params, gains, _arrival_cfg(cfg, tf_plan + spec.horizon), x0)
        tf_d = rd.arrival_time
        if tf_d is None:
            notes.append("diffgc did not arrive")
    except (diffgc.InfeasibleStart, diffgc.SingularKkt, diffgc.SingularThrust) as exc:
        notes.append(f"diffgc failed: {exc}")
    rg = simulate_gcnet(net, x0, target, _arrival_cfg(cfg, spec.horizon), params)
    tf_g = rg.arrival_time
    if tf_g is None:
        notes.append("gcnet diverged" if rg.diverged else "gcnet did not arrive")
    return ComparisonCell(tuple(target), tf_d, tf_g, tf_plan, "; ".join(notes))


def _cell_job(args):
    return run_cell(*args)


def sigma_grid(spec: BenchmarkSpec, net: MlpParams, params: QuadParams = DEFAULT_PARAMS,
               cfg: SimConfig = SimConfig(), gains=diffgc.TrackingGains(), dt_step: float = 0.05,
               workers: int | None = 1) -> list[ComparisonCell]:
    """One noiseless comparison per target, ordered by cell index."""
    jobs = [(t, net, spec, cfg, params, gains, dt_step) for t in spec.targets()]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell_job, jobs))
    return [_cell_job(j) for j in jobs]


def grid_summary(cells: list[ComparisonCell]) -> dict:
    s = [c.sigma for c in cells if c.sigma is not None]
    return {
        "cells": len(cells),
        "available": len(s),
        "sigma_min": min(s) if s else None,
        "sigma_max": max(s) if s else None,
        "sigma_mean": float(np.mean(s)) if s else None,
        "fraction_positive": (sum(v > 0 for v in s) / len(cells)) if cells else None,
        "failed_cells": [{"x_f": c.target[0], "z_f": c.target[1], "note": c.note}
                         for c in cells if c.sigma is None],
    }


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def emit_report(cells: list[ComparisonCell], path, metrics: dict | None = None) -> dict:
    """Write the grid CSV at ``path`` and a JSON summary next to it."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(GRID_COLUMNS)
        for c in cells:
            wr.writerow([_fmt(c.target[0]), _fmt(c.target[1]), _fmt(c.tf_diffgc),
                         _fmt(c.tf_gcnet), _fmt(c.sigma)])
    summary = grid_summary(cells)
    if metrics:
        summary["metrics"] = metrics
    path.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def load_grid(path) -> list[ComparisonCell]:
    def val(s):
        return None if s == "" else float(s)

    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != GRID_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        return [ComparisonCell((float(r[0]), float(r[1])), val(r[2]), val(r[3])) for r in rd]


# -- flight metrics ------------------------------------------------------------
@dataclass
class FlightMetrics:
    mean_arrival: float | None
    std_arrival: float | None
    arrivals: list = field(default_factory=list)
    missing: int = 0
    mean_tracking: float | None = None
    tracking: list = field(default_factory=list)
    samples: list = field(default_factory=list)  # n_i per run


def arrival_stats(runs: list[SimResult]) -> FlightMetrics:
    """Mean and sample standard deviation of arrival times; runs that never
    arrive are excluded and counted."""
    vals = [r.arrival_time for r in runs if r.arrival_time is not None]
    missing = len(runs) - len(vals)
    if not vals:
        return FlightMetrics(None, None, [], missing)
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return FlightMetrics(float(sum(vals) / len(vals)), std, vals, missing)


def tracking_error(run: SimResult, ref_t, ref_pos) -> float:
    """Mean Euclidean distance between the flown and reference positions,
    with the reference linearly resampled onto the run's time grid over the
    overlap of the two time spans."""
    ref_t = np.asarray(ref_t, dtype=float)
    ref_pos = np.asarray(ref_pos, dtype=float)
    if ref_pos.shape != (len(ref_t), 2):
        raise ValueError(f"reference positions must be ({len(ref_t)}, 2), got {ref_pos.shape}")
    mask = (run.t >= ref_t[0] - 1e-12) & (run.t <= ref_t[-1] + 1e-12)
    if not np.any(mask):
        raise ValueError("run and reference do not overlap in time")
    t = run.t[mask]
    rx = np.interp(t, ref_t, ref_pos[:, 0])
    rz = np.interp(t, ref_t, ref_pos[:, 1])
    if len(rx) != int(mask.sum()):
        raise ValueError("length mismatch after resampling")
    return float(np.mean(np.hypot(run.states[mask, 0] - rx, run.states[mask, 1] - rz)))


def perturbed_starts(start, n: int, seed: int, sigma_pos: float = 0.02, sigma_vel: float = 0.02):
    """Initial states scattered around a rest start (flight-to-flight spread)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        dp = rng.normal(0.0, sigma_pos, 2)
        dv = rng.normal(0.0, sigma_vel, 2)
        out.append((start[0] + dp[0], start[1] + dp[1], dv[0], dv[1], 0.0, 0.0))
    return out


def flight_table(target, net: MlpParams, reference, n_runs: int = 10, seed: int = 0,
                 start=(0.0, -1.5), params: QuadParams = DEFAULT_PARAMS, cfg: SimConfig = SimConfig(),
                 horizon: float = 25.0) -> FlightMetrics:
    """Arrival and tracking statistics of ``n_runs`` perturbed network flights.

    ``reference`` is ``(t, positions)`` of the nominal (unperturbed) flight.
    """
    runs = [simulate_gcnet(net, x0, target, _arrival_cfg(cfg, horizon), params)
            for x0 in perturbed_starts(start, n_runs, seed)]
    m = arrival_stats(runs)
    m.tracking = [tracking_error(r, *reference) for r in runs]
    m.mean_tracking = float(np.mean(m.tracking))
    m.samples = [len(r.t) for r in runs]
    return m


def diffgc_flight_table(target, n_runs: int = 10, seed: int = 0, start=(0.0, -1.5),
                        params: QuadParams = DEFAULT_PARAMS, cfg: SimConfig = SimConfig(),
                        gains=diffgc.TrackingGains(), horizon: float = 25.0) -> FlightMetrics:
    tf, traj = diffgc.min_time_search(start, target, params)
    tt = np.linspace(0.0, tf, int(math.ceil(tf / cfg.dt)) + 1)
    ref = (tt, traj.eval(tt))
    runs = [diffgc.simulate_diffgc(traj, params, gains, _arrival_cfg(cfg, tf + horizon), x0)
            for x0 in perturbed_starts(start, n_runs, seed)]
    m = arrival_stats(runs)
    m.tracking = [tracking_error(r, *ref) for r in runs]
    m.mean_tracking = float(np.mean(m.tracking))
    m.samples = [len(r.t) for r in runs]
    return m
