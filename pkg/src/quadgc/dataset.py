"""Batches of optimal trajectories for imitation learning.

Initial states are drawn from a box with a counter-based generator, so the
state for draw ``i`` depends only on ``(seed, i)`` and parallel generation
gives the same dataset as a serial run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ocp
from .dynamics import DEFAULT_PARAMS, NX, QuadParams

log = logging.getLogger(__name__)

DATASET_COLUMNS = (
    "traj_id", "split", "epsilon", "node_idx", "t",
    "x", "z", "vx", "vz", "theta", "q", "u1", "u2",
)
SPLITS = ("train", "val", "test")
UNASSIGNED = "none"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSpec:
    lower: tuple = (-10.0, -10.0, -5.0, -5.0, -math.pi / 3, -0.01)
    upper: tuple = (10.0, 10.0, 5.0, 5.0, math.pi / 3, 0.01)
    num_requested: int = 2000
    seed: int = 0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != NX or len(hi) != NX:
            raise ValueError("sampling box needs 6 lower and 6 upper values")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty sampling box {lo} .. {hi}")
        if self.num_requested < 0:
            raise ValueError("num_requested must be non-negative")

    @classmethod
    def point(cls, x0, num_requested=1, seed=0) -> "SampleSpec":
        """A degenerate box that always yields ``x0``."""
        return cls(tuple(x0), tuple(x0), num_requested, seed)


def sample_initial(spec: SampleSpec, draw_index: int) -> np.ndarray:
    if not 0 <= draw_index < spec.num_requested:
        raise IndexError(f"draw_index {draw_index} outside [0, {spec.num_requested})")
    rng = np.random.default_rng([spec.seed, draw_index])
    lo, hi = np.array(spec.lower), np.array(spec.upper)
    return lo + (hi - lo) * rng.random(NX)


@dataclass
class TrajectoryRecord:
    id: int
    epsilon: float
    solution: ocp.OcpSolution


@dataclass
class Dataset:
    records: list = field(default_factory=list)
    split_of: dict = field(default_factory=dict)  # traj id -> split name

    def __len__(self):
        return len(self.records)

    def split_records(self, name: str) -> list:
        return [r for r in self.records if self.split_of.get(r.id) == name]

    def pairs(self, name: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Stacked node ``(states, controls)`` of one split (all if None)."""
        recs = self.records if name is None else self.split_records(name)
        if not recs:
            return np.zeros((0, NX)), np.zeros((0, 2))
        S = np.concatenate([r.solution.states for r in recs])
        U = np.concatenate([r.solution.controls for r in recs])
        return S, U

    def pair_counts(self) -> dict:
        counts = {s: 0 for s in SPLITS}
        for r in self.records:
            name = self.split_of.get(r.id, UNASSIGNED)
            counts[name] = counts.get(name, 0) + len(r.solution.times)
        return counts


@dataclass
class GenerationReport:
    attempted: int
    converged: int
    rate: float
    retried: int
    wall_time: float
    seed: int
    epsilon: float
    spec: dict
    failed_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _solve_draw(job):
    """Worker body: one OCP, retried once from a perturbed guess."""
    idx, x0, eps, params, num_nodes = job
    problem = ocp.transcribe(ocp.OcpConfig(x0=tuple(x0), epsilon=eps, num_nodes=num_nodes), params)
    try:
        return idx, ocp.solve(problem), False
    except ocp.OcpNotConverged:
        pass
    except (np.linalg.LinAlgError, FloatingPointError, ValueError, RuntimeError) as exc:
        log.debug("draw %d raised %r", idx, exc)
    try:
        return idx, ocp.solve(problem, guess=problem.rollout_guess(tf_scale=1.25)), True
    except ocp.OcpNotConverged:
        return idx, None, True
    except (np.linalg.LinAlgError, FloatingPointError, ValueError, RuntimeError) as exc:
        log.debug("draw %d retry raised %r", idx, exc)
        return idx, None, True


def generate(
    spec: SampleSpec,
    eps: float = 0.2,
    params: QuadParams = DEFAULT_PARAMS,
    num_nodes: int = 81,
    workers: int | None = 1,
    start: int = 0,
) -> tuple[Dataset, GenerationReport]:
    """Solve one OCP per draw and keep the converged ones, ordered by draw.

    ``start`` skips the first draws, so a batch can be extended later without
    re-solving it: draws depend only on ``(seed, index)``.
    """
    if not 0 <= start <= spec.num_requested:
        raise ValueError(f"start {start} outside [0, {spec.num_requested}]")
    t0 = time.perf_counter()
    jobs = [(i, sample_initial(spec, i), eps, params, num_nodes) for i in range(start, spec.num_requested)]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_draw, jobs, chunksize=4))
    else:
        results = [_solve_draw(j) for j in jobs]

    records, failed, retried = [], [], 0
    for idx, sol, was_retried in sorted(results, key=lambda r: r[0]):
        retried += int(was_retried)
        if sol is None:
            failed.append(idx)
        else:
            records.append(TrajectoryRecord(idx, float(eps), sol))
    n = spec.num_requested - start
    report = GenerationReport(
        attempted=n,
        converged=len(records),
        rate=len(records) / n if n else 0.0,
        retried=retried,
        wall_time=time.perf_counter() - t0,
        seed=spec.seed,
        epsilon=float(eps),
        spec=asdict(spec),
        failed_ids=failed,
    )
    log.info("generated %d/%d trajectories (eps=%g) in %.1f s",
             report.converged, n, eps, report.wall_time)
    return Dataset(records), report


def _split_counts(n: int, fractions) -> list[int]:
    """Largest-remainder rounding of ``n * fractions``."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Random train/val/test assignment by whole trajectory."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    ids = sorted(r.id for r in ds.records)
    perm = np.random.default_rng(seed).permutation(len(ids))
    counts = _split_counts(len(ids), fractions)
    split_of, start = {}, 0
    for name, cnt in zip(SPLITS, counts):
        for j in perm[start:start + cnt]:
            split_of[ids[j]] = name
        start += cnt
    return Dataset(list(ds.records), split_of)


# -- CSV --------------------------------------------------------------------
def save(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DATASET_COLUMNS)
        for rec in ds.records:
            sol = rec.solution
            name = ds.split_of.get(rec.id, UNASSIGNED)
            for k, (t, s, u) in enumerate(zip(sol.times, sol.states, sol.controls)):
                wr.writerow([rec.id, name, repr(float(rec.epsilon)), k,
                             *(repr(float(v)) for v in (t, *s, *u))])


def load(path) -> Dataset:
    """Read a dataset CSV; raises :class:`SchemaError` naming the bad row."""
    rows: dict[int, list] = {}
    meta: dict[int, tuple] = {}
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != DATASET_COLUMNS:
            raise SchemaError(f"row 1: expected header {','.join(DATASET_COLUMNS)}, got {header}")
        for lineno, row in enumerate(rd, start=2):
            if len(row) != len(DATASET_COLUMNS):
                raise SchemaError(f"row {lineno}: expected {len(DATASET_COLUMNS)} fields, got {len(row)}")
            try:
                tid, k = int(row[0]), int(row[3])
                eps = float(row[2])
                vals = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise SchemaError(f"row {lineno}: {exc}") from None
            name = row[1]
            if name not in SPLITS + (UNASSIGNED,):
                raise SchemaError(f"row {lineno}: unknown split {name!r}")
            if not all(math.isfinite(v) for v in vals):
                raise SchemaError(f"row {lineno}: non-finite value")
            nodes = rows.setdefault(tid, [])
            if k != len(nodes):
                raise SchemaError(f"row {lineno}: traj {tid} node_idx {k}, expected {len(nodes)}")
            if meta.setdefault(tid, (name, eps)) != (name, eps):
                raise SchemaError(f"row {lineno}: traj {tid} changes split or epsilon")
            nodes.append(vals)

    ds = Dataset()
    for tid, nodes in rows.items():
        if len(nodes) < 2:
            raise SchemaError(f"traj {tid}: needs at least 2 nodes, has {len(nodes)}")
        a = np.array(nodes)
        name, eps = meta[tid]
        sol = ocp.OcpSolution(
            times=a[:, 0],
            states=a[:, 1:7],
            controls=a[:, 7:9],
            mid_controls=None,
            tf=float(a[-1, 0]),
            cost=float("nan"),
            converged=True,
            defect_norm=float("nan"),
            epsilon=eps,
        )
        ds.records.append(TrajectoryRecord(tid, eps, sol))
        if name != UNASSIGNED:
            ds.split_of[tid] = name
    return ds


def save_report(report: GenerationReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
