"""Command-line entry point: ``quadgc <command> [<subcommand>] [options]``.

Every run writes its outputs and a ``manifest.json`` (resolved options, tool
version, plant parameters, output files) into ``--out``. Exit status is 0 on
success, 1 on usage errors and 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bench, closedloop, dataset, diffgc, network, ocp
from .dynamics import DEFAULT_PARAMS, QuadParams, load_params

log = logging.getLogger("quadgc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        # let "-5,-2.5,0,0,0,0" through as a value rather than a flag
        self._negative_number_matcher = re.compile(r"^-\.?\d[\d.,eE+-]*$")

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str, n: int | None = None, what: str = "value") -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers for {what}, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers for {what}, got {len(vals)}")
    return vals


def _state(text):
    return _floats(text, 6, "a state (x,z,vx,vz,theta,q)")


def _point(text):
    return _floats(text, 2, "a position (x,z)")


def _csv_floats(text):
    return _floats(text)


# -- shared plumbing -----------------------------------------------------------
class Run:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.params = load_params(args.params) if args.params else DEFAULT_PARAMS
        self.outputs: list[str] = []
        self.results: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")
        return p

    def manifest(self, argv) -> None:
        opts = {k: v for k, v in vars(self.args).items() if k != "func"}
        doc = {
            "tool": "quadgc",
            "version": __version__,
            "argv": list(argv),
            "options": opts,
            "params": self.params.to_dict(),
            "outputs": self.outputs,
            "results": self.results,
            "wall_time": time.perf_counter() - self.t0,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _workers(args) -> int:
    return args.workers or os.cpu_count() or 1


def _sim_cfg(args, **over) -> closedloop.SimConfig:
    base = dict(dt=args.dt, tau=getattr(args, "tau", 0.0), horizon=args.horizon)
    base.update(over)
    return closedloop.SimConfig(**base)


# -- commands ------------------------------------------------------------------
def cmd_ocp_solve(run: Run):
    a = run.args
    problem = ocp.transcribe(ocp.OcpConfig(x0=a.x0, epsilon=a.eps, num_nodes=a.nodes), run.params)
    try:
        sol = ocp.solve(problem)
    except ocp.OcpNotConverged as exc:
        ocp.save_solution(exc.solution, run.path("trajectory_failed.csv"))
        raise
    ocp.save_solution(sol, run.path("trajectory.csv"))
    run.outputs.append("trajectory.csv.json")
    rep = ocp.verify(sol, run.params)
    run.results = {
        "tf": sol.tf, "cost": sol.cost, "iterations": sol.iterations, "defect_norm": sol.defect_norm,
        "verify": {"terminal_pos_error": rep.terminal_pos_error, "terminal_vel_error": rep.terminal_vel_error,
                   "cost_rel_error": rep.cost_rel_error, "bound_violation": rep.bound_violation,
                   "interp_overshoot": rep.interp_overshoot},
    }
    print(f"tf = {sol.tf:.6f} s, J = {sol.cost:.6f}, {sol.iterations} iterations")


def _generate(run: Run, n, eps, seed, name="dataset.csv"):
    spec = dataset.SampleSpec(num_requested=n, seed=seed)
    ds, rep = dataset.generate(spec, eps, run.params, run.args.nodes, _workers(run.args))
    dataset.save(ds, run.path(name))
    dataset.save_report(rep, run.path(Path(name).stem + "_report.json"))
    return ds, rep


def cmd_dataset_gen(run: Run):
    a = run.args
    ds, rep = _generate(run, a.n, a.eps, a.seed)
    run.results = {"attempted": rep.attempted, "converged": rep.converged, "rate": rep.rate}
    print(f"{rep.converged}/{rep.attempted} converged ({rep.rate:.1%}) in {rep.wall_time:.1f} s")


def cmd_dataset_split(run: Run):
    a = run.args
    ds = dataset.split(dataset.load(a.data), a.fractions, a.seed)
    dataset.save(ds, run.path("dataset.csv"))
    run.results = {"pairs": ds.pair_counts(),
                   "trajectories": {s: len(ds.split_records(s)) for s in dataset.SPLITS}}
    print(json.dumps(run.results))


def _train_cfg(a) -> network.TrainConfig:
    return network.TrainConfig(batch_size=a.batch, lr0=a.lr, epochs=a.epochs, seed=a.seed)


def _train(run: Run, ds, name="net.json"):
    net, rep = network.train(network.init(run.args.seed), ds, _train_cfg(run.args))
    network.save_net(net, run.path(name))
    with run.path(Path(name).stem + "_curve.csv").open("w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for i, (tl, vl, lr) in enumerate(zip(rep.train_loss, rep.val_loss, rep.lr)):
            fh.write(f"{i},{tl!r},{vl!r},{lr!r}\n")
    run.write_json(Path(name).stem + "_report.json", rep.to_dict())
    return net, rep


def cmd_train(run: Run):
    ds = dataset.load(run.args.data)
    if not ds.split_of:
        raise ValueError("dataset has no split assignment; run `dataset split` first")
    net, rep = _train(run, ds)
    run.results = {"mae_train": rep.mae_train, "mae_test": rep.mae_test, "best_epoch": rep.best_epoch}
    print(f"test MAE u1={rep.mae_test[0]:.4f} u2={rep.mae_test[1]:.4f}")


def cmd_eval(run: Run):
    a = run.args
    net = network.load_net(a.net)
    S, U = dataset.load(a.data).pairs(None if a.split == "all" else a.split)
    mae = network.evaluate_mae(net, S, U)
    run.results = {"split": a.split, "pairs": len(S), "mae_u1": mae[0], "mae_u2": mae[1]}
    run.write_json("eval.json", run.results)
    print(f"MAE u1={mae[0]:.4f} u2={mae[1]:.4f} over {len(S)} pairs")


def cmd_sim_gcnet(run: Run):
    a = run.args
    net = network.load_net(a.net)
    res = closedloop.simulate_gcnet(net, a.x0, a.target, _sim_cfg(a, stop_on_arrival=a.stop_on_arrival),
                                    run.params)
    res.save_csv(run.path("sim.csv"))
    run.results = {"arrival_time": res.arrival_time, "diverged": res.diverged,
                   "final_position_error": res.final_position_error()}
    print(json.dumps(run.results))


def cmd_sim_diffgc(run: Run):
    a = run.args
    tf, traj = diffgc.min_time_search(a.start, a.goal, run.params, a.dt_step, a.tf_init)
    traj.save(run.path("trajectory.json"))
    gains = diffgc.TrackingGains(kp=a.kp, kd=a.kd)
    res = diffgc.simulate_diffgc(traj, run.params, gains, _sim_cfg(a, horizon=tf + a.horizon))
    res.save_csv(run.path("sim.csv"))
    run.results = {"tf_planned": tf, "arrival_time": res.arrival_time, "diverged": res.diverged}
    print(json.dumps(run.results))


def cmd_stability(run: Run):
    a = run.args
    net = network.load_net(a.net)
    rep = closedloop.stability_margin(net, run.params, (a.tau_min, a.tau_max), a.dt, a.duration,
                                      a.max_excursion)
    run.write_json("stability.json", rep.to_dict())
    run.results = {"tau_s": rep.tau_s, "postcondition_ok": rep.postcondition_ok}
    print(f"tau_s = {rep.tau_s * 1000:.0f} ms")


def _bench_spec(a) -> bench.BenchmarkSpec:
    return bench.BenchmarkSpec(start=a.start, x_range=(a.x_min, a.x_max), z_range=(a.z_min, a.z_max),
                               nx=a.nx, nz=a.nz, horizon=a.horizon)


def _grid(run: Run, net, name="grid.csv"):
    a = run.args
    cells = bench.sigma_grid(_bench_spec(a), net, run.params, closedloop.SimConfig(dt=a.dt),
                             dt_step=a.dt_step, workers=_workers(a))
    summary = bench.emit_report(cells, run.path(name))
    run.outputs.append(Path(name).with_suffix(".summary.json").name)
    return summary


def cmd_compare_grid(run: Run):
    summary = _grid(run, network.load_net(run.args.net))
    run.results = {k: summary[k] for k in ("sigma_min", "sigma_max", "fraction_positive", "available")}
    print(json.dumps(run.results))


def _net_or_train(run: Run, net_path, eps, tag):
    if net_path:
        return network.load_net(net_path)
    a = run.args
    log.info("no network given for eps=%g; generating %d trajectories and training", eps, a.n)
    ds, _ = _generate(run, a.n, eps, a.seed, f"dataset_{tag}.csv")
    ds = dataset.split(ds, seed=a.seed)
    dataset.save(ds, run.out / f"dataset_{tag}.csv")
    net, _ = _train(run, ds, f"net_{tag}.json")
    return net


def cmd_fig2(run: Run):
    a = run.args
    net = _net_or_train(run, a.net, 0.2, "eps0.2")
    taus = [0.0, 0.018, 0.036]
    res = closedloop.delay_sweep(net, a.x0, (0.0, 0.0), taus, _sim_cfg(a), run.params)
    idx = closedloop.save_sweep(res, run.out, "fig2")
    run.outputs += [idx.name] + [f"fig2_{int(round(t * 1000)):03d}ms.csv" for t in taus]
    try:
        sol = ocp.solve(ocp.transcribe(ocp.OcpConfig(x0=a.x0, epsilon=0.2), run.params))
        ocp.save_solution(sol, run.path("fig2_optimal.csv"))
        run.results["tf_optimal"] = sol.tf
    except ocp.OcpNotConverged:
        log.warning("reference optimal trajectory did not converge")
    run.results["terminal_pitch_dev"] = [closedloop.terminal_pitch_deviation(r) for r in res]
    print(json.dumps(run.results))


def cmd_fig5(run: Run):
    a = run.args
    for eps, path in ((0.2, a.net_02), (0.5, a.net_05)):
        tag = f"eps{eps}"
        net = _net_or_train(run, path, eps, tag)
        summary = _grid(run, net, f"fig5_{tag}.csv")
        run.results[tag] = {k: summary[k] for k in ("sigma_min", "sigma_max", "fraction_positive")}
    print(json.dumps(run.results))


def cmd_fig6(run: Run):
    a = run.args
    x0 = (a.start[0], a.start[1], 0.0, 0.0, 0.0, 0.0)
    cfg = _sim_cfg(a, stop_on_arrival=False)
    tf, traj = diffgc.min_time_search(a.start, a.goal, run.params, a.dt_step)
    traj.save(run.path("fig6_diffgc_trajectory.json"))
    rd = diffgc.simulate_diffgc(traj, run.params, cfg=cfg, x0=x0)
    rd.save_csv(run.path("fig6_diffgc.csv"))
    run.results["diffgc"] = {"tf_planned": tf, "arrival_time": rd.arrival_time}
    for eps, path in ((0.2, a.net_02), (0.5, a.net_05)):
        tag = f"eps{eps}"
        net = _net_or_train(run, path, eps, tag)
        rg = closedloop.simulate_gcnet(net, x0, a.goal, cfg, run.params)
        rg.save_csv(run.path(f"fig6_gcnet_{tag}.csv"))
        run.results[f"gcnet_{tag}"] = {"arrival_time": rg.arrival_time}
    print(json.dumps(run.results))


# -- parser ----------------------------------------------------------------------
def _common(p):
    p.add_argument("--out", default="run", help="output directory (created if missing)")
    p.add_argument("--params", default=None, help="plant parameter JSON (default: built-in values)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("--log-level", default="WARNING")


def _sim_opts(p, horizon=20.0):
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--horizon", type=float, default=horizon)


def _train_opts(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)


def _chain_opts(p):
    p.add_argument("--n", type=int, default=300, help="trajectories to generate when no net is given")
    p.add_argument("--nodes", type=int, default=81)
    _train_opts(p)


def _grid_opts(p):
    p.add_argument("--start", type=_point, default=(0.0, 2.5))
    p.add_argument("--x-min", type=float, default=1.0)
    p.add_argument("--x-max", type=float, default=10.0)
    p.add_argument("--z-min", type=float, default=0.0)
    p.add_argument("--z-max", type=float, default=5.0)
    p.add_argument("--nx", type=int, default=10)
    p.add_argument("--nz", type=int, default=6)
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--dt-step", type=float, default=0.05)
    p.add_argument("--horizon", type=float, default=25.0,
                   help="flight time allowed per controller (added to the planned time for the baseline)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="quadgc", description="Optimal-control dataset, policy network and benchmark tools.")
    ap.add_argument("--version", action="version", version=f"quadgc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ocp = sub.add_parser("ocp").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = p_ocp.add_parser("solve", help="solve one optimal control problem")
    p.add_argument("--x0", type=_state, required=True)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--nodes", type=int, default=81)
    _common(p)
    p.set_defaults(func=cmd_ocp_solve)

    p_ds = sub.add_parser("dataset").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = p_ds.add_parser("gen", help="sample initial states and solve one OCP each")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--nodes", type=int, default=81)
    _common(p)
    p.set_defaults(func=cmd_dataset_gen)
    p = p_ds.add_parser("split", help="assign trajectories to train/val/test")
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", type=lambda s: _floats(s, 3, "fractions"), default=(0.8, 0.1, 0.1))
    _common(p)
    p.set_defaults(func=cmd_dataset_split)

    p = sub.add_parser("train", help="fit the policy network on a split dataset")
    p.add_argument("--data", required=True)
    _train_opts(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-output MAE of a network on a dataset split")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p_sim = sub.add_parser("sim").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = p_sim.add_parser("gcnet", help="closed-loop flight of the network")
    p.add_argument("--net", required=True)
    p.add_argument("--x0", type=_state, required=True)
    p.add_argument("--target", type=_point, default=(0.0, 0.0))
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--stop-on-arrival", action="store_true")
    _sim_opts(p)
    _common(p)
    p.set_defaults(func=cmd_sim_gcnet)
    p = p_sim.add_parser("diffgc", help="min-time min-snap plan and tracking flight")
    p.add_argument("--start", type=_point, default=(0.0, 2.5))
    p.add_argument("--goal", type=_point, required=True)
    p.add_argument("--dt-step", type=float, default=0.05)
    p.add_argument("--tf-init", type=float, default=None)
    p.add_argument("--kp", type=float, default=6.0)
    p.add_argument("--kd", type=float, default=4.0)
    _sim_opts(p, horizon=5.0)
    _common(p)
    p.set_defaults(func=cmd_sim_diffgc)

    p = sub.add_parser("stability", help="hover stability margin under delay")
    p.add_argument("--net", required=True)
    p.add_argument("--tau-min", type=float, default=0.0)
    p.add_argument("--tau-max", type=float, default=0.2)
    p.add_argument("--dt", type=float, default=0.001)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--max-excursion", type=float, default=0.5)
    _common(p)
    p.set_defaults(func=cmd_stability)

    p_cmp = sub.add_parser("compare").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = p_cmp.add_parser("grid", help="arrival-time comparison over a target grid")
    p.add_argument("--net", required=True)
    _grid_opts(p)
    _common(p)
    p.set_defaults(func=cmd_compare_grid)

    p_fig = sub.add_parser("figures").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    p = p_fig.add_parser("fig2", help="delay sweep at 0, 18 and 36 ms")
    p.add_argument("--net", default=None)
    p.add_argument("--x0", type=_state, default=(-5.0, -2.5, 0.0, 0.0, 0.0, 0.0))
    _sim_opts(p, horizon=8.0)
    _chain_opts(p)
    _common(p)
    p.set_defaults(func=cmd_fig2)
    p = p_fig.add_parser("fig5", help="arrival-time grids for eps = 0.2 and 0.5")
    p.add_argument("--net-02", default=None)
    p.add_argument("--net-05", default=None)
    _grid_opts(p)
    _chain_opts(p)
    _common(p)
    p.set_defaults(func=cmd_fig5)
    p = p_fig.add_parser("fig6", help="one start/target pair flown by all controllers")
    p.add_argument("--net-02", default=None)
    p.add_argument("--net-05", default=None)
    p.add_argument("--start", type=_point, default=(0.0, 2.5))
    p.add_argument("--goal", type=_point, default=(5.0, 2.5))
    p.add_argument("--dt-step", type=float, default=0.05)
    _sim_opts(p, horizon=8.0)
    _chain_opts(p)
    _common(p)
    p.set_defaults(func=cmd_fig6)
    return ap


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        r = Run(args)
        args.func(r)
        r.manifest(argv)
    except Exception as exc:  # runtime failure: report, do not crash with a traceback
        log.debug("failure", exc_info=True)
        print(f"quadgc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
