"""Shared fixtures: trained artifacts for the end-to-end checks and the
one-line-per-criterion acceptance summary.

The datasets and networks are built once per session. Setting
``QUADGC_ARTIFACTS=<dir>`` keeps them across sessions; files there are keyed
by a hash of the package sources and the build settings, so any code change
rebuilds them.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import pytest

from quadgc import dataset, network

SRC = Path(__file__).resolve().parents[1] / "src" / "quadgc"

# build settings for the end-to-end artifacts. "n" draws form the batch whose
# report the convergence check reads; "n_total" extends it with further draws
# of the same sampler for training.
BUILD = {
    "eps0.2": {"eps": 0.2, "n": 1000, "n_total": 2000, "seed": 1, "split_seed": 0, "net_seed": 0,
               "epochs": 300},
    "eps0.5": {"eps": 0.5, "n": 1000, "n_total": 1000, "seed": 2, "split_seed": 0, "net_seed": 0,
               "epochs": 300},
}

_verdicts: dict[str, tuple[bool, str]] = {}


def source_hash() -> str:
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


@dataclass
class Artifact:
    dataset: dataset.Dataset
    report: dict
    net: network.MlpParams
    train_report: dict
    settings: dict


def _build(root: Path, tag: str) -> Artifact:
    cfg = BUILD[tag]
    key = hashlib.sha256((source_hash() + json.dumps(cfg, sort_keys=True)).encode()).hexdigest()[:12]
    ds_path = root / f"{tag}_{key}_dataset.csv"
    rep_path = root / f"{tag}_{key}_report.json"
    net_path = root / f"{tag}_{key}_net.json"
    tr_path = root / f"{tag}_{key}_train.json"
    if not (ds_path.exists() and rep_path.exists()):
        spec = dataset.SampleSpec(num_requested=cfg["n"], seed=cfg["seed"])
        ds, rep = dataset.generate(spec, cfg["eps"], workers=os.cpu_count())
        if cfg["n_total"] > cfg["n"]:
            more = dataset.SampleSpec(num_requested=cfg["n_total"], seed=cfg["seed"])
            ext, _ = dataset.generate(more, cfg["eps"], workers=os.cpu_count(), start=cfg["n"])
            ds = dataset.Dataset(ds.records + ext.records)
        ds = dataset.split(ds, seed=cfg["split_seed"])
        dataset.save(ds, ds_path)
        dataset.save_report(rep, rep_path)
    ds = dataset.load(ds_path)
    if not (net_path.exists() and tr_path.exists()):
        tcfg = network.TrainConfig(epochs=cfg["epochs"], seed=cfg["net_seed"])
        net, rep = network.train(network.init(cfg["net_seed"]), ds, tcfg)
        network.save_net(net, net_path)
        tr_path.write_text(json.dumps(rep.to_dict(), indent=2))
    return Artifact(ds, json.loads(rep_path.read_text()), network.load_net(net_path),
                    json.loads(tr_path.read_text()), cfg)


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory) -> Path:
    env = os.environ.get("QUADGC_ARTIFACTS")
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return tmp_path_factory.mktemp("artifacts")


@pytest.fixture(scope="session")
def eps02(artifact_dir) -> Artifact:
    return _build(artifact_dir, "eps0.2")


@pytest.fixture(scope="session")
def eps05(artifact_dir) -> Artifact:
    return _build(artifact_dir, "eps0.5")


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records criterion ``n`` for the summary."""

    def record(n: int, ok: bool, detail: str) -> None:
        _verdicts[f"{n:02d}"] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_verdicts):
        ok, detail = _verdicts[k]
        terminalreporter.write_line(f"criterion {int(k):2d}: {'PASS' if ok else 'FAIL'}  {detail}")
