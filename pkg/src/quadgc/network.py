"""State-to-throttle policy network in plain numpy.

Fully connected, softplus hidden layers and a sigmoid output pair. Weights are
stored as ``(fan_out, fan_in)`` matrices so a layer computes ``W @ x + b``.
Batches are row-major: states ``(n, 6)`` map to throttles ``(n, 2)``.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

ARCH = (6, 100, 100, 100, 2)
# state scaling: sampling half-ranges, and 1 rad/s for the pitch rate
NORMALIZATION = (10.0, 10.0, 5.0, 5.0, math.pi / 3, 1.0)
HIDDEN_ACT = "softplus"
OUTPUT_ACT = "sigmoid"


class TrainingDiverged(RuntimeError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class Layer:
    w: np.ndarray
    b: np.ndarray
    act: str


@dataclass
class MlpParams:
    layers: list
    normalization: np.ndarray = field(default_factory=lambda: np.array(NORMALIZATION))

    @property
    def arch(self) -> list[int]:
        return [self.layers[0].w.shape[1]] + [ly.w.shape[0] for ly in self.layers]

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for ly in self.layers:
            out += [ly.w, ly.b]
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "normalization": [float(v) for v in self.normalization],
            "layers": [
                {"w": ly.w.tolist(), "b": ly.b.tolist(), "act": ly.act} for ly in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        layers = []
        for i, ly in enumerate(d["layers"]):
            w = np.array(ly["w"], dtype=float)
            b = np.array(ly["b"], dtype=float)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if ly["act"] not in (HIDDEN_ACT, OUTPUT_ACT):
                raise ValueError(f"layer {i}: unknown activation {ly['act']!r}")
            layers.append(Layer(w, b, ly["act"]))
        net = cls(layers, np.array(d["normalization"], dtype=float))
        if list(d.get("arch", net.arch)) != net.arch:
            raise ValueError(f"arch {d['arch']} does not match layer shapes {net.arch}")
        if net.normalization.shape != (net.arch[0],) or np.any(net.normalization <= 0):
            raise ValueError("normalization needs one positive scale per input")
        if not all(np.all(np.isfinite(a)) for a in net.arrays()):
            raise ValueError("non-finite network parameter")
        return net


def save_net(net: MlpParams, path) -> None:
    # repr-exact floats: json writes the shortest round-tripping form
    Path(path).write_text(json.dumps(net.to_dict()) + "\n")


def load_net(path) -> MlpParams:
    return MlpParams.from_dict(json.loads(Path(path).read_text()))


def init(seed: int = 0, arch=ARCH) -> MlpParams:
    """He-scaled normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        act = OUTPUT_ACT if i == len(arch) - 2 else HIDDEN_ACT
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def _forward_cache(net: MlpParams, S):
    a = np.asarray(S, dtype=float) / net.normalization
    acts, pre = [a], []
    for ly in net.layers:
        z = a @ ly.w.T + ly.b
        a = softplus(z) if ly.act == HIDDEN_ACT else expit(z)
        pre.append(z)
        acts.append(a)
    return acts, pre


def forward(net: MlpParams, s) -> np.ndarray:
    """Throttles for one state ``(6,)`` or a batch ``(n, 6)``."""
    s = np.asarray(s, dtype=float)
    acts, _ = _forward_cache(net, np.atleast_2d(s))
    out = acts[-1]
    return out[0] if s.ndim == 1 else out


def loss_and_grad(net: MlpParams, S, U) -> tuple[float, list[np.ndarray]]:
    """Mean over the batch of the squared error summed over both outputs,
    and its gradient in the order of :meth:`MlpParams.arrays`."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if S.shape[0] == 0:
        raise ValueError("empty batch")
    acts, pre = _forward_cache(net, S)
    n = S.shape[0]
    err = acts[-1] - U
    loss = float(np.sum(err**2) / n)

    grads: list[np.ndarray] = []
    delta = (2.0 / n) * err
    for i in range(len(net.layers) - 1, -1, -1):
        ly = net.layers[i]
        z = pre[i]
        if ly.act == OUTPUT_ACT:
            sg = acts[i + 1]
            delta = delta * sg * (1.0 - sg)
        else:
            delta = delta * expit(z)  # softplus' = sigmoid
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i])
        if i:
            delta = delta @ ly.w
    return loss, grads[::-1]


def evaluate_mae(net: MlpParams, S, U) -> tuple[float, float]:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty split")
    err = np.abs(forward(net, S) - np.asarray(U, dtype=float))
    return float(err[:, 0].mean()), float(err[:, 1].mean())


def mse(net: MlpParams, S, U, chunk: int = 8192) -> float:
    total = 0.0
    for i in range(0, len(S), chunk):
        total += float(np.sum((forward(net, S[i:i + chunk]) - U[i:i + chunk]) ** 2))
    return total / max(len(S), 1)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    patience: int = 5  # epochs without validation improvement before decay
    decay: float = 0.5
    lr_floor: float = 1e-5
    seed: int = 0


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    steps: int = 0
    mae_train: tuple = (float("nan"), float("nan"))
    mae_test: tuple = (float("nan"), float("nan"))

    def best_curve(self) -> list[float]:
        """Running minimum of the validation loss (the checkpoint sequence)."""
        return list(np.minimum.accumulate(self.val_loss)) if self.val_loss else []

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "steps": self.steps,
            "mae_train": list(self.mae_train),
            "mae_test": list(self.mae_test),
        }


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def fit(net: MlpParams, S_tr, U_tr, S_va, U_va, cfg: TrainConfig = TrainConfig(),
        max_steps: int | None = None) -> tuple[MlpParams, TrainReport]:
    """Minibatch Adam on arrays; returns the best-validation checkpoint."""
    S_tr, U_tr = np.asarray(S_tr, float), np.asarray(U_tr, float)
    S_va, U_va = np.asarray(S_va, float), np.asarray(U_va, float)
    if len(S_tr) == 0 or len(S_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    net = net.copy()
    params = net.arrays()
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    rep = TrainReport()
    best = net.copy()
    lr, since_best = cfg.lr0, 0
    n = len(S_tr)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            loss, grads = loss_and_grad(net, S_tr[idx], U_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {rep.steps}, lr {lr:g}; "
                    f"last finite val loss {rep.val_loss[-1] if rep.val_loss else 'n/a'}"
                )
            opt.step(params, grads, lr)
            total += loss * len(idx)
            seen += len(idx)
            rep.steps += 1
            if max_steps is not None and rep.steps >= max_steps:
                break
        rep.train_loss.append(total / seen)
        val = mse(net, S_va, U_va)
        rep.val_loss.append(val)
        rep.lr.append(lr)
        if val < rep.best_val_loss:
            rep.best_val_loss, rep.best_epoch = val, epoch
            best = net.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                lr = max(cfg.lr_floor, lr * cfg.decay)
                since_best = 0
        log.info("epoch %d train %.3e val %.3e lr %.1e", epoch, rep.train_loss[-1], val, lr)
        if max_steps is not None and rep.steps >= max_steps:
            break
    rep.mae_train = evaluate_mae(best, S_tr, U_tr)
    return best, rep


def train(net: MlpParams, ds, cfg: TrainConfig = TrainConfig()) -> tuple[MlpParams, TrainReport]:
    """Train on the ``train`` split of a :class:`quadgc.dataset.Dataset`,
    select on ``val`` and report MAE on ``test`` when present."""
    S_tr, U_tr = ds.pairs("train")
    S_va, U_va = ds.pairs("val")
    best, rep = fit(net, S_tr, U_tr, S_va, U_va, cfg)
    S_te, U_te = ds.pairs("test")
    if len(S_te):
        rep.mae_test = evaluate_mae(best, S_te, U_te)
    return best, rep
