"""Deterministic training of the classifiers: truncated-normal init, stable
sigmoid cross-entropy, exact backprop, and full-batch Adam.

No regularizers of any kind (no weight decay, dropout, batch norm or early
stopping); the only knobs are the ones in :class:`TrainConfig`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .mlp import ArchSpec, InputError, MlpParams, forward_batch, params_to_dict, save_params

__all__ = [
    "TrainConfig",
    "Snapshot",
    "TrainRun",
    "TrainingDiverged",
    "init_params",
    "loss_and_grads",
    "loss_value",
    "train",
    "adam_minimize",
    "save_run",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    steps: int = 20000
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    init_std: float = 0.05
    snapshot_every: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InputError("betas must lie in (0, 1)")
        if self.steps < 1:
            raise InputError("steps must be >= 1")


@dataclass
class Snapshot:
    step: int
    params: MlpParams
    train_accuracy: float
    loss: float


@dataclass
class TrainRun:
    config: TrainConfig
    snapshots: list[Snapshot]
    losses: np.ndarray  # loss before each step, length steps+1 (last = final loss)

    @property
    def final(self) -> MlpParams:
        return self.snapshots[-1].params


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) samples, resampled while beyond two standard deviations."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(arch: ArchSpec, seed: int = 0, init_std: float = 0.05) -> MlpParams:
    """Truncated-normal weights (resample beyond +-2*init_std), zero biases."""
    rng = np.random.default_rng(seed)
    ws = arch.widths
    weights = [truncated_normal(rng, (ws[l + 1], ws[l]), init_std) for l in range(len(ws) - 1)]
    biases = [np.zeros(ws[l + 1]) for l in range(len(ws) - 1)]
    return MlpParams(arch, weights, biases)


def _stable_bce(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # log(1 + e^z) - z*y, written without overflow at large |z|
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def loss_value(params: MlpParams, X: np.ndarray, y: np.ndarray) -> float:
    out, _ = forward_batch(params, X)
    return float(np.mean(_stable_bce(out, y)))


def loss_and_grads(params: MlpParams, X: np.ndarray, y: np.ndarray):
    """Mean sigmoid cross-entropy of N(x) against labels in {0,1}, with exact
    backprop gradients for every weight and bias.

    The ReLU subgradient at exactly zero is taken as 1, consistent with the
    zero-counts-as-on state convention.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = X.shape[0]
    acts = [X]
    pre = []
    a = X
    for W, b in zip(params.weights, params.biases):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    z_out = pre[-1][:, 0]
    loss = float(np.mean(_stable_bce(z_out, y)))

    sig = np.empty_like(z_out)
    pos = z_out >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z_out[pos]))
    ez = np.exp(z_out[~pos])
    sig[~pos] = ez / (1.0 + ez)

    dZ = ((sig - y) / m)[:, None]
    gW = [None] * len(params.weights)
    gB = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        gW[l] = dZ.T @ acts[l]
        gB[l] = dZ.sum(axis=0)
        if l > 0:
            dA = dZ @ params.weights[l]
            dZ = dA * (pre[l - 1] >= 0)
    return loss, gW, gB


def adam_minimize(arrays: list[np.ndarray], grad_fn, cfg: TrainConfig, callback=None,
                  frozen: list[bool] | None = None) -> None:
    """In-place Adam on a flat list of parameter arrays.

    ``grad_fn(step) -> (loss, grads)`` where grads aligns with ``arrays``;
    entries whose ``frozen`` flag is set are left untouched. ``callback`` is
    invoked as ``callback(step, loss)`` before each update (step starts at 0).
    """
    if frozen is None:
        frozen = [False] * len(arrays)
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    b1, b2, eps, lr = cfg.beta1, cfg.beta2, cfg.epsilon, cfg.learning_rate
    for step in range(cfg.steps):
        loss, grads = grad_fn(step)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
        if callback is not None:
            callback(step, loss)
        t = step + 1
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for i, a in enumerate(arrays):
            if frozen[i]:
                continue
            g = grads[i]
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * (g * g)
            a -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def train(data, arch: ArchSpec, cfg: TrainConfig) -> TrainRun:
    """Train a fresh net on ``data`` (labels in {0,1}); deterministic per config."""
    labels = np.asarray(data.labels)
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be binary 0/1")
    X = np.asarray(data.points, dtype=np.float64)
    if X.shape[1] != arch.input_dim:
        raise InputError(f"data dim {X.shape[1]} != input_dim {arch.input_dim}")
    y = labels.astype(np.float64)

    params = init_params(arch, cfg.seed, cfg.init_std)
    arrays = params.weights + params.biases
    nw = len(params.weights)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB41C]))

    def batch_for(step):
        if cfg.batch_size is None or cfg.batch_size >= X.shape[0]:
            return X, y
        idx = rng.choice(X.shape[0], size=cfg.batch_size, replace=False)
        return X[idx], y[idx]

    snapshots: list[Snapshot] = []
    losses = np.empty(cfg.steps + 1)

    def accuracy() -> float:
        out, _ = forward_batch(params, X)
        return float(np.mean((out >= 0) == (y == 1.0)))

    def grad_fn(step):
        bx, by = batch_for(step)
        loss, gW, gB = loss_and_grads(params, bx, by)
        return loss, gW + gB

    def callback(step, loss):
        losses[step] = loss
        if step % cfg.snapshot_every == 0:
            snapshots.append(Snapshot(step, params.copy(), accuracy(), loss))

    adam_minimize(arrays, grad_fn, cfg, callback=callback)
    final_loss = loss_value(params, X, y)
    losses[cfg.steps] = final_loss
    snapshots.append(Snapshot(cfg.steps, params.copy(), accuracy(), final_loss))
    return TrainRun(cfg, snapshots, losses)


def save_run(run: TrainRun, out_dir, dataset_name: str = "") -> dict:
    """Write per-snapshot model files plus a run manifest; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for snap in run.snapshots:
        fname = f"model_step{snap.step:07d}.json"
        save_params(snap.params, os.path.join(out_dir, fname),
                    metadata={"step": snap.step, "seed": run.config.seed, "dataset": dataset_name})
        entries.append({
            "step": snap.step,
            "file": fname,
            "train_accuracy": snap.train_accuracy,
            "loss": snap.loss,
        })
    manifest = {
        "format": "relucirc-run-v1",
        "dataset": dataset_name,
        "config": {
            "learning_rate": run.config.learning_rate,
            "beta1": run.config.beta1,
            "beta2": run.config.beta2,
            "epsilon": run.config.epsilon,
            "steps": run.config.steps,
            "batch_size": run.config.batch_size,
            "seed": run.config.seed,
            "init_std": run.config.init_std,
            "snapshot_every": run.config.snapshot_every,
        },
        "snapshots": entries,
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest
