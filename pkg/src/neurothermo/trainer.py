"""Backpropagation and stochastic gradient descent on layered septuples."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import spectral
from .dataio import Dataset
from .loss import boundary_losses, minimize_bulk
from .septuple import NumericError, Septuple, assemble_state, forward_layers, save

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    loss_kind: str = "boundary"
    shuffle: bool = True
    checkpoint_every: int = 10
    bulk_mode: str = "forward"
    bulk_budget: int = 0
    theta: float = spectral.THETA
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.checkpoint_every < 1:
            raise ValueError("epochs must be >= 0 and checkpoint_every >= 1")
        if self.loss_kind not in ("boundary", "bulk"):
            raise ValueError(f"loss_kind must be 'boundary' or 'bulk', got {self.loss_kind!r}")


@dataclass
class GradientSet:
    d_weights: np.ndarray
    d_bias: np.ndarray


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Septuple):
        super().__init__(message)
        self.checkpoint = checkpoint


def _layer_grads(s: Septuple, inputs: np.ndarray, targets: np.ndarray, loss_kind: str):
    """Per-layer (dW, db) of the batch-summed loss."""
    acts, pre = forward_layers(s, inputs)
    n_layers = len(acts)
    fprime = s.fprime
    adj = [None] * n_layers
    adj[-1] = acts[-1] - targets
    if loss_kind == "bulk" and s.m != 0.0:
        for k in range(1, n_layers - 1):
            adj[k] = -s.m * acts[k]
    blocks = s.layer_blocks()
    grads = [None] * n_layers
    for k in range(n_layers - 1, 0, -1):
        if adj[k] is None:
            adj[k] = np.zeros_like(acts[k])
        delta = adj[k] * fprime(pre[k])
        if not np.all(np.isfinite(delta)):
            bad = np.argwhere(~np.isfinite(delta))[0][1] + s.topology.slices()[k].start
            raise NumericError(f"non-finite gradient at neuron {bad}")
        grads[k] = (delta.T @ acts[k - 1], delta.sum(axis=0))
        if k > 1:
            back = delta @ blocks[k - 1]
            adj[k - 1] = back if adj[k - 1] is None else adj[k - 1] + back
    return grads


def gradient(s: Septuple, inputs: np.ndarray, targets: np.ndarray, loss_kind: str | None = None,
             mean: bool = True) -> GradientSet:
    """Exact gradient of the boundary or bulk loss at the forward-mode state.

    Accepts a single record or a batch; batch gradients are averaged unless
    ``mean=False``.
    """
    loss_kind = loss_kind or s.loss_kind
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    grads = _layer_grads(s, inputs, targets, loss_kind)
    scale = 1.0 / len(inputs) if mean else 1.0
    dw = np.zeros_like(s.weights)
    db = np.zeros_like(s.bias)
    sl = s.topology.slices()
    for k in range(1, len(sl)):
        gw, gb = grads[k]
        dw[sl[k], sl[k - 1]] = gw * scale
        db[sl[k]] = gb * scale
    dw *= s.mask
    return GradientSet(dw, db)


def _sgd_step(s: Septuple, inputs, targets, loss_kind: str, lr: float) -> None:
    grads = _layer_grads(s, inputs, targets, loss_kind)
    sl = s.topology.slices()
    scale = lr / len(inputs)
    for k in range(1, len(sl)):
        gw, gb = grads[k]
        block_mask = s.mask[sl[k], sl[k - 1]]
        s.weights[sl[k], sl[k - 1]] -= scale * gw * block_mask
        s.bias[sl[k]] -= scale * gb


def dataset_losses(s: Septuple, data: Dataset, bulk_mode: str = "forward", bulk_budget: int = 0
                   ) -> tuple[float, float]:
    """Dataset-averaged (boundary, bulk) loss; reduction in record order."""
    acts, _ = forward_layers(s, data.inputs)
    x = assemble_state(s, acts)
    u_boundary = float(np.mean(boundary_losses(x, data.targets, s.topology)))
    bulk = minimize_bulk(data.inputs, data.targets, s, mode=bulk_mode, budget=bulk_budget)
    return u_boundary, float(np.mean(bulk.h))


@dataclass
class EpochRecord:
    epoch: int
    U_boundary: float
    U_bulk: float


@dataclass
class Checkpoint:
    epoch: int
    report: spectral.SpectralReport
    thermo: spectral.ThermoRecord
    beta_selfconsistent: float


@dataclass
class ThermoTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def append_epoch(self, rec: EpochRecord) -> None:
        self.epochs.append(rec)

    def append_checkpoint(self, ck: Checkpoint) -> None:
        self.checkpoints.append(ck)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.epochs], dtype=np.float64)


def analyse(s: Septuple, data: Dataset, epoch: int, u_boundary: float, u_bulk: float,
            theta: float = spectral.THETA, m: float | None = None) -> Checkpoint:
    n = s.n
    report = spectral.spectral_report(s, data.inputs, theta=theta, u_bulk=u_bulk,
                                      complexity_ns=(20, n - 20))
    beta = report.beta_gap if np.isfinite(report.beta_gap) else report.beta_selfconsistent
    rec = spectral.thermo_record(epoch, beta, report.lambdas, u_bulk, u_boundary,
                                 s.m if m is None else m, theta)
    return Checkpoint(epoch, report, rec, report.beta_selfconsistent)


def sgd_train(s: Septuple, data: Dataset, cfg: TrainConfig, sink: ThermoTrace | None = None,
              on_checkpoint: Callable[[Septuple, Checkpoint], None] | None = None) -> Septuple:
    """Train a copy of ``s`` by minibatch SGD and return it.

    Losses are logged every epoch (epoch 0 is the untrained net); the
    spectral analysis runs at epoch 0 and every ``checkpoint_every`` epochs.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    topo = s.topology
    if data.input_dim != topo.input_ids.size or data.output_dim != topo.output_ids.size:
        raise ValueError(f"dataset dims ({data.input_dim}, {data.output_dim}) do not match topology "
                         f"({topo.input_ids.size}, {topo.output_ids.size})")
    s = s.copy()
    sink = sink if sink is not None else ThermoTrace()
    rng = np.random.default_rng(cfg.seed)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_good = s.copy()

    def record(epoch: int) -> None:
        nonlocal last_good
        ub, uk = dataset_losses(s, data, cfg.bulk_mode, cfg.bulk_budget)
        sink.append_epoch(EpochRecord(epoch, ub, uk))
        if not (np.isfinite(ub) and ub <= DIVERGENCE_LIMIT):
            raise TrainingDiverged(f"boundary loss {ub:g} at epoch {epoch}", last_good)
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            s.epoch = epoch
            ck = analyse(s, data, epoch, ub, uk, cfg.theta)
            sink.append_checkpoint(ck)
            last_good = s.copy()
            if ckpt_dir is not None:
                save(s, ckpt_dir / f"ckpt_{epoch:06d}.json")
            if on_checkpoint is not None:
                on_checkpoint(s, ck)

    record(0)
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _sgd_step(s, data.inputs[idx], data.targets[idx], cfg.loss_kind, cfg.learning_rate)
        s.epoch = epoch
        record(epoch)
    return s
