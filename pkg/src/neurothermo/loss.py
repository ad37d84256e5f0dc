"""Boundary and bulk loss functions and the hidden-state minimiser.

The bulk residual runs over non-input neurons: inputs are clamped to the
data, which is the same as assuming the input-bias condition holds, so
their fixed-point residual vanishes and their potential is a constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .septuple import Septuple, Topology, propagate

DESCENT_STEP = 0.01
DIVERGENCE_PATIENCE = 10
_EDGE = 1e-12


@dataclass
class LossValue:
    total: float
    per_neuron: np.ndarray
    kind: str


def boundary_loss(x: np.ndarray, inputs: np.ndarray, targets: np.ndarray, topo: Topology) -> LossValue:
    """``1/2 |x - x_boundary|^2`` over input and output neurons."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (topo.n_total,):
        raise ValueError(f"state has shape {x.shape}, expected ({topo.n_total},)")
    per = np.zeros(topo.n_total)
    inp, out = topo.input_ids, topo.output_ids
    per[inp] = 0.5 * (x[inp] - np.asarray(inputs, dtype=np.float64)) ** 2
    if out.size:
        per[out] = 0.5 * (x[out] - np.asarray(targets, dtype=np.float64)) ** 2
    return LossValue(float(per.sum()), per, "boundary")


def boundary_losses(x: np.ndarray, targets: np.ndarray, topo: Topology) -> np.ndarray:
    """Per-record boundary loss for a batch of clamped states ``(B, N)``."""
    out = topo.output_ids
    if out.size == 0:
        return np.zeros(x.shape[0])
    diff = x[:, out] - targets
    return 0.5 * np.sum(diff * diff, axis=1)


def _non_input(s: Septuple):
    """Index for the non-input neurons: a slice when inputs form the leading block."""
    n_in = s.topology.input_ids.size
    if s.topology.layers[0] == tuple(range(n_in)):
        return slice(n_in, None)
    return s.topology.non_input_ids


def _bulk_terms(x: np.ndarray, s: Septuple, free_inputs: bool):
    z = s.preactivation(x)
    if free_inputs:
        r = x - s.f(z)
        return z, r, -0.5 * s.m * x * x
    non = _non_input(s)
    r = np.zeros_like(x)
    r[..., non] = x[..., non] - s.f(z[..., non])
    pot = np.zeros_like(x)
    pot[..., non] = -0.5 * s.m * x[..., non] ** 2
    return z, r, pot


def bulk_loss(x: np.ndarray, s: Septuple, free_inputs: bool = False) -> LossValue:
    """``1/2 sum_i [(x_i - f(w x + b)_i)^2 - m x_i^2]``.

    With ``free_inputs=True`` every neuron contributes (the form whose
    quadratic part is governed by the full G operator); otherwise input
    neurons are treated as clamped and skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (s.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({s.n},)")
    _, r, pot = _bulk_terms(x, s, free_inputs)
    per = 0.5 * r * r + pot
    return LossValue(float(per.sum()), per, "bulk")


def bulk_losses(x: np.ndarray, s: Septuple, free_inputs: bool = False) -> np.ndarray:
    _, r, pot = _bulk_terms(np.asarray(x, dtype=np.float64), s, free_inputs)
    return np.sum(0.5 * r * r + pot, axis=-1)


def bulk_state_gradient(x: np.ndarray, s: Septuple, free_inputs: bool = False) -> np.ndarray:
    """dH/dx for a batch of states."""
    z, r, _ = _bulk_terms(x, s, free_inputs)
    g = r - s.m * x
    if free_inputs:
        g -= s.transpose_apply(r * s.fprime(z))
        return g
    non = _non_input(s)
    back = np.zeros_like(x)
    back[..., non] = r[..., non] * s.fprime(z[..., non])
    g -= s.transpose_apply(back)
    g[..., s.topology.input_ids] = 0.0
    return g


@dataclass
class BulkMinimum:
    x: np.ndarray
    h: np.ndarray  # per-record bulk loss
    aborted: np.ndarray  # per-record flag
    iterations: int

    @property
    def total(self) -> float:
        return float(np.sum(self.h))


def clamped_forward_state(inputs: np.ndarray, targets: np.ndarray, s: Septuple) -> np.ndarray:
    x = propagate(inputs, s).x
    out = s.topology.output_ids
    if out.size:
        x[..., out] = targets
    return x


def minimize_bulk(inputs: np.ndarray, targets: np.ndarray, s: Septuple, mode: str = "forward",
                  budget: int = 0, step: float = DESCENT_STEP) -> BulkMinimum:
    """Bulk loss minimised over hidden states with the boundary held fixed.

    ``forward`` fills hidden neurons by forward propagation. ``descent``
    starts there and runs ``budget`` gradient steps on the hidden
    components; a step that would raise a record's loss is rejected and that
    record's step is halved. A record with ``DIVERGENCE_PATIENCE`` rejections
    in a row stops refining and is flagged.
    Accepts single records or batches (leading axis).
    """
    if mode not in ("forward", "descent"):
        raise ValueError(f"mode must be 'forward' or 'descent', got {mode!r}")
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    inputs = np.atleast_2d(inputs)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64)).reshape(inputs.shape[0], -1)
    x = clamped_forward_state(inputs, targets, s)
    h = bulk_losses(x, s)
    aborted = np.zeros(len(x), dtype=bool)
    it = 0
    hid = s.topology.hidden_ids
    if mode == "descent" and budget > 0 and hid.size:
        steps = np.full(len(x), float(step))
        rejects = np.zeros(len(x), dtype=int)
        bounded = s.activation == "tanh"
        for it in range(1, budget + 1):
            active = ~aborted
            if not np.any(active):
                break
            g = bulk_state_gradient(x, s)
            trial = x.copy()
            trial[:, hid] -= steps[:, None] * g[:, hid]
            if bounded:
                trial[:, hid] = np.clip(trial[:, hid], -1.0 + _EDGE, 1.0 - _EDGE)
            h_trial = bulk_losses(trial, s)
            accept = active & (h_trial <= h)
            x[accept] = trial[accept]
            h[accept] = h_trial[accept]
            rejects[accept] = 0
            reject = active & ~accept
            steps[reject] *= 0.5
            rejects[reject] += 1
            aborted |= rejects >= DIVERGENCE_PATIENCE
    if single:
        return BulkMinimum(x[0], h[:1], aborted[:1], it)
    return BulkMinimum(x, h, aborted, it)
