"""Metropolis sampling of the canonical ensemble ``p(x) ~ exp(-beta H(x))``.

Used on small septuples to check the Gaussian partition-function formulas
against ground truth. ``window_mode="hard"`` restricts states to the
activation box ``(-1, 1)^N``; ``"gaussian"`` replaces the box by the factor
``exp(-x.x / 2)`` on all of R^N.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .loss import bulk_losses
from .septuple import Septuple

MAX_NEURONS = 12
N_BATCHES = 50
TARGET_ACCEPTANCE = 0.4
ACCEPTANCE_BAND = (0.1, 0.7)


@dataclass
class EnsembleEstimate:
    beta: float
    window_mode: str
    n_samples: int
    mean_H: float
    stderr_H: float
    acceptance_rate: float
    mean_x: np.ndarray
    stderr_x: np.ndarray
    log_z_analytic_full: float
    log_z_analytic_truncated: float
    U_gaussian_exact: float
    proposal_scale: float
    flagged: bool


def batch_means_stderr(samples: np.ndarray, n_batches: int = N_BATCHES) -> np.ndarray:
    """Standard error of the mean from non-overlapping batch means along axis 0."""
    samples = np.asarray(samples, dtype=np.float64)
    size = len(samples) // n_batches
    if size < 1:
        raise ValueError(f"need at least {n_batches} samples, got {len(samples)}")
    trimmed = samples[: size * n_batches]
    means = trimmed.reshape((n_batches, size) + samples.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def gaussian_log_z(beta: float, lambdas: np.ndarray, m: float = 0.0, coeffs: np.ndarray | None = None,
                   N: int | None = None) -> tuple[float, float]:
    """(full, truncated) Gaussian-window log Z; the full form keeps the mean-state term."""
    lam = np.asarray(lambdas, dtype=np.float64)
    N = lam.size if N is None else N
    truncated = spectral.log_z(beta, lam, m, N)
    if coeffs is None:
        return truncated, truncated
    a2 = np.asarray(coeffs, dtype=np.float64) ** 2
    args = 1.0 - beta * m + beta * lam
    full = truncated - 0.5 * float(np.sum((1.0 - beta * m) * beta * lam * a2 / args))
    return full, truncated


def _energy(x: np.ndarray, s: Septuple, clamped: bool) -> np.ndarray:
    return bulk_losses(x, s, free_inputs=not clamped)


def metropolis_sample(s: Septuple, beta: float, window_mode: str = "gaussian", n_samples: int = 100_000,
                      burn_in: int = 10_000, seed: int = 0, n_chains: int = 16,
                      clamp: tuple[np.ndarray, np.ndarray] | None = None) -> EnsembleEstimate:
    """Sample the canonical ensemble of a small septuple.

    Without ``clamp`` every neuron is free and ``H`` is the full bulk loss.
    With ``clamp=(inputs, targets)`` the boundary neurons are fixed at the
    record and only hidden neurons move. ``n_samples`` counts post-burn-in
    draws summed over ``n_chains`` lockstep chains. The proposal scale is
    tuned during burn-in toward 40% acceptance.
    """
    if s.n > MAX_NEURONS:
        raise ValueError(f"exact sampling limited to N <= {MAX_NEURONS}, got N={s.n}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if window_mode not in ("hard", "gaussian"):
        raise ValueError(f"window_mode must be 'hard' or 'gaussian', got {window_mode!r}")
    rng = np.random.default_rng(seed)
    topo = s.topology
    x = np.zeros((n_chains, s.n))
    if clamp is None:
        free = np.arange(s.n)
    else:
        inputs, targets = (np.asarray(v, dtype=np.float64) for v in clamp)
        x[:, topo.input_ids] = inputs
        x[:, topo.output_ids] = targets
        free = topo.hidden_ids
    clamped = clamp is not None
    if window_mode == "hard":
        x[:, free] = rng.uniform(-0.5, 0.5, size=(n_chains, free.size))
    else:
        x[:, free] = rng.normal(0.0, 0.5, size=(n_chains, free.size))

    def log_p(state):
        lp = -beta * _energy(state, s, clamped)
        if window_mode == "gaussian":
            lp -= 0.5 * np.sum(state[:, free] ** 2, axis=1)
        else:
            outside = np.any(np.abs(state[:, free]) >= 1.0, axis=1)
            lp = np.where(outside, -np.inf, lp)
        return lp

    scale = 1.0 / np.sqrt(1.0 + beta) / np.sqrt(max(free.size, 1))
    current = log_p(x)
    steps_per_chain = -(-n_samples // n_chains)
    h_trace = np.empty((steps_per_chain, n_chains))
    x_trace = np.empty((steps_per_chain, n_chains, free.size))
    accepted = 0
    window_acc, window_n = 0, 0
    for t in range(burn_in + steps_per_chain):
        prop = x.copy()
        prop[:, free] += scale * rng.standard_normal((n_chains, free.size))
        lp = log_p(prop)
        u = np.log(rng.uniform(size=n_chains))
        acc = u < lp - current
        x[acc] = prop[acc]
        current[acc] = lp[acc]
        if t < burn_in:
            window_acc += int(acc.sum())
            window_n += n_chains
            if window_n >= 100 * n_chains:
                rate = window_acc / window_n
                scale *= float(np.exp(rate - TARGET_ACCEPTANCE))
                window_acc, window_n = 0, 0
        else:
            i = t - burn_in
            accepted += int(acc.sum())
            h_trace[i] = _energy(x, s, clamped)
            x_trace[i] = x[:, free]
    total = steps_per_chain * n_chains
    rate = accepted / total
    mean_h = float(h_trace.mean())
    stderr_h = float(batch_means_stderr(h_trace.mean(axis=1)))
    mean_free = x_trace.mean(axis=(0, 1))
    stderr_free = batch_means_stderr(x_trace.mean(axis=1))
    mean_x = x[0].copy()
    mean_x[free] = mean_free
    stderr_x = np.zeros(s.n)
    stderr_x[free] = stderr_free

    nan = float("nan")
    log_full = log_trunc = u_exact = nan
    if not clamped and beta > 0:
        fp = spectral.fprime_diag(s, mean_x)
        dec = spectral.spectrum(s, fp, reduce=False)
        coeffs = dec.eigenvectors.T @ mean_x
        try:
            log_full, log_trunc = gaussian_log_z(beta, dec.eigenvalues, s.m, coeffs)
            u_exact = spectral.avg_loss(beta, dec.eigenvalues, s.m).exact
        except spectral.DomainError:
            pass
    lo, hi = ACCEPTANCE_BAND
    return EnsembleEstimate(beta, window_mode, total, mean_h, stderr_h, rate, mean_x, stderr_x,
                            log_full, log_trunc, u_exact, scale, not lo <= rate <= hi)


def histogram_entropy(samples: np.ndarray, bins: np.ndarray) -> float:
    """Differential entropy estimate from a histogram density."""
    counts, edges = np.histogram(samples, bins=bins)
    widths = np.diff(edges)
    p = counts / counts.sum()
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz] / widths[nz])))
