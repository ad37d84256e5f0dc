"""Neural septuple: topology, weights, biases, activation and loss selector.

Weights follow the column-vector convention ``x(t+1) = f(w x(t) + b)``, so
``w[i, j]`` is the connection from neuron ``j`` into neuron ``i``. Neurons are
numbered layer by layer, input layer first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_FORMAT = "neurothermo-septuple/1"


class NumericError(ArithmeticError):
    pass


# activation registry: name -> (value, derivative)
ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - np.tanh(y) ** 2),
    "identity": (lambda y: np.asarray(y, dtype=np.float64).copy(), lambda y: np.ones_like(y, dtype=np.float64)),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass(frozen=True)
class Topology:
    layers: tuple[tuple[int, ...], ...]

    @classmethod
    def layered(cls, sizes: Sequence[int]) -> "Topology":
        if len(sizes) < 2 or any(int(s) < 0 for s in sizes):
            raise ValueError(f"need at least an input and an output layer, got {list(sizes)}")
        if int(sizes[0]) < 1:
            raise ValueError("input layer must be nonempty")
        layers, start = [], 0
        for s in sizes:
            layers.append(tuple(range(start, start + int(s))))
            start += int(s)
        return cls(tuple(layers))

    @property
    def n_total(self) -> int:
        return sum(len(layer) for layer in self.layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(layer) for layer in self.layers)

    @property
    def input_ids(self) -> np.ndarray:
        return np.array(self.layers[0], dtype=int)

    @property
    def output_ids(self) -> np.ndarray:
        return np.array(self.layers[-1], dtype=int) if self.n_layers > 1 else np.zeros(0, dtype=int)

    @property
    def hidden_ids(self) -> np.ndarray:
        hid = [i for layer in self.layers[1:-1] for i in layer]
        return np.array(hid, dtype=int)

    @property
    def non_input_ids(self) -> np.ndarray:
        return np.array([i for layer in self.layers[1:] for i in layer], dtype=int)

    def slices(self) -> list[slice]:
        """Contiguous slice per layer (layers built by :meth:`layered` are contiguous)."""
        out = []
        for layer in self.layers:
            if not layer:
                out.append(slice(0, 0))
                continue
            lo, hi = layer[0], layer[-1] + 1
            if tuple(range(lo, hi)) != tuple(layer):
                raise ValueError("layer indices are not contiguous")
            out.append(slice(lo, hi))
        return out

    def mask(self) -> np.ndarray:
        n = self.n_total
        m = np.zeros((n, n), dtype=bool)
        for src, dst in zip(self.layers[:-1], self.layers[1:]):
            if src and dst:
                m[np.ix_(dst, src)] = True
        return m

    def problems(self) -> list[str]:
        n = self.n_total
        seen = sorted(i for layer in self.layers for i in layer)
        out = []
        if seen != list(range(n)):
            out.append("layers do not partition the neuron indices")
        if self.n_layers < 2:
            out.append("fewer than two layers")
        return out


@dataclass
class Septuple:
    topology: Topology
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"
    m: float = 0.0
    loss_kind: str = "boundary"
    mask: np.ndarray = None
    seed: int | None = None
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.topology.n_total
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.mask is None:
            self.mask = self.topology.mask()
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.weights.shape != (n, n) or self.bias.shape != (n,) or self.mask.shape != (n, n):
            raise ValueError(
                f"shape mismatch: weights {self.weights.shape}, bias {self.bias.shape}, "
                f"mask {self.mask.shape} for N={n}"
            )
        if self.loss_kind not in ("boundary", "bulk"):
            raise ValueError(f"loss_kind must be 'boundary' or 'bulk', got {self.loss_kind!r}")
        activation(self.activation)
        self._layered = bool(not np.any(self.mask & ~self.topology.mask()))

    @property
    def n(self) -> int:
        return self.topology.n_total

    @property
    def f(self):
        return activation(self.activation)[0]

    @property
    def fprime(self):
        return activation(self.activation)[1]

    def copy(self, **changes) -> "Septuple":
        base = dict(weights=self.weights.copy(), bias=self.bias.copy(), mask=self.mask.copy(),
                    extra=dict(self.extra))
        base.update(changes)
        return replace(self, **base)

    def preactivation(self, x: np.ndarray) -> np.ndarray:
        """``x w^T + b`` for a batch of states, using only the layer blocks when possible."""
        if not self._layered:
            return x @ self.weights.T + self.bias
        z = np.broadcast_to(self.bias, x.shape).copy()
        sl = self.topology.slices()
        for k, block in enumerate(self.layer_blocks(), start=1):
            z[..., sl[k]] += x[..., sl[k - 1]] @ block.T
        return z

    def transpose_apply(self, y: np.ndarray) -> np.ndarray:
        """``y w`` for a batch of row vectors."""
        if not self._layered:
            return y @ self.weights
        out = np.zeros_like(y)
        sl = self.topology.slices()
        for k, block in enumerate(self.layer_blocks(), start=1):
            out[..., sl[k - 1]] += y[..., sl[k]] @ block
        return out

    def layer_blocks(self) -> list[np.ndarray]:
        """Views ``w[layer k+1, layer k]`` for each consecutive pair of layers."""
        sl = self.topology.slices()
        return [self.weights[dst, src] for src, dst in zip(sl[:-1], sl[1:])]


def init_septuple(sizes: Sequence[int], seed: int = 0, activation_name: str = "tanh",
                  m: float = 0.0, loss_kind: str = "boundary", bias_scale: float | None = None) -> Septuple:
    """Layered septuple with weights uniform on +-1/sqrt(fan_in)."""
    topo = Topology.layered(sizes)
    rng = np.random.default_rng(seed)
    n = topo.n_total
    w = np.zeros((n, n))
    b = np.zeros(n)
    sl = topo.slices()
    for src, dst in zip(sl[:-1], sl[1:]):
        fan_in = src.stop - src.start
        if fan_in == 0 or dst.stop == dst.start:
            continue
        lim = 1.0 / np.sqrt(fan_in)
        w[dst, src] = rng.uniform(-lim, lim, size=(dst.stop - dst.start, fan_in))
        blim = lim if bias_scale is None else bias_scale
        b[dst] = rng.uniform(-blim, blim, size=dst.stop - dst.start)
    return Septuple(topo, w, b, activation=activation_name, m=m, loss_kind=loss_kind, seed=seed)


def validate(s: Septuple) -> list[str]:
    """Human-readable list of violated structural constraints (empty when valid)."""
    topo = s.topology
    report = list(topo.problems())
    w = s.weights
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(s.bias)):
        report.append("non-finite weights or bias")
    outside = (w != 0) & ~s.mask
    if np.any(outside):
        report.append(f"{int(outside.sum())} nonzero weight(s) outside the mask")
    inp, out = topo.input_ids, topo.output_ids
    if inp.size and np.any(w[inp, :] != 0):
        report.append("input has incoming edge")
    if out.size and np.any(w[:, out] != 0):
        report.append("output has outgoing edge")
    big_l = topo.n_layers
    power = np.eye(s.n)
    pattern = (w != 0).astype(np.float64)
    for _ in range(big_l):
        power = power @ pattern
        power = (power != 0).astype(np.float64)
    if np.any(power != 0):
        report.append(f"weight matrix is not nilpotent of order {big_l}")
    return report


def forward_step(x: np.ndarray, s: Septuple, clamp: np.ndarray | None = None) -> np.ndarray:
    """One update ``f(w x + b)``; if ``clamp`` is given the input neurons are held at it."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.n:
        raise ValueError(f"state has length {x.shape[-1]}, septuple has N={s.n}")
    out = s.f(s.preactivation(x))
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NumericError(f"non-finite state component at index {tuple(bad)}")
    if clamp is not None:
        out[..., s.topology.input_ids] = clamp
    return out


@dataclass
class PropagationResult:
    x: np.ndarray
    steps: int
    converged: bool


def propagate(inputs: np.ndarray, s: Septuple, max_steps: int | None = None, tol: float = 0.0,
              iterate: bool = False) -> PropagationResult:
    """Run the clamped dynamics from ``x(0) = P_in x_boundary``.

    ``inputs`` holds only the input-neuron values (shape ``(n_in,)`` or
    ``(batch, n_in)``). For a layered septuple the exact fixed point is
    reached after ``L - 1`` steps and that many steps are taken. With
    ``iterate=True`` the update repeats until the sup-norm change drops
    below ``tol`` or ``max_steps`` is hit.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    inp = s.topology.input_ids
    if inputs.shape[-1] != inp.size:
        raise ValueError(f"expected {inp.size} input values, got {inputs.shape[-1]}")
    x = np.zeros(inputs.shape[:-1] + (s.n,))
    x[..., inp] = inputs
    if not iterate:
        steps = s.topology.n_layers - 1
        for _ in range(steps):
            x = forward_step(x, s, clamp=inputs)
        return PropagationResult(x, steps, True)

    max_steps = 1000 if max_steps is None else max_steps
    for step in range(1, max_steps + 1):
        nxt = forward_step(x, s, clamp=inputs)
        delta = np.max(np.abs(nxt - x), initial=0.0)
        x = nxt
        if delta < tol or (tol == 0.0 and delta == 0.0):
            return PropagationResult(x, step, True)
    return PropagationResult(x, max_steps, False)


def forward_layers(s: Septuple, inputs: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Layer-by-layer forward pass on a batch.

    Returns per-layer activations (layer 0 = inputs) and pre-activations
    (entry 0 is ``None``-like empty). Equivalent to :func:`propagate` for
    layered septuples but touches only the nonzero weight blocks.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    sl = s.topology.slices()
    f = s.f
    acts, pre = [inputs], [np.zeros((inputs.shape[0], 0))]
    for k, block in enumerate(s.layer_blocks(), start=1):
        z = acts[-1] @ block.T + s.bias[sl[k]]
        pre.append(z)
        acts.append(f(z))
    return acts, pre


def assemble_state(s: Septuple, acts: list[np.ndarray]) -> np.ndarray:
    x = np.empty((acts[0].shape[0], s.n))
    for sl, a in zip(s.topology.slices(), acts):
        x[:, sl] = a
    return x


# --- checkpoint serialisation -------------------------------------------------

def _hex(a: np.ndarray) -> list:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _unhex(values, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


def to_dict(s: Septuple) -> dict:
    """Checkpoint payload; reals are hex floats so a round trip is bit-exact."""
    n = s.n
    rows, cols = np.nonzero(s.mask)
    return {
        "format": CHECKPOINT_FORMAT,
        "layers": [list(layer) for layer in s.topology.layers],
        "activation": s.activation,
        "m": float(s.m).hex(),
        "loss_kind": s.loss_kind,
        "seed": s.seed,
        "epoch": int(s.epoch),
        "n": n,
        "mask": [[int(r), int(c)] for r, c in zip(rows, cols)],
        "weights": _hex(s.weights[rows, cols]),
        "bias": _hex(s.bias),
        "extra": s.extra,
    }


def from_dict(d: dict) -> Septuple:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a septuple checkpoint (format={d.get('format')!r})")
    topo = Topology(tuple(tuple(int(i) for i in layer) for layer in d["layers"]))
    n = int(d["n"])
    mask = np.zeros((n, n), dtype=bool)
    idx = np.array(d["mask"], dtype=int).reshape(-1, 2)
    mask[idx[:, 0], idx[:, 1]] = True
    w = np.zeros((n, n))
    w[idx[:, 0], idx[:, 1]] = _unhex(d["weights"], (len(idx),))
    return Septuple(topo, w, _unhex(d["bias"], (n,)), activation=d["activation"],
                    m=float.fromhex(d["m"]), loss_kind=d["loss_kind"], mask=mask,
                    seed=d.get("seed"), epoch=int(d.get("epoch", 0)), extra=d.get("extra", {}))


def save(s: Septuple, path) -> None:
    Path(path).write_text(json.dumps(to_dict(s), indent=1) + "\n", encoding="utf-8")


def load(path) -> Septuple:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
