import numpy as np
import pytest

from neurothermo.dataio import Dataset, synth
from neurothermo.loss import boundary_losses, minimize_bulk
from neurothermo.septuple import Septuple, Topology, init_septuple, load, propagate
from neurothermo.trainer import (ThermoTrace, TrainConfig, TrainingDiverged, dataset_losses, gradient,
                                 sgd_train)

from conftest import edge_net, random_net

# relative error = |g - fd| / max(|g|, |fd|, REL_FLOOR)
REL_FLOOR = 1e-6
FD_STEP = 1e-5


def oracle_loss(s: Septuple, inputs, targets, kind: str) -> float:
    """Loss evaluated by an independent path: propagate + loss functions."""
    if kind == "boundary":
        return float(np.mean(boundary_losses(propagate(inputs, s).x, targets, s.topology)))
    return float(np.mean(minimize_bulk(inputs, targets, s).h))


def fd_relative_error(s, inputs, targets, kind) -> float:
    g = gradient(s, inputs, targets, kind)
    worst = 0.0
    rows, cols = np.nonzero(s.mask)
    coords = [("w", r, c) for r, c in zip(rows, cols)] + [("b", i, None) for i in s.topology.non_input_ids]
    for which, i, j in coords:
        plus, minus = s.copy(), s.copy()
        if which == "w":
            plus.weights[i, j] += FD_STEP
            minus.weights[i, j] -= FD_STEP
            an = g.d_weights[i, j]
        else:
            plus.bias[i] += FD_STEP
            minus.bias[i] -= FD_STEP
            an = g.d_bias[i]
        fd = (oracle_loss(plus, inputs, targets, kind) - oracle_loss(minus, inputs, targets, kind)) / (2 * FD_STEP)
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), REL_FLOOR))
    return worst


def random_instance(seed: int):
    rng = np.random.default_rng(seed)
    n_layers = rng.integers(2, 5)
    sizes = [int(v) for v in rng.integers(1, 6, size=n_layers)]
    while sum(sizes) > 30:
        sizes[int(np.argmax(sizes))] -= 1
    kind = ("boundary", "bulk")[seed % 2]
    m = (0.0, 0.1)[(seed // 2) % 2]
    s = random_net(rng, sizes, m=m, scale=1.0)
    inputs = rng.uniform(-0.9, 0.9, (3, sizes[0]))
    targets = rng.uniform(-0.9, 0.9, (3, sizes[-1]))
    return s, inputs, targets, kind


def test_gradient_zero_weights_at_target():
    topo = Topology.layered([2, 2])
    b = np.array([0.0, 0.0, 0.3, -0.4])
    s = Septuple(topo, np.zeros((4, 4)), b)
    g = gradient(s, np.array([0.5, 0.1]), np.tanh(b[2:]))
    assert np.all(g.d_weights == 0) and np.all(g.d_bias == 0)


def test_gradient_scalar_identity():
    w, x1, t = 0.7, 0.4, 0.9
    s = edge_net(w, activation="identity")
    g = gradient(s, np.array([x1]), np.array([t]))
    assert abs(g.d_weights[1, 0] - (w * x1 - t) * x1) < 1e-15
    assert abs(g.d_bias[1] - (w * x1 - t)) < 1e-15


def test_gradient_masked_entries_zero(rng):
    s = random_net(rng, [3, 4, 2], m=0.1)
    for kind in ("boundary", "bulk"):
        g = gradient(s, rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (4, 2)), kind)
        assert np.all(g.d_weights[~s.mask] == 0)
        assert np.all(g.d_bias[s.topology.input_ids] == 0)


@pytest.mark.parametrize("seed", range(0, 100, 10))
def test_gradient_finite_differences_sample(seed):
    s, inputs, targets, kind = random_instance(seed)
    assert fd_relative_error(s, inputs, targets, kind) < 1e-5


def test_bulk_gradient_differs_from_boundary_when_m_nonzero(rng):
    s = random_net(rng, [2, 3, 2], m=0.1)
    inp, tgt = rng.uniform(-1, 1, (2, 2)), rng.uniform(-1, 1, (2, 2))
    gb, gk = gradient(s, inp, tgt, "boundary"), gradient(s, inp, tgt, "bulk")
    assert np.max(np.abs(gb.d_weights - gk.d_weights)) > 1e-6
    s0 = s.copy(m=0.0)
    np.testing.assert_array_equal(gradient(s0, inp, tgt, "boundary").d_weights,
                                  gradient(s0, inp, tgt, "bulk").d_weights)


def small_data(n=40, seed=0):
    return synth(n, 4, 2, seed=seed)


def test_lr_zero_unchanged():
    s = init_septuple([4, 3, 2], seed=1)
    tr = ThermoTrace()
    out = sgd_train(s, small_data(), TrainConfig(epochs=5, learning_rate=0.0, checkpoint_every=5), tr)
    np.testing.assert_array_equal(out.weights, s.weights)
    ub = tr.series("U_boundary")
    assert len(ub) == 6 and np.all(ub == ub[0])


def test_determinism(tmp_path):
    s = init_septuple([4, 5, 3, 2], seed=3)
    data = small_data(60)
    runs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        sgd_train(s, data, TrainConfig(epochs=6, checkpoint_every=3, seed=11, checkpoint_dir=str(d)))
        runs.append(sorted(d.glob("*.json")))
    assert [p.name for p in runs[0]] == ["ckpt_000000.json", "ckpt_000003.json", "ckpt_000006.json"]
    for a, b in zip(*runs):
        assert a.read_bytes() == b.read_bytes()


def test_mask_preserved():
    s = init_septuple([4, 5, 3, 2], seed=5)
    out = sgd_train(s, small_data(), TrainConfig(epochs=20, learning_rate=0.5, checkpoint_every=20))
    assert np.all(out.weights[~s.mask] == 0)
    assert np.any(out.weights != s.weights)


def test_training_reduces_loss_and_records():
    s = init_septuple([4, 4, 2], seed=0)
    data = synth(200, 4, 2, seed=3)
    tr = ThermoTrace()
    out = sgd_train(s, data, TrainConfig(epochs=500, checkpoint_every=100), tr)
    assert [c.epoch for c in tr.checkpoints] == [0, 100, 200, 300, 400, 500]
    assert len(tr.epochs) == 501
    ub, _ = dataset_losses(out, data)
    assert ub < 0.05
    assert tr.series("U_boundary")[-1] == ub


def test_divergence_raises_with_checkpoint():
    s = init_septuple([4, 3, 2], seed=0, activation_name="identity")
    with pytest.raises(TrainingDiverged) as info:
        sgd_train(s, small_data(), TrainConfig(epochs=50, learning_rate=5.0, checkpoint_every=1))
    assert isinstance(info.value.checkpoint, Septuple)
    assert np.all(np.isfinite(info.value.checkpoint.weights))


def test_dimension_mismatch_and_config_validation():
    s = init_septuple([3, 2], seed=0)
    with pytest.raises(ValueError):
        sgd_train(s, small_data(), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        sgd_train(s, Dataset(np.zeros((0, 3)), np.zeros((0, 2))), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="hinge")


def test_bulk_training_runs():
    s = init_septuple([4, 3, 2], seed=2, m=0.1, loss_kind="bulk")
    tr = ThermoTrace()
    sgd_train(s, small_data(), TrainConfig(epochs=30, loss_kind="bulk", checkpoint_every=10), tr)
    ub = tr.series("U_boundary")
    assert ub[-1] < ub[0]
