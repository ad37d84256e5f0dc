import numpy as np
import pytest

from neurothermo.septuple import Septuple, Topology


def edge_net(s: float = 1.0, activation: str = "identity", m: float = 0.0, bias=(0.0, 0.0)) -> Septuple:
    """Two neurons, one edge 0 -> 1 with weight s."""
    w = np.array([[0.0, 0.0], [s, 0.0]])
    return Septuple(Topology.layered([1, 1]), w, np.array(bias, dtype=float), activation=activation, m=m)


def random_net(rng: np.random.Generator, sizes, activation="tanh", m=0.0, scale=1.0, bias=True) -> Septuple:
    topo = Topology.layered(sizes)
    w = np.where(topo.mask(), rng.uniform(-scale, scale, (topo.n_total, topo.n_total)), 0.0)
    b = rng.uniform(-0.5, 0.5, topo.n_total) if bias else np.zeros(topo.n_total)
    b[topo.input_ids] = 0.0
    return Septuple(topo, w, b, activation=activation, m=m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- desk-scale runs shared by the acceptance and desk-property suites -----------------

DESK_EPOCHS = 2000
DESK_CHECKPOINT_EVERY = 100
DESK_WARMUP = 200
DESK_ARCHS = {"deep": (64, 16, 8, 10), "shallow": (64, 24, 10), "two_layer": (64, 10)}
DESK_BULK = {"bulk_mode": "descent", "bulk_budget": 20}

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


@pytest.fixture(scope="session")
def desk_runs():
    from neurothermo.dataio import synth
    from neurothermo.septuple import init_septuple
    from neurothermo.trainer import ThermoTrace, TrainConfig, sgd_train

    data = synth(1000, 64, 10, seed=1)
    runs = {}
    for name, sizes in DESK_ARCHS.items():
        trace = ThermoTrace()
        bulk = DESK_BULK if name != "two_layer" else {}
        cfg = TrainConfig(epochs=DESK_EPOCHS, checkpoint_every=DESK_CHECKPOINT_EVERY, seed=0, **bulk)
        final = sgd_train(init_septuple(sizes, seed=0), data, cfg, trace)
        runs[name] = (trace, final)
    return runs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
