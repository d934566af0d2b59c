import numpy as np
import pytest

from netsampling.dynamics import DynamicsModel, sample_stable_model
from netsampling.graph import generate_network
from netsampling.spectral import decompose, jacobian

ACCEPTANCE_LINES: list[str] = []


def pd_instance(n=20, p=0.2, seed=0, R_rel=0.5):
    net = generate_network(n, p, seed)
    rho = float(np.max(np.abs(np.linalg.eigvals(net.adjacency))))
    model = DynamicsModel("PD", B=1.0, R=R_rel / max(rho, 1e-12))
    eq = np.zeros(n)
    return net, model, eq, decompose(jacobian(model, net, eq))


def mak_instance(n=20, p=0.2, seed=0):
    net = generate_network(n, p, seed)
    model, eq, _ = sample_stable_model("MAK", net, seed)
    return net, model, eq, decompose(jacobian(model, net, eq))


@pytest.fixture
def pd_small():
    return pd_instance()


@pytest.fixture
def mak_small():
    return mak_instance()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
