import numpy as np
import pytest

from qkdnet.channel import ChannelParams, simulate_network
from qkdnet.dataset import build_sample
from qkdnet.model import ModelConfig
from qkdnet.topology import NetworkTopology, TopologyConfig, generate_topology

# lines appended by the acceptance suite, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_topology(positions, edges, **kw):
    return NetworkTopology(positions=np.asarray(positions, dtype=float), edges=edges, **kw)


@pytest.fixture(scope="session")
def sim20():
    t = generate_topology(TopologyConfig(num_nodes=20, seed=3))
    return simulate_network(t, ChannelParams(), 3)


@pytest.fixture(scope="session")
def sample20(sim20):
    return build_sample(sim20)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(hidden=8, heads=2, dropout=0.0)
