import numpy as np
import pytest

from diffrls import netgraph, signals


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def network20():
    """The 20-node random geometric network used by the bundled configs."""
    topo, pos = netgraph.random_geometric(20, 0.33, signals.scenario_rng(7))
    return topo, netgraph.build_metropolis(topo)


def random_spd(rng, m, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    ev = np.geomspace(1.0, cond, m) * rng.uniform(0.5, 2.0)
    return (q * ev) @ q.T


ACCEPTANCE = []


def report(number, ok, detail):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
