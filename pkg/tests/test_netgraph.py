import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffrls import netgraph
from diffrls.netgraph import Topology, build_metropolis, check_combination, neighbors


def test_isolated_node_weight_is_one():
    c = build_metropolis(Topology(np.ones((1, 1), dtype=bool)))
    assert c.tolist() == [[1.0]]


def test_line_graph_metropolis_weights():
    c = build_metropolis(netgraph.line(3))
    expected = np.array([[2 / 3, 1 / 3, 0.0],
                         [1 / 3, 1 / 3, 1 / 3],
                         [0.0, 1 / 3, 2 / 3]])
    np.testing.assert_allclose(c, expected, atol=1e-15)


def test_complete_graph_uniform_weights():
    np.testing.assert_allclose(build_metropolis(netgraph.complete(3)), np.full((3, 3), 1 / 3))


def test_neighbors_sorted_and_inclusive():
    topo = netgraph.line(3)
    assert neighbors(topo, 1) == [0, 1, 2]
    assert neighbors(Topology(np.ones((1, 1), dtype=bool)), 0) == [0]
    with pytest.raises(IndexError):
        neighbors(topo, 3)


def test_fixture_network_has_node_with_ten_neighbors(network20):
    topo, _ = network20
    sizes = [len(neighbors(topo, k)) for k in range(topo.n_nodes)]
    assert 10 in sizes
    assert topo.is_connected()


def test_rejects_invalid_adjacency():
    with pytest.raises(ValueError):
        Topology(np.array([[True, True], [False, True]]))
    with pytest.raises(ValueError):
        Topology(np.array([[False, True], [True, True]]))


def test_disconnected_graph_reports_components():
    topo = Topology.from_edges(4, [(0, 1), (2, 3)])
    assert topo.components() == [[0, 1], [2, 3]]
    check_combination(build_metropolis(topo), topo)


def test_topology_file_roundtrip(tmp_path):
    topo = Topology.from_edges(5, [(0, 1), (1, 2), (3, 4), (0, 4)])
    path = tmp_path / "net.txt"
    netgraph.write_topology(topo, path)
    assert path.read_text().splitlines()[0] == "5"
    assert "1 2" in path.read_text()
    back = netgraph.read_topology(path)
    assert np.array_equal(back.adjacency, topo.adjacency)


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 12))
    bits = draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
    a = np.array(bits, dtype=bool).reshape(n, n)
    a = a | a.T | np.eye(n, dtype=bool)
    return Topology(a)


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_metropolis_properties(topo):
    c = build_metropolis(topo)
    assert c.min() >= 0.0
    np.testing.assert_allclose(c.sum(axis=0), 1.0, atol=1e-12)
    off = ~np.eye(topo.n_nodes, dtype=bool)
    np.testing.assert_array_equal(c[off], c.T[off])
    assert np.array_equal(c != 0, topo.adjacency | (np.eye(topo.n_nodes, dtype=bool) & (c != 0)))
    assert np.all(c[~topo.adjacency] == 0)
    assert np.all(c[topo.adjacency & off] > 0)
