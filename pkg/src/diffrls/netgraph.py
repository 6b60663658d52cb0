"""Network topology and diffusion combination weights."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected graph over ``n_nodes`` agents.

    ``adjacency[m, k]`` is True when node ``m`` belongs to the neighborhood of
    node ``k``. The relation is symmetric and every node is its own neighbor.
    """

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError("adjacency must be a non-empty square matrix")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if not a.diagonal().all():
            raise ValueError("adjacency must be reflexive (true diagonal)")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        """Neighborhood sizes n_k, self included."""
        return self.adjacency.sum(axis=0)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(m, k)`` with ``m < k``, 0-based."""
        m, k = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(m.tolist(), k.tolist()))

    def components(self) -> list[list[int]]:
        """Connected components as sorted node lists."""
        seen = np.zeros(self.n_nodes, dtype=bool)
        comps = []
        for start in range(self.n_nodes):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in np.flatnonzero(self.adjacency[v]):
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.components()) == 1

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "Topology":
        a = np.eye(n_nodes, dtype=bool)
        for m, k in edges:
            if not (0 <= m < n_nodes and 0 <= k < n_nodes):
                raise ValueError(f"edge ({m}, {k}) out of range for {n_nodes} nodes")
            a[m, k] = a[k, m] = True
        return cls(a)


def line(n_nodes: int) -> Topology:
    return Topology.from_edges(n_nodes, [(k, k + 1) for k in range(n_nodes - 1)])


def complete(n_nodes: int) -> Topology:
    return Topology(np.ones((n_nodes, n_nodes), dtype=bool))


def random_geometric(n_nodes: int, radius: float, rng: np.random.Generator,
                     max_tries: int = 10_000) -> tuple[Topology, np.ndarray]:
    """Random geometric graph in the unit square, redrawn until connected.

    Returns the topology and the ``(n_nodes, 2)`` node positions.
    """
    for _ in range(max_tries):
        pos = rng.uniform(0.0, 1.0, size=(n_nodes, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        topo = Topology(dist < radius)
        if topo.is_connected():
            return topo, pos
    raise RuntimeError(f"no connected graph with radius {radius} after {max_tries} draws")


def neighbors(topology: Topology, k: int) -> list[int]:
    """Neighborhood of node ``k`` (self included) in ascending order."""
    if not 0 <= k < topology.n_nodes:
        raise IndexError(f"node index {k} out of range [0, {topology.n_nodes})")
    return np.flatnonzero(topology.adjacency[:, k]).tolist()


def build_metropolis(topology: Topology) -> np.ndarray:
    """Metropolis combination matrix.

    ``c[m, k] = 1 / max(n_m, n_k)`` for neighbors ``m != k`` and the diagonal
    absorbs the remainder so that every column sums to one.
    """
    a = topology.adjacency
    n = topology.degrees().astype(float)
    c = np.where(a, 1.0 / np.maximum(n[:, None], n[None, :]), 0.0)
    np.fill_diagonal(c, 0.0)
    c[np.diag_indices_from(c)] = 1.0 - c.sum(axis=0)
    return c


def check_combination(c: np.ndarray, topology: Topology | None = None, atol: float = 1e-12):
    """Raise ``ValueError`` unless ``c`` is a valid column-stochastic weight matrix."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("combination matrix must be square")
    if (c < 0).any():
        raise ValueError("combination weights must be non-negative")
    if not np.allclose(c.sum(axis=0), 1.0, rtol=0.0, atol=atol):
        raise ValueError("combination matrix columns must sum to one")
    if topology is not None and (c[~topology.adjacency] != 0).any():
        raise ValueError("non-zero weight between non-neighbors")


def read_topology(path) -> Topology:
    """Read a topology file: first line ``N``, then 1-based ``m k`` edge lines."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty topology file")
    n_nodes = int(lines[0])
    edges = []
    for ln in lines[1:]:
        m, k = (int(t) for t in ln.split())
        edges.append((m - 1, k - 1))
    return Topology.from_edges(n_nodes, edges)


def write_topology(topology: Topology, path) -> None:
    out = [str(topology.n_nodes)]
    out += [f"{m + 1} {k + 1}" for m, k in topology.edges()]
    Path(path).write_text("\n".join(out) + "\n")
