"""Robust diffusion recursive least squares over multi-agent networks."""

from .dcd import DcdParams, dcd_solve
from .diffusion import (ALGORITHMS, NcParams, RdrlsParams, make_algorithm, run_network)
from .netgraph import Topology, build_metropolis, neighbors, random_geometric

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "DcdParams", "NcParams", "RdrlsParams", "Topology", "build_metropolis",
    "dcd_solve", "make_algorithm", "neighbors", "random_geometric", "run_network",
]
