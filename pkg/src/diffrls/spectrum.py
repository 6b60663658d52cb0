"""Cooperative power-spectrum estimation with a basis-expansion model.

The transmitted PSD is ``phi(f) = q(f)^T w`` over ``M`` rectangular basis
functions. Each node scans one grid frequency per instant and feeds the
scalar measurement to a diffusion estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import BatchSource, DiffusionAlgorithm, run_network
from .signals import NOISE, SCHEDULE, substream

SCHEDULES = ("round-robin", "random")


@dataclass(frozen=True)
class BasisSet:
    """Rectangular non-overlapping basis on ``[f_min, f_max]`` sampled on a grid.

    Basis ``m`` (0-based) covers ``(f_min + m*D, f_min + (m+1)*D]`` with
    ``D = (f_max - f_min) / M``; ``f_min`` itself belongs to the first basis.
    """

    m: int
    n_freq: int
    f_min: float
    f_max: float
    grid: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)

    def index(self, f):
        """Basis index of frequency ``f`` (vectorized)."""
        f = np.asarray(f, dtype=float)
        if np.any((f < self.f_min) | (f > self.f_max)):
            raise ValueError(f"frequency outside the band [{self.f_min}, {self.f_max}]")
        pos = (f - self.f_min) * self.m / (self.f_max - self.f_min)
        return np.clip(np.ceil(pos).astype(int) - 1, 0, self.m - 1)

    def rows(self, f):
        """Basis vectors ``q(f)`` stacked along a new last axis."""
        return np.eye(self.m)[self.index(f)]


def build_rect_basis(m: int, n_freq: int, f_min: float = 0.0, f_max: float = 1.0) -> BasisSet:
    """Indicator basis with grid ``f_i = f_min + i (f_max - f_min) / n_freq``, ``i = 1..n_freq``."""
    if m < 1:
        raise ValueError("need at least one basis function")
    if n_freq < m:
        raise ValueError(f"grid of {n_freq} frequencies cannot cover {m} basis functions")
    if not f_max > f_min:
        raise ValueError("f_max must exceed f_min")
    iota = np.arange(1, n_freq + 1)
    grid = f_min + iota * (f_max - f_min) / n_freq
    # exact integer bucketing of grid points: ceil(iota * m / n_freq) - 1
    idx = (iota * m + n_freq - 1) // n_freq - 1
    q = np.zeros((n_freq, m))
    q[np.arange(n_freq), idx] = 1.0
    q.setflags(write=False)
    grid.setflags(write=False)
    return BasisSet(m, n_freq, float(f_min), float(f_max), grid, q)


def psd_true(basis: BasisSet, w, f):
    """``q(f)^T w``."""
    return np.asarray(w, dtype=float)[basis.index(f)]


def sparse_spectrum(m: int, n_active: int, power: float, rng) -> np.ndarray:
    """Power vector with ``n_active`` randomly placed entries equal to ``power``."""
    if not 0 <= n_active <= m:
        raise ValueError("number of active bands must lie in [0, M]")
    w = np.zeros(m)
    w[rng.choice(m, size=n_active, replace=False)] = power
    return w


@dataclass
class SpectrumScenario:
    """Transmit powers, per-node channel gains and observation noise."""

    w_true: np.ndarray
    noise: list
    channel_gain: np.ndarray | None = None
    rx_noise_power: np.ndarray | None = None

    def __post_init__(self):
        self.w_true = np.asarray(self.w_true, dtype=float)
        if np.any(self.w_true < 0):
            raise ValueError("transmit powers must be non-negative")
        n = len(self.noise)
        self.channel_gain = (np.ones(n) if self.channel_gain is None
                             else np.broadcast_to(np.asarray(self.channel_gain, float), (n,)).copy())
        self.rx_noise_power = (np.zeros(n) if self.rx_noise_power is None
                               else np.broadcast_to(np.asarray(self.rx_noise_power, float), (n,)).copy())

    @property
    def m(self) -> int:
        return self.w_true.size

    @property
    def n_nodes(self) -> int:
        return len(self.noise)

    def w_at(self, i):
        i = np.asarray(i)
        return np.broadcast_to(self.w_true, i.shape + (self.m,)).copy()


def spectrum_measure(scenario: SpectrumScenario, basis: BasisSet, k: int, i: int, iota: int, rng):
    """Regressor ``|H_k| q(f_iota)`` and the measurement with the receiver noise floor removed.

    ``iota`` is the 0-based grid index. ``i`` is accepted for time-varying
    channels; the constant-gain model ignores it.
    """
    reg = scenario.channel_gain[k] * basis.q[iota]
    floor = scenario.rx_noise_power[k]
    d = reg @ scenario.w_true + floor + scenario.noise[k].sample(rng)
    return reg, d - floor


def frequency_schedule(kind: str, n_iters: int, n_nodes: int, n_freq: int, rng=None) -> np.ndarray:
    """Grid index scanned by each node at iterations ``1..n_iters`` as ``(n_iters, N)``.

    Round-robin offsets node ``k`` by ``k`` positions so that neighbors scan
    different frequencies at the same instant.
    """
    if kind == "round-robin":
        i = np.arange(n_iters)[:, None]
        return (i + np.arange(n_nodes)[None, :]) % n_freq
    if kind == "random":
        if rng is None:
            raise ValueError("random schedule needs a generator")
        return rng.integers(0, n_freq, size=(n_iters, n_nodes))
    raise ValueError(f"unknown schedule {kind!r}; choose from {', '.join(SCHEDULES)}")


class SpectrumTrialData:
    """Regressors and measurements of one spectrum-estimation trial."""

    def __init__(self, scenario: SpectrumScenario, basis: BasisSet, seed: int, trial: int,
                 n_iters: int, schedule: str = "round-robin"):
        if basis.m != scenario.m:
            raise ValueError("basis size does not match the transmit power vector")
        self.scenario, self.basis = scenario, basis
        self.m, self.n_nodes = scenario.m, scenario.n_nodes
        n = scenario.n_nodes
        rng = substream(seed, trial, 0, SCHEDULE) if schedule == "random" else None
        self.iota = frequency_schedule(schedule, n_iters, n, basis.n_freq, rng)
        self.noise = np.stack([scenario.noise[k].sample(substream(seed, trial, k, NOISE), n_iters)
                               for k in range(n)], axis=1)

    def block(self, i0: int, i1: int):
        sc = self.scenario
        u = sc.channel_gain[None, :, None] * self.basis.q[self.iota[i0:i1]]
        d = u @ sc.w_true + self.noise[i0:i1]
        return u, d


@dataclass
class SpectrumResult:
    sq_dev: np.ndarray     # (trials, n_iters + 1, N)
    w_final: np.ndarray    # (trials, N, M)
    basis: BasisSet
    w_true: np.ndarray

    @property
    def msd_net(self) -> np.ndarray:
        return self.sq_dev.mean(axis=(0, 2))

    def psd_estimates(self) -> np.ndarray:
        """Trial-averaged PSD estimate per node on the grid, ``(N, n_freq)``."""
        return self.w_final.mean(axis=0) @ self.basis.q.T

    def psd_true(self) -> np.ndarray:
        return self.basis.q @ self.w_true


def run_spectrum(scenario: SpectrumScenario, basis: BasisSet, algorithm: DiffusionAlgorithm, c,
                 n_iters: int, n_trials: int, seed: int, schedule: str = "round-robin",
                 batch: int = 50) -> SpectrumResult:
    """Estimate the transmit powers over ``n_trials`` independent trials."""
    sq, wf = [], []
    for t0 in range(0, n_trials, batch):
        trials = [SpectrumTrialData(scenario, basis, seed, t, n_iters, schedule)
                  for t in range(t0, min(t0 + batch, n_trials))]
        run = run_network(algorithm, c, BatchSource(trials), n_iters, scenario.w_at)
        sq.append(run.sq_dev)
        wf.append(run.w_final)
    return SpectrumResult(np.concatenate(sq), np.concatenate(wf), basis, scenario.w_true)
