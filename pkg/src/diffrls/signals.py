"""Input regressors, additive noise models and measurements.

Random draws are organised in independent substreams keyed by
``(trial, node, stream)`` and derived from one master seed, so any trial can
be regenerated on its own, in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

# substream identifiers
REGRESSOR = 0
NOISE = 1
CLUSTER = 2
SCHEDULE = 3
SCENARIO = 4

AR_WARMUP = 100


def substream(seed: int, trial: int, node: int, stream: int) -> np.random.Generator:
    """Independent generator for one ``(trial, node, stream)`` triple."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), int(node), int(stream)))
    return np.random.default_rng(ss)


def scenario_rng(seed: int) -> np.random.Generator:
    """Generator for experiment-level draws (topology, w^o, per-node profiles)."""
    return substream(seed, 2**31 - 1, 0, SCENARIO)


# --------------------------------------------------------------------------
# AR(2) inputs

@dataclass
class Ar2Source:
    """Scalar AR(2) process ``u(i) = a1 u(i-1) + a2 u(i-2) + eps(i)``."""

    a1: float = 1.6
    a2: float = -0.81
    innovation_var: float = 1.0
    state: list = field(default_factory=lambda: [0.0, 0.0])  # [u(i-1), u(i-2)]

    def reset(self):
        self.state = [0.0, 0.0]

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(np.roots([1.0, -self.a1, -self.a2])) < 1.0))


def ar2_next(source: Ar2Source, innovation: float) -> float:
    """Advance ``source`` by one sample driven by ``innovation``."""
    u1, u2 = source.state
    u = source.a1 * u1 + source.a2 * u2 + innovation
    source.state = [u, u1]
    return u


def ar2_filter(innovations: np.ndarray, a1: float = 1.6, a2: float = -0.81) -> np.ndarray:
    """Run the AR(2) recursion from zero state along the last axis."""
    return signal.lfilter([1.0], [1.0, -a1, -a2], innovations, axis=-1)


def ar2_autocovariance(a1: float, a2: float, innovation_var: float, n_lags: int) -> np.ndarray:
    """Stationary autocovariance ``r(0..n_lags-1)`` from the Yule-Walker equations."""
    r = np.empty(max(n_lags, 2))
    r[0] = (1.0 - a2) * innovation_var / ((1.0 + a2) * ((1.0 - a2) ** 2 - a1 ** 2))
    r[1] = a1 * r[0] / (1.0 - a2)
    for k in range(2, len(r)):
        r[k] = a1 * r[k - 1] + a2 * r[k - 2]
    return r[:n_lags]


def ar2_covariance(a1: float, a2: float, innovation_var: float, m: int) -> np.ndarray:
    """Covariance of a length-``m`` delay-line regressor over an AR(2) stream."""
    return linalg.toeplitz(ar2_autocovariance(a1, a2, innovation_var, m))


# --------------------------------------------------------------------------
# noise models

@dataclass(frozen=True)
class Gaussian:
    var: float

    def sample(self, rng, size=None):
        return np.sqrt(self.var) * rng.standard_normal(size)

    @property
    def background_var(self):
        return self.var


@dataclass(frozen=True)
class ContaminatedGaussian:
    """Background Gaussian plus Bernoulli-gated Gaussian impulses.

    Impulses have variance ``hbar * var`` and occur with probability ``pr``.
    """

    var: float
    pr: float
    hbar: float

    def __post_init__(self):
        if not 0.0 <= self.pr <= 1.0:
            raise ValueError(f"impulse probability must lie in [0, 1], got {self.pr}")
        if self.hbar < 0:
            raise ValueError(f"hbar must be non-negative, got {self.hbar}")

    @property
    def impulse_var(self):
        return self.hbar * self.var

    @property
    def background_var(self):
        return self.var

    @property
    def total_var(self):
        return self.pr * (self.hbar + 1.0) * self.var + (1.0 - self.pr) * self.var

    def sample(self, rng, size=None):
        return sample_cg(self, rng, size)


@dataclass(frozen=True)
class AlphaStable:
    """Symmetric alpha-stable law with characteristic function ``exp(-gamma |t|^alpha)``."""

    alpha: float
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def background_var(self):
        # no finite second moment for alpha < 2; treated as zero-power background
        return 2.0 * self.gamma if self.alpha == 2.0 else 0.0

    def sample(self, rng, size=None):
        return sample_alpha_stable(self, rng, size)


def sample_cg(model: ContaminatedGaussian, rng, size=None):
    """Draw ``theta + b * g`` samples from a contaminated Gaussian model."""
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    z = rng.standard_normal(shape + (2,))
    b = rng.random(shape) < model.pr
    v = np.sqrt(model.var) * z[..., 0] + b * (np.sqrt(model.impulse_var) * z[..., 1])
    return v[()] if size is None else v


def sample_alpha_stable(model: AlphaStable, rng, size=None):
    """Chambers-Mallows-Stuck draw of a symmetric alpha-stable variable.

    Skewness and location are zero and the scale is ``gamma ** (1 / alpha)``.
    """
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    uv = rng.random(shape + (2,))
    phi = np.pi * (uv[..., 0] - 0.5)
    w = -np.log1p(-uv[..., 1])
    a = model.alpha
    if a == 1.0:
        x = np.tan(phi)
    else:
        x = (np.sin(a * phi) / np.cos(phi) ** (1.0 / a)
             * (np.cos((1.0 - a) * phi) / w) ** ((1.0 - a) / a))
    x = model.gamma ** (1.0 / a) * x
    return x[()] if size is None else x


# --------------------------------------------------------------------------
# measurements

def measure(u, w_true, noise):
    """``d = u^T w_true + noise``."""
    u = np.asarray(u, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if u.shape[-1] != w_true.shape[-1]:
        raise ValueError(f"dimension mismatch: u has {u.shape[-1]}, w has {w_true.shape[-1]}")
    return u @ w_true + noise


def impulse_cluster(start: int, length: int, variance: float, rng, n_iters: int) -> np.ndarray:
    """Additive burst for iterations ``start <= i < start + length``.

    Returns an array indexed by ``i - 1`` for ``i = 1..n_iters``; entries
    outside the burst are zero.
    """
    if length <= 0:
        raise ValueError("cluster length must be positive")
    out = np.zeros(n_iters)
    lo, hi = max(start, 1), min(start + length, n_iters + 1)
    burst = np.sqrt(variance) * rng.standard_normal(length)
    if hi > lo:
        out[lo - 1:hi - 1] = burst[lo - start:hi - start]
    return out


def unit_parameter(m: int, rng) -> np.ndarray:
    """Zero-mean uniform random vector scaled to unit norm."""
    w = rng.uniform(-1.0, 1.0, size=m)
    return w / np.linalg.norm(w)


def shift_regressors(stream: np.ndarray, m: int) -> np.ndarray:
    """Delay-line regressors ``[x(i), x(i-1), ..., x(i-m+1)]`` over the last axis.

    ``stream`` of length ``L`` yields ``L - m + 1`` regressors; row ``j`` has
    newest sample ``stream[j + m - 1]``. Returned as a read-only view.
    """
    win = np.lib.stride_tricks.sliding_window_view(stream, m, axis=-1)
    return win[..., ::-1]


# --------------------------------------------------------------------------
# per-trial data

@dataclass
class Scenario:
    """Everything fixed across trials of a parameter-estimation experiment.

    ``innovation_var`` and ``noise`` are per node. The optional impulse
    cluster adds Gaussian noise of variance ``cluster_scale * sigma_y^2`` to
    every node for ``cluster_length`` iterations from ``cluster_start``.
    """

    w_true: np.ndarray
    innovation_var: np.ndarray
    noise: list
    regressor_mode: str = "shift"
    a1: float = 1.6
    a2: float = -0.81
    change_iter: int | None = None
    change_w: np.ndarray | None = None
    cluster_start: int | None = None
    cluster_length: int = 0
    cluster_scale: float = 1000.0

    def __post_init__(self):
        if self.regressor_mode not in ("shift", "iid"):
            raise ValueError(f"unknown regressor mode {self.regressor_mode!r}")
        self.w_true = np.asarray(self.w_true, dtype=float)
        self.innovation_var = np.asarray(self.innovation_var, dtype=float)
        if len(self.noise) != len(self.innovation_var):
            raise ValueError("need one noise model per node")

    @property
    def m(self) -> int:
        return self.w_true.size

    @property
    def n_nodes(self) -> int:
        return self.innovation_var.size

    def input_covariance(self, k: int) -> np.ndarray:
        if self.regressor_mode == "iid":
            return self.innovation_var[k] * np.eye(self.m)
        return ar2_covariance(self.a1, self.a2, self.innovation_var[k], self.m)

    def input_power(self) -> np.ndarray:
        """Per-entry regressor power sigma_u^2 for every node."""
        if self.regressor_mode == "iid":
            return self.innovation_var.copy()
        r0 = ar2_autocovariance(self.a1, self.a2, 1.0, 1)[0]
        return r0 * self.innovation_var

    def signal_power(self) -> np.ndarray:
        """Clean output power sigma_y^2 = w^T R_k w for every node."""
        return np.array([self.w_true @ self.input_covariance(k) @ self.w_true
                         for k in range(self.n_nodes)])

    def output_power(self) -> np.ndarray:
        """Nominal measurement power sigma_d^2 (clean output plus background noise)."""
        return self.signal_power() + np.array([nm.background_var for nm in self.noise])

    def w_at(self, i) -> np.ndarray:
        """True parameter for iteration(s) ``i``; shape ``(..., m)``."""
        i = np.asarray(i)
        w = np.broadcast_to(self.w_true, i.shape + (self.m,))
        if self.change_iter is None:
            return w.copy()
        new = self.change_w if self.change_w is not None else -self.w_true
        return np.where((i >= self.change_iter)[..., None], new, w)


class TrialData:
    """Regressors and noisy measurements for one trial, served in time blocks."""

    def __init__(self, scenario: Scenario, seed: int, trial: int, n_iters: int):
        self.scenario = sc = scenario
        self.n_iters = n_iters
        self.m, self.n_nodes = sc.m, sc.n_nodes
        n, m = sc.n_nodes, sc.m
        self._reg_rng = [substream(seed, trial, k, REGRESSOR) for k in range(n)]
        noise_rng = [substream(seed, trial, k, NOISE) for k in range(n)]
        self.noise = np.stack([sc.noise[k].sample(noise_rng[k], n_iters) for k in range(n)], axis=1)
        if sc.cluster_start is not None and sc.cluster_length > 0:
            sy2 = sc.signal_power()
            for k in range(n):
                rng = substream(seed, trial, k, CLUSTER)
                self.noise[:, k] += impulse_cluster(sc.cluster_start, sc.cluster_length,
                                                    sc.cluster_scale * sy2[k], rng, n_iters)
        if sc.regressor_mode == "shift":
            total = AR_WARMUP + n_iters + m - 1
            eps = np.stack([np.sqrt(sc.innovation_var[k]) * self._reg_rng[k].standard_normal(total)
                            for k in range(n)])
            self._stream = ar2_filter(eps, sc.a1, sc.a2)[:, AR_WARMUP:]
        self._next = 0

    def regressors(self, i0: int, i1: int) -> np.ndarray:
        """Regressors for iterations ``i0+1 .. i1`` as ``(i1 - i0, N, M)``.

        Blocks must be requested in order for iid inputs.
        """
        sc = self.scenario
        if sc.regressor_mode == "shift":
            win = shift_regressors(self._stream[:, i0:i1 + sc.m - 1], sc.m)
            return np.ascontiguousarray(win.transpose(1, 0, 2))
        if i0 != self._next:
            raise ValueError("iid regressor blocks must be drawn sequentially")
        self._next = i1
        u = [np.sqrt(sc.innovation_var[k]) * self._reg_rng[k].standard_normal((i1 - i0, sc.m))
             for k in range(sc.n_nodes)]
        return np.stack(u, axis=1)

    def block(self, i0: int, i1: int):
        """``(U, d)`` for iterations ``i0+1 .. i1``."""
        u = self.regressors(i0, i1)
        w = self.scenario.w_at(np.arange(i0 + 1, i1 + 1))
        d = np.einsum("lnm,lm->ln", u, w) + self.noise[i0:i1]
        return u, d
