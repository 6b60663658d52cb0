"""Adapt-then-combine diffusion estimators.

Node-level primitives broadcast over leading axes, so the same functions
serve a single node and a whole ``(trials, nodes)`` batch. The algorithm
classes hold per-node state for such a batch and are driven by
:func:`run_network`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ALGORITHMS = ("dlms", "dselms", "drls", "rdrls", "rdrls-nc",
              "dcd-drls", "dcd-rdrls", "dcd-rdrls-nc")


@dataclass(frozen=True)
class RdrlsParams:
    lam: float = 0.985
    delta: float = 0.01
    beta: float = 0.97
    ec: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"forgetting factor must lie in (0, 1], got {self.lam}")
        if self.delta <= 0:
            raise ValueError(f"regularization must be positive, got {self.delta}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"memory factor must lie in (0, 1), got {self.beta}")
        if self.ec <= 0:
            raise ValueError(f"E_c must be positive, got {self.ec}")


@dataclass(frozen=True)
class NcParams:
    """Non-stationarity control: window ``V_t = rho * M``, trimmed tail ``V_d``."""

    rho: float = 3.0
    tau: float = 0.96
    t_th: float = 15.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")

    def windows(self, m: int) -> tuple[int, int]:
        v_t = int(round(self.rho * m))
        v_d = int(np.floor(0.75 * v_t))
        if not 0 < v_d < v_t:
            raise ValueError(f"degenerate NC window V_t={v_t}, V_d={v_d}")
        return v_t, v_d


# --------------------------------------------------------------------------
# node-level primitives

def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _matvec(a, x):
    return np.matmul(a, x[..., None])[..., 0]


def rls_gain(P, u, lam):
    """One matrix-inversion-lemma step of the inverse correlation matrix.

    Returns ``(P_next, g)`` with ``g = P_next u``. ``P_next`` is symmetrized.
    """
    u = np.asarray(u, dtype=float)
    if not np.isfinite(u).all() or not np.isfinite(lam):
        raise ValueError("non-finite regressor or forgetting factor")
    pu = _matvec(P, u)
    denom = lam + _dot(u, pu)
    p_next = (P - pu[..., :, None] * pu[..., None, :] / denom[..., None, None]) / lam
    p_next = 0.5 * (p_next + np.swapaxes(p_next, -1, -2))
    return p_next, _matvec(p_next, u)


def rdrls_adapt(w_prev, g, e, xi_prev):
    """Bounded RLS step: the squared update norm never exceeds ``xi_prev``.

    Returns ``(psi, scale)`` where ``scale = min(sqrt(xi_prev) / (|g| |e|), 1)``.
    """
    e = np.asarray(e, dtype=float)
    den = np.sqrt(_dot(g, g)) * np.abs(e)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(xi_prev) / den
    scale = np.where(den > 0, np.minimum(ratio, 1.0), 1.0)
    return w_prev + g * scale[..., None] * e[..., None], scale


def bound_local(xi_prev, g_norm2_e2, beta):
    """Local bound update ``beta xi + (1 - beta) min(|g|^2 e^2, xi)``."""
    zeta = beta * xi_prev + (1.0 - beta) * np.minimum(g_norm2_e2, xi_prev)
    # rounding guard: the convex combination can never exceed xi_prev
    return np.minimum(zeta, xi_prev)


def bound_combine(zetas, c, k=None):
    """Neighborhood average of the side information ``zeta``.

    With ``k`` given returns node ``k``'s value, else all nodes (last axis).
    Infinite bounds propagate without producing NaN from zero weights.
    """
    zetas = np.asarray(zetas, dtype=float)
    mask = c > 0
    with np.errstate(invalid="ignore"):
        terms = np.where(mask, c * zetas[..., :, None], 0.0)
    xi = terms.sum(axis=-2)
    # rounding guard: a convex combination stays within the neighbor maximum
    top = np.where(mask, zetas[..., :, None], -np.inf).max(axis=-2)
    xi = np.minimum(xi, top)
    return xi if k is None else xi[..., k]


def combine(psis, c, k=None):
    """Convex neighborhood combination ``w_k = sum_m c[m, k] psi_m``."""
    w = np.matmul(c.T, psis)
    return w if k is None else w[..., k, :]


def dlms_adapt(w_prev, u, e, mu):
    return w_prev + mu * u * np.asarray(e, dtype=float)[..., None]


def dselms_adapt(w_prev, u, e, mu):
    return w_prev + mu * u * np.sign(np.asarray(e, dtype=float))[..., None]


def xi_init(ec, sigma_d2, sigma_u2, m):
    """Initial bound ``E_c sigma_d^2 / (M sigma_u^2)``."""
    sigma_u2 = np.asarray(sigma_u2, dtype=float)
    if np.any(sigma_u2 == 0):
        raise ValueError("input power must be non-zero")
    return ec * np.asarray(sigma_d2, dtype=float) / (m * sigma_u2)


# --------------------------------------------------------------------------
# non-stationarity control

class NonStationarityControl:
    """Windowed, outlier-trimmed change detector shared by the bounded algorithms.

    Keeps for every node a ring of the last ``V_t`` normalized squared errors
    ``e^2 / |u|^2``. At iterations that are multiples of ``V_t`` the smallest
    ``V_t - V_d`` entries feed a smoothed error power, which is averaged over
    the neighborhood and compared against the previous check.
    """

    def __init__(self, params: NcParams, m: int, c: np.ndarray, batch_shape: tuple):
        self.params = params
        self.v_t, self.v_d = params.windows(m)
        self.c = c
        self.batch_shape = tuple(batch_shape)
        k = int(np.prod(self.batch_shape))
        self.ring = np.zeros((k, self.v_t))
        self.pos = np.zeros(k, dtype=int)
        self.count = np.zeros(k, dtype=int)
        self.sigma_e2 = np.zeros(self.batch_shape)
        self.theta_old = np.zeros(self.batch_shape)
        self.theta_new = np.zeros(self.batch_shape)
        self.n_resets = 0

    def push(self, err2, u_norm2):
        err2 = np.reshape(err2, -1)
        u_norm2 = np.reshape(u_norm2, -1)
        ok = np.flatnonzero(u_norm2 > 0)
        self.ring[ok, self.pos[ok]] = err2[ok] / u_norm2[ok]
        self.pos[ok] = (self.pos[ok] + 1) % self.v_t
        self.count[ok] += 1

    def step(self, i, err2, u_norm2, xi_prev, zeta_default, xi0):
        """Record iteration ``i`` and return ``(zeta, reset_mask)``.

        Off the check cadence the default bound update passes through.
        """
        self.push(err2, u_norm2)
        no_reset = np.zeros(self.batch_shape, dtype=bool)
        if i % self.v_t != 0:
            return zeta_default, no_reset
        full = (self.count >= self.v_t).reshape(self.batch_shape)
        if not full.any():
            return zeta_default, no_reset
        tau = self.params.tau
        kept = np.sort(self.ring, axis=-1)[:, :self.v_t - self.v_d].sum(axis=-1)
        kept = kept.reshape(self.batch_shape)
        self.sigma_e2 = np.where(full, tau * self.sigma_e2 + (1.0 - tau) * kept, self.sigma_e2)
        theta = np.matmul(self.sigma_e2[..., None, :], self.c)[..., 0, :] / (self.v_t - self.v_d)
        self.theta_new = np.where(full, theta, self.theta_new)
        rise = self.theta_new - self.theta_old
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = np.where(xi_prev > 0, rise / xi_prev, np.inf)
        if np.any(full & (xi_prev <= 0)):
            log.info("NC check at i=%d with zero bound; forcing reset", i)
        reset = full & (delta > self.params.t_th)
        grow = full & ~reset & (rise > 0)
        zeta = np.where(reset, xi0, np.where(grow, xi_prev + rise, zeta_default))
        self.theta_old = np.where(full, self.theta_new, self.theta_old)
        self.n_resets += int(reset.sum())
        return zeta, reset


# --------------------------------------------------------------------------
# algorithms over a (..., N) batch of nodes

class DiffusionAlgorithm:
    """State container driven by :func:`run_network`.

    ``adapt`` consumes ``W_{i-1}`` and the node data of instant ``i`` and
    returns the intermediate estimates; ``diffuse`` runs after the combination
    step. Bounded algorithms expose ``xi`` and ``zeta``.
    """

    name = "base"
    bounded = False

    def start(self, batch_shape, m, c):
        self.c = c
        self.batch_shape = tuple(batch_shape)
        self.m = m

    def adapt(self, i, u, d, w):
        raise NotImplementedError

    def diffuse(self):
        pass


class Dlms(DiffusionAlgorithm):
    name = "dlms"

    def __init__(self, mu=0.015):
        self.mu = mu

    def adapt(self, i, u, d, w):
        e = d - _dot(u, w)
        return dlms_adapt(w, u, e, self.mu)


class Dselms(Dlms):
    name = "dselms"

    def adapt(self, i, u, d, w):
        e = d - _dot(u, w)
        return dselms_adapt(w, u, e, self.mu)


class Drls(DiffusionAlgorithm):
    name = "drls"

    def __init__(self, lam=0.985, delta=0.01):
        self.lam = lam
        self.delta = delta

    def start(self, batch_shape, m, c):
        super().start(batch_shape, m, c)
        self.P = np.broadcast_to(np.eye(m) / self.delta, self.batch_shape + (m, m)).copy()

    def adapt(self, i, u, d, w):
        e = d - _dot(u, w)
        self.P, g = rls_gain(self.P, u, self.lam)
        return w + g * e[..., None]


class Rdrls(DiffusionAlgorithm):
    """Diffusion RLS with a diffused bound on the squared update norm.

    ``xi0`` is the per-node initial bound (``np.inf`` disables the constraint).
    Passing ``nc`` enables the non-stationarity control.
    """

    name = "rdrls"
    bounded = True

    def __init__(self, params: RdrlsParams, xi0, nc: NcParams | None = None):
        self.params = params
        self.xi0_nodes = np.asarray(xi0, dtype=float)
        self.nc_params = nc
        if nc is not None:
            self.name = "rdrls-nc"

    def start(self, batch_shape, m, c):
        super().start(batch_shape, m, c)
        p = self.params
        self.P = np.broadcast_to(np.eye(m) / p.delta, self.batch_shape + (m, m)).copy()
        self.xi0 = np.broadcast_to(self.xi0_nodes, self.batch_shape).astype(float)
        self.xi = self.xi0.copy()
        self.zeta = self.xi0.copy()
        self.nc = None if self.nc_params is None else NonStationarityControl(
            self.nc_params, m, c, self.batch_shape)
        self.last_reset = np.zeros(self.batch_shape, dtype=bool)

    def adapt(self, i, u, d, w):
        p = self.params
        e = d - _dot(u, w)
        self.P, g = rls_gain(self.P, u, p.lam)
        psi, _ = rdrls_adapt(w, g, e, self.xi)
        zeta = bound_local(self.xi, _dot(g, g) * e * e, p.beta)
        if self.nc is not None:
            zeta, reset = self.nc.step(i, e * e, _dot(u, u), self.xi, zeta, self.xi0)
            if reset.any():
                self.P[reset] = np.eye(self.m) / p.delta
            self.last_reset = reset
        self.zeta = zeta
        return psi

    def diffuse(self):
        self.xi = bound_combine(self.zeta, self.c)


def make_algorithm(name, *, lam=0.985, delta=0.01, beta=0.97, mu=0.015, xi0=None,
                   nc: NcParams | None = None, ec=1.0, dcd=None, shift=False):
    """Build an algorithm from its selection string.

    ``dcd`` is a :class:`~diffrls.dcd.DcdParams` for the DCD variants and
    ``shift`` selects the shift-structured correlation update.
    """
    if name.startswith("dcd-"):
        from .dcd import DcdDrls, DcdParams, DcdRdrls
        dcd = dcd or DcdParams()
        if name == "dcd-drls":
            return DcdDrls(lam, delta, dcd, shift)
        if name in ("dcd-rdrls", "dcd-rdrls-nc"):
            if xi0 is None:
                raise ValueError(f"{name} needs an initial bound xi0")
            nc = (nc or NcParams()) if name == "dcd-rdrls-nc" else None
            return DcdRdrls(lam, delta, beta, xi0, dcd, shift, nc)
    if name == "dlms":
        return Dlms(mu)
    if name == "dselms":
        return Dselms(mu)
    if name == "drls":
        return Drls(lam, delta)
    if name in ("rdrls", "rdrls-nc"):
        if xi0 is None:
            raise ValueError(f"{name} needs an initial bound xi0")
        nc = (nc or NcParams()) if name == "rdrls-nc" else None
        return Rdrls(RdrlsParams(lam, delta, beta, ec), xi0, nc)
    raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")


# --------------------------------------------------------------------------
# simulation engine

@dataclass
class NetworkRun:
    """Per-iteration records of one batch run.

    ``sq_dev[..., i, k]`` is ``|w_true(i) - w_{k,i}|^2`` for ``i = 0..n_iters``;
    ``xi`` has the same layout and ``zeta`` starts at ``i = 1``.
    """

    sq_dev: np.ndarray
    w_final: np.ndarray
    xi: np.ndarray | None = None
    zeta: np.ndarray | None = None


class BatchSource:
    """Stack the time blocks of several independent trials along a batch axis.

    Each trial object exposes ``m``, ``n_nodes`` and ``block(i0, i1)``.
    """

    def __init__(self, trials):
        self.trials = list(trials)
        self.n_batch = len(self.trials)
        self.m = self.trials[0].m
        self.n_nodes = self.trials[0].n_nodes

    def __call__(self, i0, i1):
        blocks = [t.block(i0, i1) for t in self.trials]
        return np.stack([b[0] for b in blocks]), np.stack([b[1] for b in blocks])


def run_network(algorithm: DiffusionAlgorithm, c: np.ndarray, source: BatchSource,
                n_iters: int, w_at, *, block: int = 250, record_bounds: bool = False,
                probe=None) -> NetworkRun:
    """Two-phase diffusion loop over a batch of independent trials.

    ``source(i0, i1)`` returns ``(U, d)`` for iterations ``i0+1..i1`` shaped
    ``(B, L, N, M)`` and ``(B, L, N)``; ``w_at(i)`` gives the true parameter(s).
    ``probe(i, algorithm, u, d, w_prev, psi, w)`` is called after every
    iteration when given.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be non-negative")
    b, n, m = source.n_batch, source.n_nodes, source.m
    if c.shape != (n, n):
        raise ValueError(f"combination matrix {c.shape} does not match {n} nodes")
    algorithm.start((b, n), m, c)
    w = np.zeros((b, n, m))
    sq_dev = np.empty((b, n_iters + 1, n))
    sq_dev[:, 0] = np.sum((np.asarray(w_at(0)) - w) ** 2, axis=-1)
    xi_rec = zeta_rec = None
    if record_bounds and algorithm.bounded:
        xi_rec = np.empty((b, n_iters + 1, n))
        zeta_rec = np.empty((b, n_iters, n))
        xi_rec[:, 0] = algorithm.xi
    lo = 0
    while lo < n_iters:
        hi = min(lo + block, n_iters)
        u_blk, d_blk = source(lo, hi)
        w_blk = w_at(np.arange(lo + 1, hi + 1))
        for j in range(hi - lo):
            i = lo + j + 1
            u, d = u_blk[:, j], d_blk[:, j]
            psi = algorithm.adapt(i, u, d, w)
            w_new = combine(psi, c)
            algorithm.diffuse()
            if probe is not None:
                probe(i, algorithm, u, d, w, psi, w_new)
            w = w_new
            sq_dev[:, i] = np.sum((w_blk[j] - w) ** 2, axis=-1)
            if xi_rec is not None:
                xi_rec[:, i] = algorithm.xi
                zeta_rec[:, i - 1] = algorithm.zeta
        lo = hi
    return NetworkRun(sq_dev, w, xi_rec, zeta_rec)
