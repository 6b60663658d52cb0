"""Dichotomous coordinate descent for the exponentially weighted normal equations.

The solver updates one coordinate at a time with power-of-two step sizes
(shift-and-add only). Additions are tallied with this rule: ``M`` per
residual update, one per solution update and one per step halving. The
``argmax`` search is not counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from .diffusion import DiffusionAlgorithm, NcParams, NonStationarityControl, bound_combine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DcdParams:
    h: float = 4.0
    mb: int = 16
    nu: int = 4

    def __post_init__(self):
        if self.h <= 0 or 2.0 ** np.round(np.log2(self.h)) != self.h:
            raise ValueError(f"amplitude range H must be a positive power of two, got {self.h}")
        if self.mb < 1:
            raise ValueError("bit budget Mb must be at least 1")
        if self.nu < 1:
            raise ValueError("Nu must be at least 1")

    def max_additions(self, m: int) -> int:
        return 2 * self.nu * m + self.mb


@numba.njit(cache=True)
def _solve(phi, r, dw, h, mb, nu):
    m = r.shape[0]
    adds = 0
    mu = h / 2.0
    y = 1
    for _ in range(nu):
        l = 0
        best = abs(r[0])
        for j in range(1, m):
            if abs(r[j]) > best:
                best = abs(r[j])
                l = j
        while abs(r[l]) <= (mu / 2.0) * phi[l, l] and y <= mb:
            y += 1
            mu /= 2.0
            adds += 1
        if y > mb:
            break
        step = mu if r[l] > 0 else -mu
        dw[l] += step
        for j in range(m):
            r[j] -= step * phi[j, l]
        adds += m + 1
    return adds


@numba.njit(cache=True)
def _solve_batch(phi, b, active, h, mb, nu, dw, r, adds):
    for k in range(b.shape[0]):
        if not active[k]:
            continue
        for j in range(b.shape[1]):
            if phi[k, j, j] <= 0.0:
                raise ValueError("DCD needs a strictly positive diagonal")
            r[k, j] = b[k, j]
            dw[k, j] = 0.0
        adds[k] = _solve(phi[k], r[k], dw[k], h, mb, nu)


def dcd_solve(phi, b, params: DcdParams):
    """Approximate ``phi^{-1} b`` by DCD iterations from a zero start.

    Accepts a single system or a batch (leading axes). Returns
    ``(dw, r, add_count)`` with the residual ``r = b - phi dw``.
    """
    phi = np.ascontiguousarray(phi, dtype=float)
    b = np.asarray(b, dtype=float)
    lead, m = b.shape[:-1], b.shape[-1]
    pf = phi.reshape(-1, m, m)
    bf = np.ascontiguousarray(b.reshape(-1, m))
    dw, r, adds = dcd_solve_masked(pf, bf, np.ones(bf.shape[0], dtype=bool), params)
    return dw.reshape(b.shape), r.reshape(b.shape), adds.reshape(lead)[()]


def dcd_solve_masked(phi, b, active, params: DcdParams):
    """Batch solver over ``(K, M, M)`` systems; inactive rows return zeros."""
    k, m = b.shape
    dw = np.zeros((k, m))
    r = np.zeros((k, m))
    adds = np.zeros(k, dtype=np.int64)
    if np.any(~np.isfinite(b[active])):
        raise ValueError("non-finite right-hand side")
    _solve_batch(phi, b, active, float(params.h), int(params.mb), int(params.nu), dw, r, adds)
    return dw, r, adds


def phi_update(phi, u, lam, shift_structured=False):
    """Correlation update ``lam phi + u u^T``.

    The shift-structured path copies the upper-left ``(M-1)x(M-1)`` block to the
    lower-right one and only recomputes the first column (mirrored to the
    first row). It matches the full update for delay-line regressors once the
    initial-condition terms have decayed.
    """
    u = np.asarray(u, dtype=float)
    if not shift_structured:
        return lam * phi + u[..., :, None] * u[..., None, :]
    out = np.empty_like(phi)
    out[..., 1:, 1:] = phi[..., :-1, :-1]
    col = lam * phi[..., :, 0] + u[..., :1] * u
    out[..., :, 0] = col
    out[..., 0, :] = col
    return out


def bound_update_dcd(xi_prev, dw_norm2, beta):
    """``beta xi + (1 - beta) |dw|^2``; the increment is already bounded by ``xi``."""
    return beta * xi_prev + (1.0 - beta) * dw_norm2


@dataclass
class DcdWorkspace:
    """Per-node DCD state: correlation matrix, residual and last increment."""

    phi: np.ndarray
    r: np.ndarray
    dw: np.ndarray
    add_count: int = 0

    @classmethod
    def fresh(cls, m, delta):
        return cls(delta * np.eye(m), np.zeros(m), np.zeros(m))


def dcd_drls_step(ws: DcdWorkspace, w_prev, u, d, lam, params: DcdParams, shift=False):
    """One DCD-dRLS adaptation at a single node; updates ``ws`` and returns ``psi``."""
    e = d - u @ w_prev
    ws.phi = phi_update(ws.phi, u, lam, shift)
    b = lam * ws.r + e * u
    ws.dw, ws.r, adds = dcd_solve(ws.phi, b, params)
    ws.add_count += int(adds)
    return w_prev + ws.dw


def dcd_rdrls_step(ws: DcdWorkspace, w_prev, u, d, lam, params: DcdParams, xi_prev, shift=False):
    """One bounded DCD adaptation at a single node.

    Returns ``(psi, kappa, dw)``; ``kappa`` flags the re-solve branch.
    """
    e = d - u @ w_prev
    ws.phi = phi_update(ws.phi, u, lam, shift)
    r_prev = ws.r
    dw, r, adds = dcd_solve(ws.phi, lam * r_prev + e * u, params)
    ws.add_count += int(adds)
    n1 = float(dw @ dw)
    kappa = n1 > xi_prev
    if kappa:
        root = np.sqrt(xi_prev)
        dw2, r, adds = dcd_solve(ws.phi, lam * r_prev + (root / np.sqrt(n1)) * e * u, params)
        ws.add_count += int(adds)
        n2 = np.sqrt(dw2 @ dw2)
        if n2 > 0:
            dw = (root / n2) * dw2
        else:
            log.info("zero DCD increment in the constrained branch; skipping update")
            dw = np.zeros_like(dw2)
    ws.dw, ws.r = dw, r
    return w_prev + dw, bool(kappa), dw


class DcdDrls(DiffusionAlgorithm):
    """DCD-dRLS over a ``(..., N)`` batch of nodes."""

    name = "dcd-drls"

    def __init__(self, lam=0.985, delta=0.01, dcd: DcdParams = DcdParams(), shift=False):
        self.lam = lam
        self.delta = delta
        self.dcd = dcd
        self.shift = shift

    def start(self, batch_shape, m, c):
        super().start(batch_shape, m, c)
        shape = self.batch_shape
        self.phi = np.broadcast_to(self.delta * np.eye(m), shape + (m, m)).copy()
        self.r = np.zeros(shape + (m,))
        self.dw = np.zeros(shape + (m,))
        self.add_count = np.zeros(shape, dtype=np.int64)
        self.kappa = np.zeros(shape, dtype=bool)

    def _solve(self, b, active=None):
        m = self.m
        k = int(np.prod(self.batch_shape))
        act = np.ones(k, dtype=bool) if active is None else active.reshape(-1)
        dw, r, adds = dcd_solve_masked(self.phi.reshape(k, m, m),
                                       np.ascontiguousarray(b.reshape(k, m)), act, self.dcd)
        self.add_count += adds.reshape(self.batch_shape)
        return dw.reshape(b.shape), r.reshape(b.shape)

    def adapt(self, i, u, d, w):
        e = d - np.einsum("...i,...i->...", u, w)
        self.phi = phi_update(self.phi, u, self.lam, self.shift)
        self.add_count[...] = 0
        self.dw, self.r = self._solve(self.lam * self.r + e[..., None] * u)
        return w + self.dw


class DcdRdrls(DcdDrls):
    """Bounded DCD-dRLS with diffused bound, optionally with NC."""

    name = "dcd-rdrls"
    bounded = True

    def __init__(self, lam=0.975, delta=0.01, beta=0.96, xi0=np.inf, dcd: DcdParams = DcdParams(),
                 shift=False, nc: NcParams | None = None):
        super().__init__(lam, delta, dcd, shift)
        self.beta = beta
        self.xi0_nodes = np.asarray(xi0, dtype=float)
        self.nc_params = nc
        if nc is not None:
            self.name = "dcd-rdrls-nc"

    def start(self, batch_shape, m, c):
        super().start(batch_shape, m, c)
        self.xi0 = np.broadcast_to(self.xi0_nodes, self.batch_shape).astype(float)
        self.xi = self.xi0.copy()
        self.zeta = self.xi0.copy()
        self.nc = None if self.nc_params is None else NonStationarityControl(
            self.nc_params, m, c, self.batch_shape)

    def adapt(self, i, u, d, w):
        e = d - np.einsum("...i,...i->...", u, w)
        self.phi = phi_update(self.phi, u, self.lam, self.shift)
        self.add_count[...] = 0
        r_prev = self.r
        dw, r = self._solve(self.lam * r_prev + e[..., None] * u)
        n1 = np.einsum("...i,...i->...", dw, dw)
        kappa = n1 > self.xi
        if kappa.any():
            root = np.sqrt(self.xi)
            with np.errstate(divide="ignore", invalid="ignore"):
                shrink = np.where(kappa, root / np.sqrt(n1), 0.0)
            dw2, r2 = self._solve(self.lam * r_prev + (shrink * e)[..., None] * u, kappa)
            n2 = np.sqrt(np.einsum("...i,...i->...", dw2, dw2))
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(n2 > 0, root / n2, 0.0)
            if np.any(kappa & (n2 == 0)):
                log.info("zero DCD increment in the constrained branch at i=%d", i)
            dw = np.where(kappa[..., None], scale[..., None] * dw2, dw)
            r = np.where(kappa[..., None], r2, r)
        self.kappa = kappa
        self.dw, self.r = dw, r
        zeta = bound_update_dcd(self.xi, np.einsum("...i,...i->...", dw, dw), self.beta)
        if self.nc is not None:
            zeta, reset = self.nc.step(i, e * e, np.einsum("...i,...i->...", u, u),
                                       self.xi, zeta, self.xi0)
            if reset.any():
                self.phi[reset] = self.delta * np.eye(self.m)
                self.r[reset] = 0.0
                self.dw[reset] = 0.0
        self.zeta = zeta
        return w + dw

    def diffuse(self):
        self.xi = bound_combine(self.zeta, self.c)
