"""Mean-square evolution model, its Monte-Carlo ingredients, and complexity accounting.

The evolution model propagates the ``NM x NM`` covariance of the network
deviation vector. It is semi-analytic: the bound statistics ``E{xi_k(i)}``
and ``E{zeta_k(i)}`` come from an ensemble of simulations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, special

from .diffusion import BatchSource, RdrlsParams, Rdrls, run_network
from .signals import ContaminatedGaussian, Gaussian, Scenario, TrialData

log = logging.getLogger(__name__)

DB_FLOOR = -200.0


class McEstimate(NamedTuple):
    value: float
    stderr: float


def to_db(x, floor: float = DB_FLOOR):
    """``10 log10(x)`` with zeros (and anything below the floor) clipped to ``floor``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(x)
    return np.maximum(out, floor)


# --------------------------------------------------------------------------
# Monte-Carlo ingredients

def _whitened_draws(R, n_samples, rng):
    """Return ``R^{-1} u`` for ``u ~ N(0, R)`` as ``(n_samples, M)``.

    With ``u = L z`` and ``R = L L^T`` this is ``L^{-T} z``.
    """
    R = np.asarray(R, dtype=float)
    try:
        chol = linalg.cholesky(R, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("input covariance must be symmetric positive definite") from exc
    z = rng.standard_normal((n_samples, R.shape[0]))
    return linalg.solve_triangular(chol, z.T, lower=True, trans="T").T


def estimate_chi(R, n_samples: int = 100_000, rng=None) -> McEstimate:
    """Monte-Carlo estimate of ``E{1 / sqrt(u^T R^{-2} u)}`` for ``u ~ N(0, R)``."""
    rng = np.random.default_rng() if rng is None else rng
    x = _whitened_draws(R, n_samples, rng)
    s = 1.0 / np.sqrt(np.einsum("ij,ij->i", x, x))
    return McEstimate(float(s.mean()), float(s.std(ddof=1) / np.sqrt(n_samples)))


def varpi(W_k, R_k, pr, hbar, sigma_theta2):
    """Sign-error gain of a contaminated Gaussian error.

    ``sqrt(2/pi) [pr / sqrt(T + (hbar+1) s2) + (1-pr) / sqrt(T + s2)]`` with
    ``T = Tr(W_k R_k)``.
    """
    if sigma_theta2 <= 0:
        raise ValueError("background noise variance must be positive")
    t = float(np.sum(np.asarray(W_k) * np.asarray(R_k).T))
    t = max(t, 0.0)
    return np.sqrt(2.0 / np.pi) * (pr / np.sqrt(t + (hbar + 1.0) * sigma_theta2)
                                   + (1.0 - pr) / np.sqrt(t + sigma_theta2))


def breve_R(R, omega2, n_samples: int = 100_000, rng=None, normalized: bool = False):
    """Update covariance block ``omega2 * E{R^{-1} u u^T R^{-1} / q^p}`` with ``q = u^T R^{-2} u``.

    ``normalized=False`` uses ``p = 1/2``; ``normalized=True`` uses ``p = 1``,
    which is the second moment of a unit-norm update direction (trace one).
    """
    rng = np.random.default_rng() if rng is None else rng
    if omega2 < 0:
        raise ValueError("omega^2 must be non-negative")
    x = _whitened_draws(R, n_samples, rng)
    q = np.einsum("ij,ij->i", x, x)
    wgt = 1.0 / (q if normalized else np.sqrt(q))
    out = (x * wgt[:, None]).T @ x / n_samples
    return omega2 * 0.5 * (out + out.T)


# --------------------------------------------------------------------------
# evolution model

@dataclass
class TheoryModel:
    """State of the deviation-covariance recursion.

    ``rbreve_unit[k]`` holds the update covariance per unit ``Omega_k^2``.
    ``e_xi[i]`` and ``e_zeta[i]`` are ensemble means at iteration ``i``
    (``e_zeta[0]`` is unused).
    """

    c: np.ndarray
    R: np.ndarray
    pr: np.ndarray
    hbar: np.ndarray
    sigma_theta2: np.ndarray
    beta: float
    chi: np.ndarray
    rbreve_unit: np.ndarray
    W: np.ndarray
    e_xi: np.ndarray | None = None
    e_zeta: np.ndarray | None = None
    n_clamped: int = field(default=0)

    def __post_init__(self):
        n, m = self.R.shape[0], self.R.shape[-1]
        if self.c.shape != (n, n):
            raise ValueError(f"combination matrix {self.c.shape} does not match {n} nodes")
        if self.W.shape != (n * m, n * m):
            raise ValueError(f"W must be {n * m}x{n * m}, got {self.W.shape}")
        if self.rbreve_unit.shape != self.R.shape:
            raise ValueError("rbreve_unit must match R")

    @property
    def n_nodes(self) -> int:
        return self.R.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[-1]

    @classmethod
    def build(cls, c, R, pr, hbar, sigma_theta2, beta, w0, *, n_samples=100_000, rng=None,
              normalized=True):
        """Estimate ``chi`` and the update covariances, start from zero estimates."""
        rng = np.random.default_rng() if rng is None else rng
        R = np.asarray(R, dtype=float)
        n, m = R.shape[0], R.shape[-1]
        chi = np.array([estimate_chi(R[k], n_samples, rng).value for k in range(n)])
        unit = np.stack([breve_R(R[k], 1.0, n_samples, rng, normalized) for k in range(n)])
        w0 = np.asarray(w0, dtype=float)
        W = np.kron(np.ones((n, n)), np.outer(w0, w0))
        as_arr = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
        return cls(np.asarray(c, dtype=float), R, as_arr(pr), as_arr(hbar), as_arr(sigma_theta2),
                   float(beta), chi, unit, W)

    @classmethod
    def from_scenario(cls, scenario: Scenario, c, beta, **kw):
        """Model for a scenario with Gaussian or contaminated Gaussian noise."""
        pr, hbar, s2 = [], [], []
        for nm in scenario.noise:
            if isinstance(nm, ContaminatedGaussian):
                pr.append(nm.pr), hbar.append(nm.hbar), s2.append(nm.var)
            elif isinstance(nm, Gaussian):
                pr.append(0.0), hbar.append(0.0), s2.append(nm.var)
            else:
                raise ValueError(f"evolution model needs Gaussian-mixture noise, got {nm!r}")
        R = np.stack([scenario.input_covariance(k) for k in range(scenario.n_nodes)])
        return cls.build(c, R, pr, hbar, s2, beta, scenario.w_true, **kw)

    def node_blocks(self, W=None) -> np.ndarray:
        """Diagonal ``M x M`` blocks of ``W`` as ``(N, M, M)``."""
        n, m = self.n_nodes, self.m
        w4 = (self.W if W is None else W).reshape(n, m, n, m)
        return np.einsum("kakb->kab", w4)

    def omega(self, i: int) -> np.ndarray:
        """``sqrt((E{zeta(i)} - beta E{xi(i-1)}) / (1 - beta))``, negative radicands clamped."""
        if self.e_xi is None or self.e_zeta is None:
            raise ValueError("bound traces are not attached")
        rad = (self.e_zeta[i] - self.beta * self.e_xi[i - 1]) / (1.0 - self.beta)
        neg = rad < 0
        if neg.any():
            self.n_clamped += int(neg.sum())
            log.debug("clamped %d negative Omega radicands at i=%d", int(neg.sum()), i)
        return np.sqrt(np.where(neg, 0.0, rad))

    def gains(self) -> np.ndarray:
        """``chi_k varpi_k`` evaluated at the current ``W``."""
        blocks = self.node_blocks()
        vp = np.array([varpi(blocks[k], self.R[k], self.pr[k], self.hbar[k], self.sigma_theta2[k])
                       for k in range(self.n_nodes)])
        return self.chi * vp


def evolve_step(W, c, d, rbreve):
    """One covariance step for per-node update gains ``d`` and update blocks ``rbreve``.

    Implements ``C^T [W - W D - D W + D (W - blockdiag W) D + blockdiag rbreve] C``
    with ``D = diag(d) (x) I_M`` and ``C = c (x) I_M``, exploiting the
    Kronecker structure.
    """
    n, m = rbreve.shape[0], rbreve.shape[-1]
    w4 = W.reshape(n, m, n, m)
    dd = d[:, None] * d[None, :]
    np.fill_diagonal(dd, 0.0)  # removes the block diagonal from the D(W - W_breve)D term
    x = (w4 * (1.0 - d[None, None, :, None] - d[:, None, None, None])
         + w4 * dd[:, None, :, None])
    idx = np.arange(n)
    x[idx, :, idx, :] += rbreve
    x = np.einsum("mk,manb->kanb", c, x)
    x = np.einsum("kanb,nl->kalb", x, c)
    out = x.reshape(n * m, n * m)
    return 0.5 * (out + out.T)


def evolve_W(model: TheoryModel, i: int) -> np.ndarray:
    """Covariance ``W_i`` from ``model.W`` (``W_{i-1}``); the model is not modified."""
    om = model.omega(i)
    d = model.gains() * om
    return evolve_step(model.W, model.c, d, (om ** 2)[:, None, None] * model.rbreve_unit)


def msd_from_W(W, n_nodes: int):
    """Per-node ``Tr(W_kk)`` and network ``Tr(W) / N`` (linear)."""
    W = np.asarray(W)
    m = W.shape[0] // n_nodes
    if m * n_nodes != W.shape[0]:
        raise ValueError("W size is not a multiple of the node count")
    per = np.einsum("kaka->k", W.reshape(n_nodes, m, n_nodes, m))
    return per, float(np.trace(W) / n_nodes)


@dataclass
class TheoryTrace:
    msd_node: np.ndarray  # (n_iters + 1, N), linear
    n_clamped: int = 0

    @property
    def msd_net(self) -> np.ndarray:
        return self.msd_node.mean(axis=1)


def run_theory(model: TheoryModel, e_xi, e_zeta, n_iters: int | None = None) -> TheoryTrace:
    """Iterate the recursion from ``model.W`` driven by simulated bound traces.

    ``e_xi`` and ``e_zeta`` are ``(n+1, N)`` arrays indexed by iteration.
    """
    model.e_xi = np.asarray(e_xi, dtype=float)
    model.e_zeta = np.asarray(e_zeta, dtype=float)
    if model.e_xi.shape != model.e_zeta.shape or model.e_xi.shape[1] != model.n_nodes:
        raise ValueError("bound traces must be (n_iters + 1, N) and aligned")
    n_avail = model.e_xi.shape[0] - 1
    n_iters = n_avail if n_iters is None else n_iters
    if n_iters > n_avail:
        raise ValueError(f"traces cover {n_avail} iterations, {n_iters} requested")
    out = np.empty((n_iters + 1, model.n_nodes))
    out[0] = msd_from_W(model.W, model.n_nodes)[0]
    for i in range(1, n_iters + 1):
        model.W = evolve_W(model, i)
        out[i] = msd_from_W(model.W, model.n_nodes)[0]
    if model.n_clamped:
        log.warning("Omega radicand clamped to zero %d times", model.n_clamped)
    return TheoryTrace(out, model.n_clamped)


# --------------------------------------------------------------------------
# approximation diagnostic

def sign_expectation(e_a, pr, hbar, sigma_theta2):
    """``E{sign(e_a + v)}`` over contaminated Gaussian noise ``v`` for fixed ``e_a``."""
    s1 = np.sqrt(2.0 * (hbar + 1.0) * sigma_theta2)
    s2 = np.sqrt(2.0 * sigma_theta2)
    return pr * special.erf(e_a / s1) + (1.0 - pr) * special.erf(e_a / s2)


class DenominatorProbe:
    """Accumulates both sides of the denominator-decoupling approximation.

    Left side: ``E{w~^T R^{-1} u / sqrt(u^T R^{-2} u) sign(e)}``. Right side:
    ``chi E{w~^T R^{-1} u sign(e)}``. With ``estimator="conditional"`` the
    sign is replaced by its expectation over the noise given ``e_a = w~^T u``;
    both sides keep their expectations and lose most of their sampling noise.
    """

    def __init__(self, scenario: Scenario, chi, nodes, n_iters, estimator="conditional"):
        if estimator not in ("sign", "conditional"):
            raise ValueError(f"unknown estimator {estimator!r}")
        self.scenario = scenario
        self.nodes = np.asarray(nodes, dtype=int)
        self.chi = np.asarray(chi, dtype=float)[self.nodes]
        self.estimator = estimator
        self.rinv = np.stack([np.linalg.inv(scenario.input_covariance(k)) for k in self.nodes])
        noise = [scenario.noise[k] for k in self.nodes]
        self.pr = np.array([getattr(nm, "pr", 0.0) for nm in noise])
        self.hbar = np.array([getattr(nm, "hbar", 0.0) for nm in noise])
        self.s2 = np.array([nm.var for nm in noise])
        self.lhs = np.zeros((n_iters + 1, self.nodes.size))
        self.rhs = np.zeros((n_iters + 1, self.nodes.size))
        self.count = 0

    def __call__(self, i, alg, u, d, w_prev, psi, w_new):
        sel = self.nodes
        u_k, d_k, wp = u[:, sel], d[:, sel], w_prev[:, sel]
        wt = self.scenario.w_at(i) - wp
        ru = np.einsum("kab,tkb->tka", self.rinv, u_k)
        q = np.einsum("tka,tka->tk", ru, ru)
        e_ar = np.einsum("tka,tka->tk", wt, ru)
        if self.estimator == "sign":
            s = np.sign(d_k - np.einsum("tka,tka->tk", u_k, wp))
        else:
            e_a = np.einsum("tka,tka->tk", wt, u_k)
            s = sign_expectation(e_a, self.pr, self.hbar, self.s2)
        self.lhs[i] += np.sum(e_ar / np.sqrt(q) * s, axis=0)
        self.rhs[i] += self.chi * np.sum(e_ar * s, axis=0)

    def finish(self, n_trials):
        return self.lhs / n_trials, self.rhs / n_trials


@dataclass
class DecouplingResult:
    nodes: np.ndarray
    lhs: np.ndarray  # (n_iters + 1, len(nodes)); row 0 unused
    rhs: np.ndarray

    def relative_rms_gap(self, start: int = 500) -> np.ndarray:
        """Per-node ``rms(lhs - rhs) / rms(rhs)`` over iterations ``> start``."""
        a, b = self.lhs[start + 1:], self.rhs[start + 1:]
        return np.sqrt(np.mean((a - b) ** 2, axis=0) / np.mean(b ** 2, axis=0))


def appendix_a_check(scenario: Scenario, c, params: RdrlsParams, xi0, n_iters: int, n_trials: int,
                     seed: int, nodes=None, estimator="conditional", chi=None,
                     n_chi_samples=100_000, batch: int = 50):
    """Run R-dRLS and record both sides of the approximation per iteration.

    Returns ``(DecouplingResult, NetworkRun list)``; the runs carry bound
    traces so the same ensemble can drive :func:`run_theory`.
    """
    if scenario.regressor_mode != "iid":
        raise ValueError("the approximation diagnostic assumes iid regressors")
    nodes = np.arange(scenario.n_nodes) if nodes is None else np.asarray(nodes)
    if chi is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        chi = np.array([estimate_chi(scenario.input_covariance(k), n_chi_samples, rng).value
                        for k in range(scenario.n_nodes)])
    probe = DenominatorProbe(scenario, chi, nodes, n_iters, estimator)
    runs = []
    for t0 in range(0, n_trials, batch):
        trials = [TrialData(scenario, seed, t, n_iters) for t in range(t0, min(t0 + batch, n_trials))]
        runs.append(run_network(Rdrls(params, xi0), c, BatchSource(trials), n_iters, scenario.w_at,
                                record_bounds=True, probe=probe))
    lhs, rhs = probe.finish(n_trials)
    return DecouplingResult(nodes, lhs, rhs), runs


# --------------------------------------------------------------------------
# complexity

COMPLEXITY_ROWS = (
    ("dlms", False), ("drls", False), ("dcd-drls", False), ("dcd-drls", True),
    ("rdrls", False), ("dcd-rdrls", False), ("dcd-rdrls", True),
)


class OpCount(NamedTuple):
    multiplications: int
    additions: int
    divisions: int
    square_roots: int


def complexity_table(alg: str, m: int, n_k: int, kappa: int = 1, c_dcd_plus: int | None = None,
                     shift: bool = False, nu: int = 4, mb: int = 16) -> OpCount:
    """Per-node, per-instant operation counts.

    ``c_dcd_plus`` defaults to the DCD addition bound ``2 nu m + mb``.
    Comparisons count as additions.
    """
    if m < 1 or n_k < 1:
        raise ValueError("M and n_k must be positive")
    if kappa not in (0, 1):
        raise ValueError("kappa must be 0 or 1")
    c = 2 * nu * m + mb if c_dcd_plus is None else c_dcd_plus
    M, n, k = m, n_k, kappa
    if alg == "dlms":
        return OpCount(n * M + 2 * M + 1, n * M + M, 0, 0)
    if alg == "drls":
        return OpCount(n * M + 4 * M * M + 3 * M, n * M + 3 * M * M, M, 0)
    if alg == "dcd-drls":
        if shift:
            return OpCount(n * M + 5 * M, n * M + 3 * M + c, 0, 0)
        return OpCount(n * M + 2 * M * M + 3 * M, n * M + M * M + 2 * M + c, 0, 0)
    if alg == "rdrls":
        return OpCount(n * (M + 1) + 4 * M * M + 4 * M + 5, n * (M + 1) + 3 * M * M + M + 1, M + 1, 1)
    if alg == "dcd-rdrls":
        extra = k * (2 * M - 1 + c) + c
        if shift:
            return OpCount(n * (M + 1) + 6 * M + 3 * k * M + 2, n * (M + 1) + 4 * M + extra, 2 * k, 2 * k)
        return OpCount(n * (M + 1) + 2 * M * M + 4 * M + 3 * k * M + 2,
                       n * (M + 1) + M * M + 3 * M + extra, 2 * k, 2 * k)
    raise ValueError(f"unknown algorithm {alg!r} for the complexity table")
