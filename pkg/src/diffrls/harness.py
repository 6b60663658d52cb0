"""Experiment configuration, trial orchestration, metrics and CSV output.

A config file is INI-style text. Sections and keys:

``[run]`` (keys may also appear before the first section)
    ``kind`` (``estimation`` or ``spectrum``), ``seed``, ``trials``, ``iters``,
    ``steady_window`` (last ``n`` iterations, or ``a, b`` inclusive),
    ``chunk`` (trials per work unit; fixes the reduction order).
``[topology]``
    ``source`` (``random`` or a path to an edge-list file, relative to the
    config), ``nodes``, ``radius``.
``[signal]``
    ``m``: filter length.
``[regressor]``
    ``mode``: ``shift`` (AR(2) delay line) or ``iid`` (white Gaussian vectors).
``[ar]``
    ``a1``, ``a2``: AR(2) coefficients.
``[input]``
    ``var``: innovation (shift) or entry (iid) variance per node.
``[noise]``
    ``kind`` (``gaussian``, ``cg`` or ``alpha-stable``), ``var``, ``pr``,
    ``impulse_to_signal`` (``sigma_g^2 / sigma_y^2``) or ``hbar``
    (``sigma_g^2 / sigma_theta^2``), ``alpha``,
    ``gamma``.
``[change]``
    ``iter``: the true parameter flips sign from this iteration on.
``[cluster]``
    ``start``, ``length``, ``scale``: burst of impulses with variance
    ``scale * sigma_y^2``.
``[spec]``
    ``m`` (number of bases), ``nc`` (scan frequencies), ``active``, ``power``,
    ``schedule`` (``round-robin`` or ``random``), ``gain`` (channel gain per node).
``[alg]`` and ``[alg.<label>]``
    ``algorithm``, ``lambda``, ``delta``, ``beta``, ``mu``, ``ec``, ``xi0``,
    ``nc.rho``, ``nc.tau``, ``nc.tth``, ``dcd.h``, ``dcd.mb``, ``dcd.nu``,
    ``dcd.shift``. ``[alg]`` holds shared defaults; every ``[alg.<label>]``
    section adds one algorithm.
``[theory]``
    ``algorithm`` (label whose bound traces drive the model), ``samples``,
    ``normalized``.

Per-node quantities (``input.var``, ``noise.var``, ``noise.pr``) accept a
scalar, a comma-separated list with one value per node, or
``uniform(a, b)``. Random draws come from the scenario generator of the
seed, in the order topology, true parameter, input variances, noise
variances, impulse probabilities.
"""

from __future__ import annotations

import configparser
import csv
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, netgraph, signals, spectrum
from .dcd import DcdParams
from .diffusion import (ALGORITHMS, BatchSource, NcParams, RdrlsParams, make_algorithm,
                        run_network, xi_init)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NOISE_KINDS = ("gaussian", "cg", "alpha-stable")

_SCHEMA = {
    "run": {"kind", "seed", "trials", "iters", "steady_window", "chunk"},
    "topology": {"source", "nodes", "radius"},
    "signal": {"m"},
    "regressor": {"mode"},
    "ar": {"a1", "a2"},
    "input": {"var"},
    "noise": {"kind", "var", "pr", "impulse_to_signal", "hbar", "alpha", "gamma"},
    "change": {"iter"},
    "cluster": {"start", "length", "scale"},
    "spec": {"m", "nc", "active", "power", "schedule", "gain"},
    "theory": {"algorithm", "samples", "normalized"},
}
_ALG_KEYS = {"algorithm", "lambda", "delta", "beta", "mu", "ec", "xi0",
             "nc.rho", "nc.tau", "nc.tth", "dcd.h", "dcd.mb", "dcd.nu", "dcd.shift"}
_UNIFORM = re.compile(r"^uniform\(\s*([^,]+),\s*([^)]+)\)$")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class TrialFailure(RuntimeError):
    """A trial raised or produced non-finite output."""

    def __init__(self, seed, trial, label, cause):
        super().__init__(f"trial {trial} (seed {seed}) of {label!r} failed: {cause}")
        self.seed, self.trial, self.label = seed, trial, label


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class AlgorithmSpec:
    """One algorithm entry of a config; ``options`` are ``make_algorithm`` keywords."""

    label: str
    name: str
    options: dict = field(default_factory=dict)
    xi0: float | None = None

    def build(self, xi0_default):
        xi0 = self.xi0 if self.xi0 is not None else xi0_default
        return make_algorithm(self.name, xi0=xi0, **self.options)


@dataclass
class ExperimentConfig:
    kind: str = "estimation"
    seed: int = 1
    n_trials: int = 50
    n_iters: int = 3000
    steady_window: int | tuple = 200
    chunk: int = 10
    topology_source: str = "random"
    n_nodes: int = 20
    radius: float = 0.33
    m: int = 16
    regressors: str = "shift"
    ar_a1: float = 1.6
    ar_a2: float = -0.81
    input_var: object = ("uniform", 0.2, 1.0)
    noise_kind: str = "gaussian"
    noise_var: object = ("uniform", 0.2, 1.0)
    noise_pr: object = ("uniform", 0.001, 0.05)
    impulse_to_signal: float | None = None
    hbar: float | None = None
    alpha: float = 1.2
    gamma: float = 2.0 / 15.0
    change_iter: int | None = None
    cluster_start: int | None = None
    cluster_length: int = 0
    cluster_scale: float = 1000.0
    spec_bases: int = 50
    spec_grid: int = 100
    spec_active: int = 8
    spec_power: float = 0.7
    spec_schedule: str = "round-robin"
    spec_gain: object = 1.0
    algorithms: list = field(default_factory=list)
    theory_algorithm: str | None = None
    theory_samples: int = 100_000
    theory_normalized: bool = True
    path: Path | None = None

    def validate(self) -> "ExperimentConfig":
        if self.kind not in ("estimation", "spectrum"):
            raise ConfigError(f"run.kind must be 'estimation' or 'spectrum', got {self.kind!r}")
        if self.n_trials < 1:
            raise ConfigError("run.trials must be at least 1")
        if self.n_iters < 0:
            raise ConfigError("run.iters must be non-negative")
        if self.chunk < 1:
            raise ConfigError("run.chunk must be at least 1")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise.kind must be one of {', '.join(NOISE_KINDS)}")
        if self.regressors not in ("shift", "iid"):
            raise ConfigError("regressor.mode must be 'shift' or 'iid'")
        if self.noise_kind == "cg" and (self.impulse_to_signal is None) == (self.hbar is None):
            raise ConfigError("cg noise needs exactly one of noise.impulse_to_signal, noise.hbar")
        if self.topology_source != "random" and not self.topology_file().is_file():
            raise ConfigError(f"topology file {self.topology_file()} does not exist")
        if self.kind == "spectrum" and self.spec_schedule not in spectrum.SCHEDULES:
            raise ConfigError(f"spec.schedule must be one of {', '.join(spectrum.SCHEDULES)}")
        if not self.algorithms:
            raise ConfigError("no algorithm sections ([alg.<label>]) in config")
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate algorithm labels")
        for a in self.algorithms:
            if a.name not in ALGORITHMS:
                raise ConfigError(f"[alg.{a.label}] unknown algorithm {a.name!r}")
        for a in self.algorithms:
            if a.options.get("shift") and (self.kind != "estimation" or self.regressors != "shift"):
                raise ConfigError(f"[alg.{a.label}] dcd.shift needs shift-structured regressors")
        if self.theory_algorithm is not None and self.theory_algorithm not in labels:
            raise ConfigError(f"theory.algorithm {self.theory_algorithm!r} is not a configured label")
        return self

    def topology_file(self) -> Path:
        p = Path(self.topology_source)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def algorithm(self, label: str) -> AlgorithmSpec:
        for a in self.algorithms:
            if a.label == label:
                return a
        raise ConfigError(f"no algorithm labelled {label!r}")


def parse_value(text: str):
    """Scalar, ``uniform(a, b)`` or comma-separated list."""
    text = text.strip()
    m = _UNIFORM.match(text)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        if not lo <= hi:
            raise ConfigError(f"uniform bounds out of order in {text!r}")
        return ("uniform", lo, hi)
    if "," in text:
        return np.array([float(x) for x in text.split(",")])
    return float(text)


def _get(sec, key, conv, default):
    if key not in sec:
        return default
    raw = sec[key]
    try:
        if conv is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {sec.name}.{key}: {raw!r}") from exc


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _window(text):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        return _int(parts[0])
    if len(parts) == 2:
        return (_int(parts[0]), _int(parts[1]))
    raise ValueError("window is 'n' or 'a, b'")


def _algorithm_spec(label, sec, base) -> AlgorithmSpec:
    merged = dict(base)
    merged.update(sec)
    unknown = set(merged) - _ALG_KEYS
    if unknown:
        raise ConfigError(f"[alg.{label}] unknown keys: {', '.join(sorted(unknown))}")
    name = merged.get("algorithm", label).strip()
    opts = {}
    try:
        if "lambda" in merged:
            opts["lam"] = float(merged["lambda"])
        for key in ("delta", "beta", "mu", "ec"):
            if key in merged:
                opts[key] = float(merged[key])
        if "dcd.shift" in merged:
            opts["shift"] = merged["dcd.shift"].strip().lower() in ("1", "true", "yes", "on")
        nc = {k[3:]: merged[k] for k in merged if k.startswith("nc.")}
        if nc:
            d = NcParams()
            opts["nc"] = NcParams(float(nc.get("rho", d.rho)), float(nc.get("tau", d.tau)),
                                  _int(nc.get("tth", d.t_th)))
        dc = {k[4:]: merged[k] for k in merged if k.startswith("dcd.") and k != "dcd.shift"}
        if dc:
            d = DcdParams()
            opts["dcd"] = DcdParams(float(dc.get("h", d.h)), _int(dc.get("mb", d.mb)),
                                    _int(dc.get("nu", d.nu)))
        xi0 = float(merged["xi0"]) if "xi0" in merged else None
    except ValueError as exc:
        raise ConfigError(f"[alg.{label}] {exc}") from exc
    return AlgorithmSpec(label, name, opts, xi0)


def parse_config(text: str, path: Path | None = None) -> ExperimentConfig:
    """Parse config text; raises :class:`ConfigError` on any problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string("[_root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    root = dict(cp["_root"])
    cp.remove_section("_root")
    if root:
        if not cp.has_section("run"):
            cp.add_section("run")
        for key, value in root.items():
            if key in cp["run"]:
                raise ConfigError(f"{key!r} given both at top level and in [run]")
            cp["run"][key] = value
    algs, base = [], {}
    if cp.has_section("alg"):
        base = dict(cp["alg"])
    for name in cp.sections():
        if name == "alg":
            continue
        if name.startswith("alg."):
            algs.append(_algorithm_spec(name[4:], dict(cp[name]), base))
            continue
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        unknown = set(cp[name]) - _SCHEMA[name]
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")

    sec = lambda n: cp[n] if cp.has_section(n) else {}
    d = ExperimentConfig()

    def g(section, key, conv, default):
        s = sec(section)
        if not s:
            return default
        return _get(s, key, conv, default)

    cfg = ExperimentConfig(
        kind=g("run", "kind", str.strip, d.kind),
        seed=g("run", "seed", _int, d.seed),
        n_trials=g("run", "trials", _int, d.n_trials),
        n_iters=g("run", "iters", _int, d.n_iters),
        steady_window=g("run", "steady_window", _window, d.steady_window),
        chunk=g("run", "chunk", _int, d.chunk),
        topology_source=g("topology", "source", str.strip, d.topology_source),
        n_nodes=g("topology", "nodes", _int, d.n_nodes),
        radius=g("topology", "radius", float, d.radius),
        m=g("signal", "m", _int, d.m),
        regressors=g("regressor", "mode", str.strip, d.regressors),
        ar_a1=g("ar", "a1", float, d.ar_a1),
        ar_a2=g("ar", "a2", float, d.ar_a2),
        input_var=g("input", "var", parse_value, d.input_var),
        noise_kind=g("noise", "kind", str.strip, d.noise_kind),
        noise_var=g("noise", "var", parse_value, d.noise_var),
        noise_pr=g("noise", "pr", parse_value, d.noise_pr),
        impulse_to_signal=g("noise", "impulse_to_signal", float, None),
        hbar=g("noise", "hbar", float, None),
        alpha=g("noise", "alpha", float, d.alpha),
        gamma=g("noise", "gamma", _fraction, d.gamma),
        change_iter=g("change", "iter", _int, None),
        cluster_start=g("cluster", "start", _int, None),
        cluster_length=g("cluster", "length", _int, 0),
        cluster_scale=g("cluster", "scale", float, d.cluster_scale),
        spec_bases=g("spec", "m", _int, d.spec_bases),
        spec_grid=g("spec", "nc", _int, d.spec_grid),
        spec_active=g("spec", "active", _int, d.spec_active),
        spec_power=g("spec", "power", float, d.spec_power),
        spec_schedule=g("spec", "schedule", str.strip, d.spec_schedule),
        spec_gain=g("spec", "gain", parse_value, d.spec_gain),
        algorithms=algs,
        theory_algorithm=g("theory", "algorithm", str.strip, None),
        theory_samples=g("theory", "samples", _int, d.theory_samples),
        theory_normalized=g("theory", "normalized", bool, d.theory_normalized),
        path=path,
    )
    return cfg.validate()


def _fraction(text):
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a config file; ``overrides`` replace fields after parsing (``None`` is ignored)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cfg = parse_config(path.read_text(), path.resolve())
    for key, value in overrides.items():
        if value is not None:
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown override {key!r}")
            setattr(cfg, key, value)
    return cfg.validate()


def preset_path(name: str) -> Path:
    """Path of a bundled config (``cg-noise`` or ``cg-noise.cfg``)."""
    here = Path(__file__).parent / "configs"
    p = here / (name if name.endswith(".cfg") else name + ".cfg")
    if not p.is_file():
        raise ConfigError(f"no bundled config {name!r}")
    return p


def resolve_config_path(name) -> Path:
    """An existing file path, else a bundled config name."""
    p = Path(name)
    return p if p.is_file() else preset_path(str(name))


# --------------------------------------------------------------------------
# scenario construction

@dataclass
class Setup:
    """Realized scenario shared by all trials of an experiment."""

    topology: netgraph.Topology
    c: np.ndarray
    scenario: object
    xi0: np.ndarray
    basis: spectrum.BasisSet | None = None


def _per_node(value, n, rng, what):
    if isinstance(value, tuple):
        return rng.uniform(value[1], value[2], n)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{what} lists {arr.size} values for {n} nodes")
    return arr.copy()


def build_setup(cfg: ExperimentConfig) -> Setup:
    rng = signals.scenario_rng(cfg.seed)
    if cfg.topology_source == "random":
        topo, _ = netgraph.random_geometric(cfg.n_nodes, cfg.radius, rng)
    else:
        try:
            topo = netgraph.read_topology(cfg.topology_file())
        except ValueError as exc:
            raise ConfigError(f"bad topology file: {exc}") from exc
    n = topo.n_nodes
    c = netgraph.build_metropolis(topo)
    if cfg.kind == "spectrum":
        w = spectrum.sparse_spectrum(cfg.spec_bases, cfg.spec_active, cfg.spec_power, rng)
        basis = spectrum.build_rect_basis(cfg.spec_bases, cfg.spec_grid)
        noise = _noise_models(cfg, n, rng, None)
        gain = _per_node(cfg.spec_gain, n, rng, "spec.gain")
        return Setup(topo, c, spectrum.SpectrumScenario(w, noise, gain), np.ones(n), basis)
    w = signals.unit_parameter(cfg.m, rng)
    ivar = _per_node(cfg.input_var, n, rng, "input.var")
    probe = signals.Scenario(w, ivar, [signals.Gaussian(1.0)] * n, cfg.regressors,
                             cfg.ar_a1, cfg.ar_a2)
    noise = _noise_models(cfg, n, rng, probe.signal_power())
    sc = signals.Scenario(w, ivar, noise, cfg.regressors, cfg.ar_a1, cfg.ar_a2,
                          change_iter=cfg.change_iter, cluster_start=cfg.cluster_start,
                          cluster_length=cfg.cluster_length, cluster_scale=cfg.cluster_scale)
    xi0 = xi_init(1.0, sc.output_power(), sc.input_power(), cfg.m)
    return Setup(topo, c, sc, xi0)


def _noise_models(cfg, n, rng, sy2):
    if cfg.noise_kind == "alpha-stable":
        return [signals.AlphaStable(cfg.alpha, cfg.gamma) for _ in range(n)]
    var = _per_node(cfg.noise_var, n, rng, "noise.var")
    if cfg.noise_kind == "gaussian":
        return [signals.Gaussian(v) for v in var]
    pr = _per_node(cfg.noise_pr, n, rng, "noise.pr")
    if cfg.hbar is not None:
        hbar = np.full(n, cfg.hbar)
    else:
        if sy2 is None:
            raise ConfigError("noise.impulse_to_signal needs a signal model")
        hbar = cfg.impulse_to_signal * sy2 / var
    return [signals.ContaminatedGaussian(var[k], pr[k], hbar[k]) for k in range(n)]


def initial_bound(spec: AlgorithmSpec, setup: Setup) -> np.ndarray:
    """``xi0`` of the config, else ``E_c`` times the default bound for the scenario."""
    if spec.xi0 is not None:
        return np.full(setup.c.shape[0], spec.xi0)
    return spec.options.get("ec", 1.0) * setup.xi0


# --------------------------------------------------------------------------
# running

@dataclass
class AlgorithmResult:
    label: str
    name: str
    msd_node: np.ndarray           # (n_iters + 1, N), linear, ensemble mean
    w_final: np.ndarray            # (trials, N, M)
    e_xi: np.ndarray | None = None  # (n_iters + 1, N)
    e_zeta: np.ndarray | None = None
    trial_sq_dev: np.ndarray | None = None  # (trials, n_iters + 1, N) when kept

    @property
    def msd_net(self) -> np.ndarray:
        return self.msd_node.mean(axis=1)


@dataclass
class RunResult:
    config: ExperimentConfig
    setup: Setup
    algorithms: dict
    trial_seeds: list
    n_trials: int
    wall_time: float
    chunk_times: list

    def __getitem__(self, label) -> AlgorithmResult:
        return self.algorithms[label]

    def steady_node_db(self, label) -> np.ndarray:
        return steady_state_msd(self.algorithms[label].msd_node, self.config.steady_window)

    def steady_net_db(self, label) -> float:
        return float(steady_state_msd(self.algorithms[label].msd_net, self.config.steady_window))


def _trial_objects(cfg, setup, t0, t1):
    if cfg.kind == "spectrum":
        return [spectrum.SpectrumTrialData(setup.scenario, setup.basis, cfg.seed, t, cfg.n_iters,
                                           cfg.spec_schedule) for t in range(t0, t1)]
    return [signals.TrialData(setup.scenario, cfg.seed, t, cfg.n_iters) for t in range(t0, t1)]


def _run_trials(cfg, setup, spec, t0, t1, record):
    alg = spec.build(initial_bound(spec, setup))
    src = BatchSource(_trial_objects(cfg, setup, t0, t1))
    run = run_network(alg, setup.c, src, cfg.n_iters, setup.scenario.w_at,
                      record_bounds=record)
    if not np.all(np.isfinite(run.sq_dev)):
        bad = int(np.flatnonzero(~np.isfinite(run.sq_dev).all(axis=(1, 2)))[0])
        raise FloatingPointError(f"non-finite deviation in trial {t0 + bad}")
    return run


def _run_chunk(job):
    cfg, setup, spec, t0, t1, keep = job
    start = time.perf_counter()
    record = spec.name in ("rdrls", "rdrls-nc", "dcd-rdrls", "dcd-rdrls-nc")
    try:
        run = _run_trials(cfg, setup, spec, t0, t1, record)
    except Exception as exc:  # locate the failing trial
        for t in range(t0, t1):
            try:
                _run_trials(cfg, setup, spec, t, t + 1, record)
            except Exception as inner:
                raise TrialFailure(cfg.seed, t, spec.label, inner) from inner
        raise TrialFailure(cfg.seed, t0, spec.label, exc) from exc
    out = {
        "sq": run.sq_dev.sum(axis=0),
        "w": run.w_final,
        "xi": None if run.xi is None else run.xi.sum(axis=0),
        "zeta": None if run.zeta is None else run.zeta.sum(axis=0),
        "trials": run.sq_dev if keep else None,
        "time": time.perf_counter() - start,
    }
    return out


def worker_count(n_jobs: int) -> int:
    """Workers allowed by ``DIFFNET_THREADS`` (default: CPU count), at most ``n_jobs``."""
    env = os.environ.get("DIFFNET_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer DIFFNET_THREADS=%r", env)
    return max(1, min(cap, n_jobs))


def run_experiment(cfg: ExperimentConfig, *, keep_trials: bool = False, workers: int | None = None,
                   labels=None, progress=None) -> RunResult:
    """Run every configured algorithm over ``cfg.n_trials`` trials.

    Trials are split into chunks of ``cfg.chunk``; chunk sums are reduced in
    ascending trial order, so outputs do not depend on the worker count.
    """
    cfg.validate()
    setup = build_setup(cfg)
    specs = [a for a in cfg.algorithms if labels is None or a.label in labels]
    bounds = [(t0, min(t0 + cfg.chunk, cfg.n_trials)) for t0 in range(0, cfg.n_trials, cfg.chunk)]
    jobs = [(cfg, setup, s, t0, t1, keep_trials) for s in specs for t0, t1 in bounds]
    n_workers = worker_count(len(jobs)) if workers is None else max(1, min(workers, len(jobs)))
    start = time.perf_counter()
    if n_workers == 1:
        outs = []
        for j in jobs:
            outs.append(_run_chunk(j))
            if progress:
                progress(j[2].label, j[4], cfg.n_trials)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outs = list(pool.map(_run_chunk, jobs))
    wall = time.perf_counter() - start

    results, per = {}, len(bounds)
    for a, spec in enumerate(specs):
        chunk_outs = outs[a * per:(a + 1) * per]
        sq = _ordered_sum([o["sq"] for o in chunk_outs])
        xi = _ordered_sum([o["xi"] for o in chunk_outs])
        zeta = _ordered_sum([o["zeta"] for o in chunk_outs])
        n = cfg.n_trials
        e_zeta = None
        if zeta is not None:
            e_zeta = np.vstack([np.full((1, zeta.shape[1]), np.nan), zeta / n])
        results[spec.label] = AlgorithmResult(
            spec.label, spec.name, sq / n, np.concatenate([o["w"] for o in chunk_outs]),
            None if xi is None else xi / n, e_zeta,
            np.concatenate([o["trials"] for o in chunk_outs]) if keep_trials else None)
    return RunResult(cfg, setup, results, [(cfg.seed, t) for t in range(cfg.n_trials)],
                     cfg.n_trials, wall, [o["time"] for o in outs])


def _ordered_sum(parts):
    if parts[0] is None:
        return None
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total


# --------------------------------------------------------------------------
# metrics

def steady_state_msd(trace, window):
    """Linear mean over a window of a linear MSD trace, returned in dB.

    ``trace`` is indexed by iteration (row 0 is ``i = 0``) and may carry a
    trailing node axis. ``window`` is either the number of final iterations
    or an inclusive ``(first, last)`` iteration pair.
    """
    trace = np.asarray(trace, dtype=float)
    n_iters = trace.shape[0] - 1
    if isinstance(window, (tuple, list)):
        first, last = int(window[0]), int(window[1])
    else:
        first, last = n_iters - int(window) + 1, n_iters
    if last < first:
        raise ValueError("empty steady-state window")
    if first < 0 or last > n_iters:
        raise ValueError(f"window [{first}, {last}] lies outside iterations 0..{n_iters}")
    return analysis.to_db(trace[first:last + 1].mean(axis=0))


# --------------------------------------------------------------------------
# CSV output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if np.isnan(x) else f"{x:.10g}"


def write_csv(path, header, rows) -> Path:
    """CSV with a ``# schema_version`` comment line, then ``header`` and ``rows``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return path


def read_csv(path):
    """Header and rows of a file written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def write_msd_net(result: RunResult, path) -> Path:
    """``iter, msd_db`` for one algorithm; one dB column per label otherwise."""
    labels = list(result.algorithms)
    header = ["iter", "msd_db"] if len(labels) == 1 else ["iter"] + labels
    cols = [analysis.to_db(result[lb].msd_net) for lb in labels]
    n = cols[0].size
    return write_csv(path, header, ([i] + [c[i] for c in cols] for i in range(n)))


def write_msd_node(result: RunResult, path) -> Path:
    """``node, steady_msd_db`` (1-based nodes); one column per label for several algorithms."""
    labels = list(result.algorithms)
    header = ["node", "steady_msd_db"] if len(labels) == 1 else ["node"] + labels
    cols = [result.steady_node_db(lb) for lb in labels]
    return write_csv(path, header, ([k + 1] + [c[k] for c in cols] for k in range(cols[0].size)))


def write_xi_trace(alg: AlgorithmResult, path) -> Path:
    """Ensemble-mean bounds as ``iter, node, e_xi, e_zeta`` (``e_zeta`` is nan at ``iter 0``)."""
    if alg.e_xi is None:
        raise ValueError(f"{alg.label!r} has no bound traces")
    n1, nn = alg.e_xi.shape
    rows = ((i, k + 1, alg.e_xi[i, k], alg.e_zeta[i, k]) for i in range(n1) for k in range(nn))
    return write_csv(path, ["iter", "node", "e_xi", "e_zeta"], rows)


def read_xi_trace(path):
    """``(e_xi, e_zeta)`` as ``(n_iters + 1, N)`` arrays from an ``xi_trace.csv``."""
    header, rows = read_csv(path)
    if header != ["iter", "node", "e_xi", "e_zeta"]:
        raise ConfigError(f"{path}: expected columns iter,node,e_xi,e_zeta, got {','.join(header)}")
    data = np.array(rows, dtype=float)
    it, node = data[:, 0].astype(int), data[:, 1].astype(int) - 1
    n1, nn = it.max() + 1, node.max() + 1
    if data.shape[0] != n1 * nn:
        raise ConfigError(f"{path}: incomplete trace")
    e_xi = np.empty((n1, nn))
    e_zeta = np.empty((n1, nn))
    e_xi[it, node] = data[:, 2]
    e_zeta[it, node] = data[:, 3]
    return e_xi, e_zeta


def write_theory(trace: analysis.TheoryTrace, path) -> Path:
    """``iter, node, msd_db, msd_net_db`` with 1-based nodes."""
    node = analysis.to_db(trace.msd_node)
    net = analysis.to_db(trace.msd_net)
    n1, nn = node.shape
    rows = ((i, k + 1, node[i, k], net[i]) for i in range(n1) for k in range(nn))
    return write_csv(path, ["iter", "node", "msd_db", "msd_net_db"], rows)


def complexity_rows(m, n_k, kappa=1, nu=4, mb=16, c_dcd_plus=None):
    rows = []
    for alg, shift in analysis.COMPLEXITY_ROWS:
        oc = analysis.complexity_table(alg, m, n_k, kappa, c_dcd_plus, shift, nu, mb)
        rows.append((alg, "shift" if shift else "general", *oc))
    return rows


COMPLEXITY_HEADER = ["algorithm", "phi_update", "multiplications", "additions", "divisions",
                     "square_roots"]


def write_complexity(rows, path) -> Path:
    return write_csv(path, COMPLEXITY_HEADER, rows)


def write_psd(result: RunResult, label: str, path) -> Path:
    """``freq, true_psd, node, est_psd`` on the scan grid, 1-based nodes."""
    basis = result.setup.basis
    alg = result[label]
    est = alg.w_final.mean(axis=0) @ basis.q.T
    true = basis.q @ result.setup.scenario.w_true
    rows = ((basis.grid[j], true[j], k + 1, est[k, j])
            for k in range(est.shape[0]) for j in range(basis.n_freq))
    return write_csv(path, ["freq", "true_psd", "node", "est_psd"], rows)


def write_decoupling(res: analysis.DecouplingResult, path) -> Path:
    """``iter, node, lhs, rhs`` for the monitored nodes (1-based), from ``iter 1``."""
    n1 = res.lhs.shape[0]
    rows = ((i, int(node) + 1, res.lhs[i, j], res.rhs[i, j])
            for i in range(1, n1) for j, node in enumerate(res.nodes))
    return write_csv(path, ["iter", "node", "lhs", "rhs"], rows)


# --------------------------------------------------------------------------
# theory and diagnostic drivers

def theory_algorithm(cfg: ExperimentConfig) -> AlgorithmSpec:
    if cfg.theory_algorithm is not None:
        spec = cfg.algorithm(cfg.theory_algorithm)
    else:
        cands = [a for a in cfg.algorithms if a.name == "rdrls"]
        if not cands:
            raise ConfigError("theory needs an 'rdrls' algorithm (or theory.algorithm)")
        spec = cands[0]
    if spec.name != "rdrls":
        raise ConfigError("the evolution model describes rdrls without NC")
    return spec


def theory_model(cfg: ExperimentConfig, setup: Setup | None = None) -> analysis.TheoryModel:
    setup = build_setup(cfg) if setup is None else setup
    if cfg.kind != "estimation":
        raise ConfigError("the evolution model applies to estimation experiments")
    spec = theory_algorithm(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2 ** 31 - 2,)))
    try:
        return analysis.TheoryModel.from_scenario(
            setup.scenario, setup.c, spec.options.get("beta", 0.97), n_samples=cfg.theory_samples,
            rng=rng, normalized=cfg.theory_normalized)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_theory_experiment(cfg: ExperimentConfig, xi_trace=None):
    """Evolution-model trace plus, without ``xi_trace``, the simulation feeding it.

    Returns ``(TheoryTrace, RunResult | None)``.
    """
    setup = build_setup(cfg)
    spec = theory_algorithm(cfg)
    run = None
    if xi_trace is None:
        run = run_experiment(cfg, labels=[spec.label])
        e_xi, e_zeta = run[spec.label].e_xi, run[spec.label].e_zeta
    else:
        e_xi, e_zeta = xi_trace
    if e_xi.shape[1] != setup.c.shape[0]:
        raise ConfigError(f"bound trace has {e_xi.shape[1]} nodes, network has {setup.c.shape[0]}")
    model = theory_model(cfg, setup)
    return analysis.run_theory(model, e_xi, e_zeta), run


def run_decoupling_check(cfg: ExperimentConfig, nodes=None, estimator="conditional"):
    """Approximation diagnostic for the config's R-dRLS entry."""
    setup = build_setup(cfg)
    spec = theory_algorithm(cfg)
    o = spec.options
    params = RdrlsParams(o.get("lam", 0.985), o.get("delta", 0.01), o.get("beta", 0.97),
                         o.get("ec", 1.0))
    try:
        res, _ = analysis.appendix_a_check(setup.scenario, setup.c, params,
                                           initial_bound(spec, setup), cfg.n_iters, cfg.n_trials,
                                           cfg.seed, nodes, estimator,
                                           n_chi_samples=cfg.theory_samples, batch=cfg.chunk)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return res
