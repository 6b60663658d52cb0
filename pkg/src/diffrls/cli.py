"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, harness

log = logging.getLogger("diffrls")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, trials=True):
    p.add_argument("--config", required=True, help="config file or bundled preset name (e.g. cg-noise)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    if trials:
        p.add_argument("--trials", type=int, help="override run.trials")
    p.add_argument("--iters", type=int, help="override run.iters")
    p.add_argument("--quiet", action="store_true", help="suppress progress and summaries")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffrls", description="Robust diffusion RLS experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="network MSD of the configured algorithms")
    _common(p)
    p.add_argument("--topology", help="edge-list file replacing the configured topology, "
                   "or 'random'")
    p.add_argument("--radius", type=float, help="connection radius of the random topology")

    p = sub.add_parser("spectrum", help="cooperative PSD estimation")
    _common(p)

    p = sub.add_parser("theory", help="evolution-model MSD trace")
    _common(p)
    p.add_argument("--xi-trace", help="xi_trace.csv from a previous simulation; "
                   "without it the simulation is run first")

    p = sub.add_parser("complexity", help="per-node operation counts")
    p.add_argument("--m", type=int, required=True, help="filter length M")
    p.add_argument("--nk", type=int, required=True, help="neighborhood size n_k")
    p.add_argument("--kappa", type=int, default=1, choices=(0, 1), help="re-solve flag")
    p.add_argument("--nu", type=int, default=4, help="DCD iterations Nu")
    p.add_argument("--mb", type=int, default=16, help="DCD bit budget Mb")
    p.add_argument("--c-dcd", type=int, help="DCD additions per solve (default 2 Nu M + Mb)")
    p.add_argument("--out", help="write complexity.csv here instead of stdout")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("check-appendix-a", help="denominator-decoupling diagnostic")
    _common(p)
    p.add_argument("--nodes", help="comma-separated 1-based node list (default: all)")
    p.add_argument("--estimator", choices=("conditional", "sign"), default="conditional")
    p.add_argument("--skip", type=int, default=500, help="initial iterations left out of the gap")
    return parser


def _load(args, **extra):
    return harness.load_config(harness.resolve_config_path(args.config), seed=args.seed,
                               n_trials=getattr(args, "trials", None), n_iters=args.iters, **extra)


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _progress(args):
    if args.quiet:
        return None
    return lambda label, done, total: print(f"  {label}: {done}/{total} trials", file=sys.stderr)


def cmd_simulate(args) -> int:
    extra = {}
    if args.topology:
        extra["topology_source"] = ("random" if args.topology == "random"
                                    else str(Path(args.topology).resolve()))
    if args.radius is not None:
        extra["radius"] = args.radius
    cfg = _load(args, **extra)
    if cfg.kind != "estimation":
        raise harness.ConfigError("this config describes a spectrum experiment; use 'spectrum'")
    res = harness.run_experiment(cfg, progress=_progress(args))
    out = Path(args.out)
    harness.write_msd_net(res, out / "msd_net.csv")
    harness.write_msd_node(res, out / "msd_node.csv")
    for label, alg in res.algorithms.items():
        if alg.e_xi is not None:
            name = "xi_trace.csv" if len(res.algorithms) == 1 else f"xi_trace_{label}.csv"
            harness.write_xi_trace(alg, out / name)
    for label in res.algorithms:
        _say(args, f"{label:>16s}  steady-state network MSD {res.steady_net_db(label):8.2f} dB")
    _say(args, f"{res.n_trials} trials in {res.wall_time:.1f} s -> {out}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = _load(args)
    if cfg.kind != "spectrum":
        raise harness.ConfigError("config is not a spectrum experiment (run.kind = spectrum)")
    res = harness.run_experiment(cfg, progress=_progress(args))
    out = Path(args.out)
    harness.write_msd_net(res, out / "msd_net.csv")
    harness.write_msd_node(res, out / "msd_node.csv")
    for label in res.algorithms:
        name = "psd.csv" if len(res.algorithms) == 1 else f"psd_{label}.csv"
        harness.write_psd(res, label, out / name)
        _say(args, f"{label:>16s}  steady-state network MSD {res.steady_net_db(label):8.2f} dB")
    return 0


def cmd_theory(args) -> int:
    cfg = _load(args)
    trace = None
    if args.xi_trace:
        if not Path(args.xi_trace).is_file():
            raise harness.ConfigError(f"bound trace {args.xi_trace} does not exist")
        trace = harness.read_xi_trace(args.xi_trace)
    th, run = harness.run_theory_experiment(cfg, trace)
    out = Path(args.out)
    sim = None
    if run is not None:
        alg = next(iter(run.algorithms.values()))
        sim = alg.msd_net
        harness.write_xi_trace(alg, out / "xi_trace.csv")
        harness.write_msd_net(run, out / "msd_net.csv")
    harness.write_theory(th, out / "theory.csv")
    final = analysis.to_db(th.msd_net[-1])
    _say(args, f"evolution model: final network MSD {final:.2f} dB"
         + (f" (simulation {analysis.to_db(sim[-1]):.2f} dB)" if sim is not None else ""))
    if th.n_clamped:
        _say(args, f"warning: {th.n_clamped} negative radicands clamped")
    return 0


def cmd_complexity(args) -> int:
    try:
        rows = harness.complexity_rows(args.m, args.nk, args.kappa, args.nu, args.mb, args.c_dcd)
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from exc
    if args.out:
        harness.write_complexity(rows, Path(args.out) / "complexity.csv")
    else:
        print(f"# schema_version: {harness.SCHEMA_VERSION}")
        print(",".join(harness.COMPLEXITY_HEADER))
        for r in rows:
            print(",".join(str(v) for v in r))
    return 0


def cmd_decoupling(args) -> int:
    cfg = _load(args)
    nodes = None
    if args.nodes:
        try:
            nodes = np.array([int(x) - 1 for x in args.nodes.split(",")])
        except ValueError as exc:
            raise harness.ConfigError(f"bad node list {args.nodes!r}") from exc
        if np.any(nodes < 0):
            raise harness.ConfigError("nodes are 1-based")
    res = harness.run_decoupling_check(cfg, nodes, args.estimator)
    harness.write_decoupling(res, Path(args.out) / "decoupling.csv")
    gap = res.relative_rms_gap(args.skip)
    for node, g in zip(res.nodes, gap):
        _say(args, f"node {node + 1:3d}: relative RMS gap {100 * g:6.2f} %")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "theory": cmd_theory,
    "complexity": cmd_complexity,
    "check-appendix-a": cmd_decoupling,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except harness.TrialFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
