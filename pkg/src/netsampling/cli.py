"""Command-line front end: ``netsampling <command> [options]``.

Every command writes its artifact plus ``<out>.manifest.json`` recording
the resolved options, seed, tool version and wall clock, so any output can
be regenerated from its manifest.

Exit codes: 0 success, 2 usage, 3 model/stability, 4 data inconsistency,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (DynamicsModel, Trajectory, check_stability, find_equilibrium,
                       integrate, read_trajectory_csv, sample_stable_model,
                       write_trajectory_csv)
from .errors import (FormatError, InfeasibleBandError, NetSamplingError,
                     ParameterError, StabilityError)
from .experiments import PRESETS, load_config, preset_path, run_sweep
from .graph import generate_network, load_network, save_network
from .sampling import (arbitrary_init_projection, build_plan, joint_recover,
                       load_plan, read_sample_csv, sample_trajectory,
                       save_plan, write_sample_csv)
from .spectral import (band_frequency_set, decompose, jacobian,
                       make_bandlimited_init, omega_for_band_size,
                       support_bandwidth)

log = logging.getLogger("netsampling")


def _write_manifest(out: Path, command: str, args: argparse.Namespace, started: float,
                    extra: dict | None = None) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    doc = {
        "command": command,
        "config": config,
        "output": str(out),
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    doc["wall_clock"] = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(doc, indent=1, default=str) + "\n",
                                            encoding="utf-8")


# -- shared option groups ----------------------------------------------------

def _model_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--network", type=Path, required=True, help="network JSON file")
    g.add_argument("--model", choices=("PD", "MAK"), type=str.upper, default="PD")
    g.add_argument("--B", type=float, help="decay rate; omit to draw stable parameters from --seed")
    g.add_argument("--R", type=float, help="coupling strength")
    g.add_argument("--R-rel", type=float, dest="R_rel",
                   help="coupling in units of B / spectral radius of the adjacency")
    g.add_argument("--F", type=float, default=0.0, help="influx (MAK only)")


def _init_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("initial deviation")
    band = g.add_mutually_exclusive_group()
    band.add_argument("--omega", type=float, help="graph bandwidth of the initial deviation")
    band.add_argument("--band-size", type=int, help="number of retained graph frequencies")
    band.add_argument("--arbitrary", action="store_true",
                      help="arbitrary (not bandlimited) initial deviation")
    amp = g.add_mutually_exclusive_group()
    amp.add_argument("--amplitude", type=float, help="2-norm of the initial deviation (default 1)")
    amp.add_argument("--amplitude-ratio", type=float,
                     help="2-norm of the initial deviation relative to the equilibrium norm")


def _resolve_model(args, net):
    """Model, equilibrium and stability report; raises on an unstable instance."""
    if args.B is None:
        if args.R is not None or args.R_rel is not None:
            raise ParameterError("--R/--R-rel need --B")
        model, eq, report = sample_stable_model(args.model, net, args.seed)
    else:
        if (args.R is None) == (args.R_rel is None):
            raise ParameterError("give exactly one of --R and --R-rel together with --B")
        R = args.R
        if R is None:
            rho = float(np.max(np.abs(np.linalg.eigvals(net.adjacency))))
            if rho == 0:
                raise ParameterError("--R-rel is undefined for an adjacency with spectral radius 0")
            R = args.R_rel * args.B / rho
        model = DynamicsModel(args.model, B=args.B, R=R, F=args.F)
        eq = find_equilibrium(model, net, np.full(net.n, model.F / model.B))
        report = check_stability(model, net, eq)
    if not report.stable:
        raise StabilityError(
            f"model is not stable at its equilibrium: max Re eigenvalue "
            f"{report.max_real_eigenvalue:.6g}, spectral margin {report.spectral_margin:.6g}")
    return model, eq, report


def _initial_deviation(args, basis, eq):
    amplitude = 1.0 if args.amplitude is None else args.amplitude
    if args.amplitude_ratio is not None:
        amplitude = args.amplitude_ratio * float(np.linalg.norm(eq))
    if args.arbitrary:
        y0 = np.random.default_rng(args.seed).standard_normal(basis.n)
        return y0 * (amplitude / np.linalg.norm(y0))
    if args.omega is not None:
        omega = args.omega
    elif args.band_size is not None:
        omega = omega_for_band_size(basis, args.band_size)
    else:
        raise ParameterError("choose --omega, --band-size or --arbitrary")
    return make_bandlimited_init(basis, omega, amplitude, args.seed)


def _horizon(basis, indices, decay: float = 1e-10) -> float:
    slowest = float(np.max(basis.eigenvalues[list(indices)].real))
    if not slowest < 0:
        raise StabilityError("a mode of the initial deviation does not decay")
    return math.log(1.0 / decay) / -slowest


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> dict:
    net = generate_network(args.n, args.p, args.seed, directed=not args.undirected)
    save_network(net, args.out)
    return {"edges": net.edge_count}


def cmd_plan(args) -> dict:
    net = load_network(args.network)
    model, eq, report = _resolve_model(args, net)
    basis = decompose(jacobian(model, net, eq))
    if args.arbitrary:
        y0 = _initial_deviation(args, basis, eq)
        budget = args.budget if args.budget is not None else args.size
        if budget is None:
            raise ParameterError("--arbitrary needs --budget")
        band = arbitrary_init_projection(basis, y0, budget).band
        omega_c = None
    else:
        if args.omega is not None:
            band = band_frequency_set(basis, args.omega)
            if not band.indices:
                raise InfeasibleBandError(f"no graph frequency lies within omega={args.omega}")
        y0 = _initial_deviation(args, basis, eq)
        omega_c, idx = support_bandwidth(basis, y0)
        band = band_frequency_set(basis, omega_c) if args.omega is None else band
    size = args.size if args.size is not None else len(band)
    y0_norm = float(np.linalg.norm(y0))
    epsilon = args.epsilon if args.epsilon is not None else args.epsilon_rel * y0_norm
    meta = {
        "network": str(args.network),
        "model": model.kind,
        "params": model.params(),
        "seed": args.seed,
        "y0": y0.tolist(),
        "horizon": _horizon(basis, basis.order if args.arbitrary else band.indices),
        "stability": report.to_dict(),
    }
    plan = build_plan(basis, eq, band, size, y0_norm=y0_norm, epsilon=epsilon,
                      fs_factor=args.fs_factor, arbitrary=args.arbitrary,
                      omega_c=omega_c, meta=meta)
    save_plan(plan, args.out)
    return {"rank_certificate": plan.rank_certificate, "Omega_c": plan.Omega_c,
            "F_s": plan.F_s}


def cmd_simulate(args) -> dict:
    net = load_network(args.network)
    if args.plan is not None:
        plan = load_plan(args.plan)
        meta = plan.meta
        try:
            model = DynamicsModel(meta["model"], **meta["params"])
            y0 = np.asarray(meta["y0"], float)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{args.plan}: plan lacks model or initial state metadata") from exc
        if y0.size != net.n:
            raise FormatError(f"{args.plan}: plan is for {y0.size} nodes, network has {net.n}")
        x0 = plan.equilibrium + y0
        # integrate on a lattice that contains every sample instant
        step = args.step if args.step is not None else 1.0 / (plan.F_s * args.substeps)
        horizon = args.horizon if args.horizon is not None else 1.2 * meta["horizon"]
    else:
        model, eq, _ = _resolve_model(args, net)
        basis = decompose(jacobian(model, net, eq))
        y0 = _initial_deviation(args, basis, eq)
        x0 = eq + y0
        if args.step is None:
            raise ParameterError("--step is required without --plan")
        if args.horizon is None:
            _, idx = support_bandwidth(basis, y0)
            horizon = _horizon(basis, idx)
        else:
            horizon = args.horizon
    n_steps = max(1, math.ceil(horizon / step - 1e-9))
    n_steps = math.ceil(n_steps / args.record_every) * args.record_every
    traj = integrate(model, net, x0, step, n_steps * step, record_every=args.record_every)
    write_trajectory_csv(traj, args.out)
    return {"steps": n_steps, "step": step}


def cmd_sample(args) -> dict:
    plan = load_plan(args.plan)
    traj = read_trajectory_csv(args.trajectory)
    F_s = plan.F_s if args.fs_factor is None else args.fs_factor * plan.Omega_c / math.pi
    if traj.n != plan.n:
        raise FormatError(f"trajectory has {traj.n} nodes, plan expects {plan.n}")
    record = sample_trajectory(traj.times, traj.states, plan, F_s)
    if not math.isclose(F_s, plan.F_s, rel_tol=1e-12):
        plan = plan.with_rate(F_s)
        save_plan(plan, f"{args.out}.plan.json")
    write_sample_csv(record, args.out, plan)
    return {"samples": int(record.values.shape[0]), "F_s": F_s}


def cmd_recover(args) -> dict:
    plan = load_plan(args.plan)
    record = read_sample_csv(args.samples, plan)
    if args.times is not None:
        times = read_trajectory_csv(args.times).times
    else:
        step = args.step if args.step is not None else 1.0 / plan.F_s
        span = args.horizon if args.horizon is not None else record.times[-1]
        times = np.arange(int(math.floor(span / step + 1e-9)) + 1) * step
    x = joint_recover(plan, record, times, x_domain=True)
    write_trajectory_csv(Trajectory(times, x), args.out)
    return {"points": int(times.size)}


def cmd_sweep(args) -> dict:
    if (args.config is None) == (args.preset is None):
        raise ParameterError("give exactly one of --config and --preset")
    config = load_config(args.config if args.config else preset_path(args.preset))
    if args.seed is not None:
        config.seed = args.seed
    result = run_sweep(config, jobs=args.jobs)
    files = result.write(args.out)
    failed = result.failed
    for c in failed:
        print(f"warning: cell F_s={c.F_s:.6g} |S|={c.S_size} failed: {c.error}", file=sys.stderr)
    args.resolved_config = config.to_dict()
    extra = {"files": [str(f) for f in files], "failed_cells": len(failed),
             "instance": result.metadata}
    if failed and len(failed) == len(result.cells):
        raise _SweepFailed(extra)
    return extra


class _SweepFailed(NetSamplingError):
    exit_code = 5

    def __init__(self, extra):
        super().__init__("every sweep cell failed")
        self.extra = extra


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netsampling",
        description="Sampling and recovery of network dynamics signals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random directed network")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True, help="edge probability")
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("plan", help="choose sampling nodes, band and rate")
    _model_options(p)
    _init_options(p)
    p.add_argument("--budget", type=int, help="retained modes for an arbitrary init")
    p.add_argument("--size", type=int, help="number of sampled nodes (default: band size)")
    eps = p.add_mutually_exclusive_group()
    eps.add_argument("--epsilon", type=float, help="absolute spectral threshold")
    eps.add_argument("--epsilon-rel", type=float, default=1e-3,
                     help="threshold relative to the initial norm (default 1e-3)")
    p.add_argument("--fs-factor", type=float, default=1.0,
                   help="sampling frequency in units of Omega_c / pi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="integrate the network dynamics")
    _model_options(p)
    _init_options(p)
    p.add_argument("--plan", type=Path, help="take model, start and step lattice from a plan")
    p.add_argument("--step", type=float)
    p.add_argument("--substeps", type=int, default=16,
                   help="integration steps per sample interval when --plan is used")
    p.add_argument("--horizon", type=float)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="read the planned nodes off a trajectory")
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--fs-factor", type=float, help="override the plan's rate (units of Omega_c / pi)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("recover", help="reconstruct the full trajectory from samples")
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--times", type=Path, help="trajectory CSV whose time column is the output grid")
    p.add_argument("--step", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("sweep", help="RMSE grid over sampling frequency and sample size")
    p.add_argument("--config", type=Path, help="YAML sweep configuration")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, help="override the configuration seed")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        extra = args.func(args)
    except _SweepFailed as exc:
        _write_manifest(args.out, args.command, args, started, exc.extra)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NetSamplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    _write_manifest(args.out, args.command, args, started, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
