"""Command-line interface.

Subcommands: simulate, reconstruct, benchmark, render, info. Exit codes:
0 success, 1 usage error, 2 data/configuration error, 3 solver divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import autodiff, bench, pie, ptyd
from .estimators import AdamSolver, check_dataset
from .fields import FieldError
from .metrics import MetricError
from .model import (ModelError, Propagator, PtychoGeometry,
                    ReconstructionState)
from .render import render_field
from .simulate import (NoiseSpec, SimulationError, TrajectorySpec,
                       make_probe, preset_experiment, random_phantom,
                       sector_star, synthesize, trajectory_positions)

USAGE_EXIT, DATA_EXIT, DIVERGENCE_EXIT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="ptygrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize a diffraction dataset")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=["paper", "desk"])
    src.add_argument("--config", help="JSON config file (header schema)")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--noiseless", action="store_true")
    sim.add_argument("--truth-out", help="also write the ground-truth state")

    rec = sub.add_parser("reconstruct", help="reconstruct object and probe")
    rec.add_argument("--data", required=True)
    rec.add_argument("--solver", required=True, choices=["epie", "mpie", "adam"])
    rec.add_argument("--lr", type=float, default=0.04)
    rec.add_argument("--lr-probe", type=float, help="probe learning rate (adam)")
    rec.add_argument("--batch-size", type=int, help="minibatch size (adam)")
    rec.add_argument("--epochs", type=int, default=100)
    rec.add_argument("--train-z", action="store_true")
    rec.add_argument("--z-init", type=float, help="initial distance in meters")
    rec.add_argument("--probe", help="state file providing a calibrated probe")
    rec.add_argument("--truth", help="state file with ground truth for scoring")
    rec.add_argument("--budget-seconds", type=float)
    rec.add_argument("--seed", type=int, default=0)
    rec.add_argument("--out", required=True)
    rec.add_argument("--log")

    ben = sub.add_parser("benchmark", help="compare solvers on one dataset")
    ben.add_argument("--data", required=True)
    ben.add_argument("--truth", required=True)
    ben.add_argument("--solvers", required=True,
                     help="comma list, e.g. mpie,adam:0.01,adam:0.04")
    ben.add_argument("--budget-seconds", type=float, required=True)
    ben.add_argument("--max-epochs", type=int, default=10000)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--out", required=True)

    ren = sub.add_parser("render", help="render a field to PNG")
    ren.add_argument("--in", dest="infile", required=True)
    ren.add_argument("--what", required=True,
                     choices=["object-amplitude", "object-phase", "probe-wheel"])
    ren.add_argument("--out", required=True)

    info = sub.add_parser("info", help="print the header JSON of a file")
    info.add_argument("--in", dest="infile", required=True)
    return parser


def _simulate_from_config(path: str, seed: int, noiseless: bool):
    with open(path) as fh:
        cfg = json.load(fh)
    shape = cfg.get("frame_shape", [128, 128])
    geom = PtychoGeometry(wavelength=cfg["wavelength_m"], z=cfg["z_m"],
                          detector_pitch=cfg["detector_pitch_m"],
                          object_pitch=cfg["object_pitch_m"],
                          frame_size=int(shape[0]),
                          propagator=Propagator(cfg.get("propagator",
                                                        "angular_spectrum")))
    seed = int(cfg.get("seed", seed))
    size = int(cfg.get("object_size", 2 * geom.frame_size))
    if cfg.get("phantom", "random") == "sector_star":
        phantom = sector_star(size, int(cfg.get("num_spokes", 72)),
                              float(cfg.get("inner_radius_px", 0.0)))
    else:
        phantom = random_phantom(size, seed=seed)
    diameter = cfg.get("probe_diameter_m", geom.frame_size * geom.object_pitch / 4)
    kind = cfg.get("probe_kind", "aperture")
    probe_params = {}
    if kind == "diffuse_aperture":
        probe_params = {"wavelength": geom.wavelength,
                        "defocus": float(cfg.get("probe_defocus_m", 0.0)),
                        "rng_seed": seed}
    probe = make_probe(kind, diameter, geom.frame_size, geom.object_pitch,
                       **probe_params)
    traj = TrajectorySpec(cfg.get("trajectory", "poisson_disk"),
                          float(cfg.get("overlap", 0.6)), diameter,
                          int(cfg.get("num_positions", 80)), rng_seed=seed)
    positions = trajectory_positions(traj)
    noise_cfg = cfg.get("noise", {})
    noise = None if noiseless else NoiseSpec(
        photon_scale=float(noise_cfg.get("photon_scale", 300.0)),
        gaussian_sigma=float(noise_cfg.get("gaussian_sigma", 10.0)),
        bit_depth=noise_cfg.get("bit_depth", 12), rng_seed=seed)
    meta = {"probe_diameter_m": diameter, "probe_kind": kind, "seed": seed,
            "probe_params": probe_params}
    dataset = synthesize(phantom.to_field(geom.object_pitch), probe, positions,
                         geom, noise, meta=meta)
    truth = ReconstructionState(phantom.to_field(geom.object_pitch), probe, geom.z)
    return dataset, truth


def cmd_simulate(args) -> int:
    if args.preset:
        exp = preset_experiment(args.preset, seed=args.seed,
                                noiseless=args.noiseless)
        dataset = exp.dataset
        truth = ReconstructionState(exp.truth_object, exp.probe,
                                    dataset.geometry.z)
    else:
        dataset, truth = _simulate_from_config(args.config, args.seed,
                                               args.noiseless)
    ptyd.write_dataset(dataset, args.out)
    if args.truth_out:
        ptyd.write_state(truth, dataset.geometry, args.truth_out)
    print(f"wrote {dataset.num_positions} frames to {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    dataset = check_dataset(ptyd.read_dataset(args.data))
    probe = None
    if args.probe:
        probe_state, _ = ptyd.read_state(args.probe)
        probe = probe_state.probe
    truth = None
    if args.truth:
        truth_state, _ = ptyd.read_state(args.truth)
        truth = truth_state.obj
    log = bench.ConvergenceLog()

    def observe(epoch, state, record):
        row = bench.LogRow(record.epoch, record.seconds, record.loss,
                           z_m=record.z_estimate)
        if truth is not None:
            rep = bench.score_state(state, truth, dataset)
            row.corr_abs, row.corr_amp, row.corr_phase = (rep.corr_abs,
                                                          rep.corr_amp,
                                                          rep.corr_phase)
        log.append(row)
        return False

    if args.solver == "adam":
        solver = AdamSolver(lr=args.lr, lr_probe=args.lr_probe,
                            batch_size=args.batch_size, seed=args.seed,
                            epochs=args.epochs, train_z=args.train_z,
                            budget_seconds=args.budget_seconds)
        solver.fit(dataset, probe=probe, z_init=args.z_init, callback=observe)
    else:
        if args.train_z:
            raise autodiff.AdError("--train-z is only supported by the adam solver")
        cls = bench.SOLVERS[args.solver]
        solver = cls(epochs=args.epochs, seed=args.seed,
                     budget_seconds=args.budget_seconds)
        solver.fit(dataset, probe=probe, callback=observe)
    ptyd.write_state(solver.state_, dataset.geometry, args.out)
    if args.log:
        log.write_csv(args.log)
    final = log.rows[-1] if log.rows else None
    if final is not None:
        print(f"finished after {final.epoch} epochs, loss {final.loss:.3e}")
    return 0


def cmd_benchmark(args) -> int:
    dataset = ptyd.read_dataset(args.data)
    truth_state, _ = ptyd.read_state(args.truth)
    specs = [s.strip() for s in args.solvers.split(",") if s.strip()]
    if not specs:
        raise UsageError("no solvers given")
    results = bench.run_benchmark(dataset, truth_state.obj, specs,
                                  budget_seconds=args.budget_seconds,
                                  seed=args.seed, max_epochs=args.max_epochs)
    bench.write_benchmark_csv(results, args.out)
    for spec, log in results.items():
        print(f"{spec}: |C| = {log.final():.4f} after {log.rows[-1].epoch} epochs "
              f"({log.rows[-1].wall_clock_s:.1f} s)")
    return 0


def cmd_render(args) -> int:
    state, _ = ptyd.read_state(args.infile)
    what = {"object-amplitude": (state.obj, "amplitude"),
            "object-phase": (state.obj, "phase"),
            "probe-wheel": (state.probe, "complex_wheel")}[args.what]
    render_field(what[0], what[1], args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_info(args) -> int:
    print(json.dumps(ptyd.read_header(args.infile), indent=2, sort_keys=True))
    return 0


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
            "benchmark": cmd_benchmark, "render": cmd_render, "info": cmd_info}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (autodiff.DivergenceError, pie.DivergenceError) as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return DIVERGENCE_EXIT
    except (ptyd.DataError, ModelError, FieldError, MetricError, SimulationError,
            autodiff.AdError, pie.SolverError, bench.LogError,
            OSError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT


def entrypoint() -> None:
    sys.exit(main())
