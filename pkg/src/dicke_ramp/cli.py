"""Command-line entry point.

Subcommands: gap, evolve, sweep, compare, scaling, robustness, measure.
Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
failure; errors are emitted as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import io
from .dynamics import (
    BangBangSchedule,
    ConstantSchedule,
    PropagateOptions,
    PropagationError,
    RampError,
    ThermalEnsemble,
    la_schedule,
    propagate,
    propagate_thermal,
)
from .io import ConfigError
from .metrology import (
    abs_sz_expectation,
    coherence_extremal,
    fidelity_to_cat,
    qfi,
    spin_distribution,
)
from .model import KHZ, ParamsError, fock_x_state
from .protocols import (
    SweepGrid,
    compare_protocols,
    longitudinal_robustness,
    scaling_study,
    sweep_bang_bang,
)
from .spectral import EigensolverError, gap_scan, parity_of

TRAJECTORY_HEADER = ["t_ms", "bx_khz", "sx", "sy", "sz", "abs_sz", "parity",
                     "nph", "energy_khz", "fidelity", "qfi"]
SWEEP_HEADER = ["b_hold_over_j", "b_hold_khz", "t_hold_ms", "fidelity",
                "abs_sz_over_n", "qfi"]


def add_param_flags(sub):
    sub.add_argument("--params", help="JSON parameter file")
    sub.add_argument("--preset", help="named parameter preset (e.g. fig3)")
    sub.add_argument("--n-spins", type=int, dest="n_spins")
    sub.add_argument("--g-khz", type=float, dest="g_khz")
    sub.add_argument("--delta-khz", type=float, dest="delta_khz")
    sub.add_argument("--bx0-khz", type=float, dest="bx0_khz")
    sub.add_argument("--bz-khz", type=float, dest="bz_khz")
    sub.add_argument("--gamma-per-s", type=float, dest="gamma_per_s")
    sub.add_argument("--nbar", type=float, dest="nbar")
    sub.add_argument("--n-max", dest="n_max",
                     help="Fock truncation, integer or 'auto'")


def config_from_args(args, strict=True) -> io.RunConfig:
    overrides = {key: getattr(args, key, None) for key in io.PARAM_KEYS}
    if overrides.get("n_max") not in (None, "auto"):
        overrides["n_max"] = int(overrides["n_max"])
    return io.parse_and_validate(config_path=args.params, overrides=overrides,
                                 preset=args.preset, strict=strict)


def float_list(text):
    return [float(x) for x in text.split(",") if x.strip() != ""]


def linspace_spec(text):
    """min,max,count specification for a grid axis."""
    parts = float_list(text)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected min,max,count")
    return np.linspace(parts[0], parts[1], int(parts[2]))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dicke-ramp",
        description="Ground-state preparation ramps for collective spins "
                    "coupled to a boson mode")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("DICKE_RAMP_THREADS",
                                                   os.cpu_count() or 1)),
                        help="worker cap for scans and ensembles")
    parser.add_argument("--timing", action="store_true",
                        help="record wall time in the JSON sidecar "
                             "(off by default to keep outputs byte-identical)")
    subs = parser.add_subparsers(dest="command", required=True)

    gap = subs.add_parser("gap", help="sector gap and ground energy vs field")
    add_param_flags(gap)
    gap.add_argument("--samples", type=int, default=400)
    gap.add_argument("--b-max-khz", type=float, default=None)
    gap.add_argument("--out", required=True)

    ev = subs.add_parser("evolve", help="propagate one schedule")
    add_param_flags(ev)
    ev.add_argument("--bang-bang", metavar="BHOLD_KHZ,THOLD_MS[,BFINAL_KHZ]")
    ev.add_argument("--la", type=float, metavar="TAU_MS")
    ev.add_argument("--constant", type=float, metavar="BX_KHZ")
    ev.add_argument("--duration-ms", type=float, default=2.0)
    ev.add_argument("--schedule", help="JSON schedule file")
    ev.add_argument("--qfi", action="store_true")
    ev.add_argument("--dt", type=float, default=None)
    ev.add_argument("--n-output", type=int, default=200)
    ev.add_argument("--save-state", help="write the final state as JSON")
    ev.add_argument("--out", required=True)

    sw = subs.add_parser("sweep", help="bang-bang (b_hold, t_hold) grid")
    add_param_flags(sw)
    sw.add_argument("--b-hold-over-j", type=linspace_spec,
                    default=np.linspace(0.05, 1.0, 20))
    sw.add_argument("--t-hold-ms", type=linspace_spec,
                    default=np.linspace(0.05, 2.0, 40))
    sw.add_argument("--qfi", action="store_true")
    sw.add_argument("--resume", action="store_true",
                    help="reuse finished cells from an existing output file")
    sw.add_argument("--out", required=True)

    cp = subs.add_parser("compare", help="optimal bang-bang vs LA per ramp time")
    add_param_flags(cp)
    cp.add_argument("--taus", type=float_list, required=True, metavar="MS,MS,...")
    cp.add_argument("--out", required=True)

    sc = subs.add_parser("scaling", help="fidelity and QFI vs system size")
    add_param_flags(sc)
    sc.add_argument("--n-values", type=lambda s: [int(x) for x in s.split(",")],
                    required=True)
    sc.add_argument("--taus", type=float_list, required=True)
    sc.add_argument("--dim-cap", type=int, default=60000)
    sc.add_argument("--out", required=True)

    rb = subs.add_parser("robustness", help="cat coherence vs longitudinal field")
    add_param_flags(rb)
    rb.add_argument("--bz-values-khz", type=float_list, required=True,
                    metavar="KHZ,KHZ,...")
    rb.add_argument("--la-tau", type=float, default=2.0)
    rb.add_argument("--bb-t-hold", type=float, default=0.485)
    rb.add_argument("--bb-b-hold-khz", type=float, default=None)
    rb.add_argument("--out", required=True)

    ms = subs.add_parser("measure", help="metrics of a serialized state")
    add_param_flags(ms)
    ms.add_argument("--state", required=True)
    ms.add_argument("--distribution", help="also write P(m) CSV here")
    ms.add_argument("--axis", default="z", choices=["x", "y", "z"])
    ms.add_argument("--out", help="JSON output path (default stdout)")

    return parser


def cmd_gap(args, cfg):
    table = gap_scan(cfg.params, n_samples=args.samples,
                     b_max=None if args.b_max_khz is None else KHZ * args.b_max_khz,
                     workers=args.threads)
    rows = [(b / KHZ, g / KHZ, e / KHZ, int(p))
            for b, g, e, p in zip(table.b_values, table.gaps,
                                  table.ground_energies, table.parities)]
    io.write_csv(args.out, ["b_x_khz", "gap_khz", "ground_energy_khz", "parity"], rows)
    k = int(np.argmin(table.gaps))
    return {"min_gap_khz": float(table.gaps[k] / KHZ),
            "b_at_min_gap_khz": float(table.b_values[k] / KHZ),
            "samples": args.samples}


def make_schedule(args, cfg):
    chosen = [x is not None for x in
              (args.bang_bang, args.la, args.constant, args.schedule)]
    if sum(chosen) != 1:
        raise ConfigError(["exactly one of --bang-bang, --la, --constant, "
                           "--schedule is required"])
    if args.bang_bang is not None:
        parts = float_list(args.bang_bang)
        if len(parts) not in (2, 3):
            raise ConfigError(["--bang-bang expects bhold_khz,thold_ms[,bfinal_khz]"])
        b_final = KHZ * parts[2] if len(parts) == 3 else 0.0
        return BangBangSchedule(b_hold=KHZ * parts[0], t_hold=parts[1],
                                b_final=b_final)
    if args.la is not None:
        return la_schedule(cfg.params, args.la, workers=args.threads)
    if args.constant is not None:
        return ConstantSchedule(b_x=KHZ * args.constant, t_total=args.duration_ms)
    return io.load_schedule(args.schedule, cfg.params)


def trajectory_rows(traj):
    n = len(traj.times)
    qfi_col = traj.qfi if traj.qfi is not None else [None] * n
    for k in range(n):
        yield (traj.times[k], traj.bx[k] / KHZ, traj.sx[k], traj.sy[k],
               traj.sz[k], traj.abs_sz[k], traj.parity[k], traj.nph[k],
               traj.energy[k] / KHZ, traj.fidelity[k], qfi_col[k])


def cmd_evolve(args, cfg):
    schedule = make_schedule(args, cfg)
    opts = PropagateOptions(dt=args.dt, n_output=args.n_output,
                            compute_qfi=args.qfi)
    ensemble = ThermalEnsemble.from_nbar(cfg.params.nbar)
    if len(ensemble.weights) == 1:
        traj = propagate(fock_x_state(cfg.params, 0), cfg.params, schedule, opts)
    else:
        traj = propagate_thermal(ensemble, cfg.params, schedule, opts,
                                 workers=args.threads)
    io.write_csv(args.out, TRAJECTORY_HEADER, trajectory_rows(traj))
    if args.save_state:
        if traj.final_state is None:
            raise ConfigError(["--save-state requires vacuum initial phonons "
                               "(thermal runs have no single final state)"])
        io.save_state(args.save_state, traj.final_state)
    k = int(np.argmax(traj.abs_sz))
    return {"schedule": schedule.kind, "duration_ms": schedule.duration,
            "final_fidelity": float(traj.fidelity[-1]),
            "peak_abs_sz_over_n": float(traj.abs_sz[k] / cfg.params.n_spins),
            "t_peak_abs_sz_ms": float(traj.times[k]),
            "norm_drift": traj.norm_drift}


def cmd_sweep(args, cfg):
    grid = SweepGrid(b_hold_values=args.b_hold_over_j * cfg.params.j_coupling,
                     t_hold_values=np.asarray(args.t_hold_ms))
    n_t = len(grid.t_hold_values)
    completed = {}
    if args.resume and os.path.exists(args.out):
        with open(args.out) as fh:
            lines = fh.read().splitlines()
        for idx, line in enumerate(lines[1:]):
            cells = line.split(",")
            i, j = divmod(idx, n_t)
            completed[(i, j)] = (float(cells[3]), float(cells[4]),
                                 float(cells[5]) if cells[5] else None)
    fh = open(args.out, "w", newline="")
    fh.write(",".join(SWEEP_HEADER) + "\n")

    def on_cell(i, j, fid, pol, qfi_val):
        b = grid.b_hold_values[i]
        fh.write(",".join([io.fmt_float(b / cfg.params.j_coupling),
                           io.fmt_float(b / KHZ),
                           io.fmt_float(grid.t_hold_values[j]),
                           io.fmt_float(fid), io.fmt_float(pol),
                           io.fmt_float(qfi_val) if qfi_val is not None else ""])
                 + "\n")
        fh.flush()

    try:
        result = sweep_bang_bang(cfg.params, grid, compute_qfi=args.qfi,
                                 on_cell=on_cell, completed=completed)
    finally:
        fh.close()
    best_f = result.best_cell("fidelity")
    best_p = result.best_cell("abs_sz")
    return {"argmax_fidelity": best_f, "argmax_abs_sz": best_p,
            "cells": int(len(grid.b_hold_values) * n_t)}


def cmd_compare(args, cfg):
    comp = compare_protocols(cfg.params, args.taus, workers=args.threads)
    rows = []
    for k, tau in enumerate(comp.tau_values):
        rows.append((tau, comp.f_bang_bang[k], comp.f_la[k],
                     comp.bb_argmax[k]["b_hold"] / KHZ,
                     comp.bb_argmax[k]["t_hold"]))
    io.write_csv(args.out, ["tau_ms", "f_bang_bang", "f_la", "bb_b_hold_khz",
                            "bb_t_hold_ms"], rows)
    return {"crossover_tau_ms": comp.crossover_tau}


def cmd_scaling(args, cfg):
    rows = scaling_study(args.n_values, cfg.params, args.taus,
                         dim_cap=args.dim_cap, workers=args.threads)
    io.write_csv(args.out,
                 ["n_spins", "protocol", "tau_ms", "fidelity", "qfi",
                  "b_hold_khz", "t_hold_ms"],
                 [(r["n_spins"], r["protocol"], r["tau"], r["fidelity"],
                   r["qfi"], r["b_hold"] / KHZ, r["t_hold"]) for r in rows])
    return {"n_values": args.n_values, "taus": args.taus}


def cmd_robustness(args, cfg):
    rows = longitudinal_robustness(
        cfg.params, [KHZ * b for b in args.bz_values_khz], la_tau=args.la_tau,
        bb_t_hold=args.bb_t_hold,
        bb_b_hold=None if args.bb_b_hold_khz is None else KHZ * args.bb_b_hold_khz,
        workers=args.threads)
    io.write_csv(args.out, ["bz_khz", "protocol", "t_ms", "coherence_abs",
                            "coherence_rel", "parity"],
                 [(r["b_z"] / KHZ, r["protocol"], r["t"], r["coherence_abs"],
                   r["coherence_rel"], r["parity"]) for r in rows])
    finals = {}
    for r in rows:
        finals[(r["protocol"], round(r["b_z"] / KHZ, 9))] = r["coherence_abs"]
    return {"final_coherence": {f"{k[0]}@{k[1]}kHz": v for k, v in finals.items()}}


def cmd_measure(args, cfg):
    state = io.load_state(args.state)
    if state.basis != cfg.params.basis:
        raise ConfigError([
            f"state basis (N={state.basis.n_spins}, n_max={state.basis.n_max}) "
            f"does not match params (N={cfg.params.n_spins}, "
            f"n_max={cfg.params.n_max})"])
    coh = coherence_extremal(state, cfg.params)
    doc = {
        "fidelity": fidelity_to_cat(state, cfg.params),
        "qfi": qfi(state),
        "coherence_abs": abs(coh.value),
        "abs_sz": abs_sz_expectation(state),
        "parity": parity_of(state).real,
    }
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.distribution:
        dist = spin_distribution(state, args.axis)
        io.write_csv(args.distribution, ["m", "p"],
                     list(zip(dist.m_values, dist.probs)))
    return None


COMMANDS = {
    "gap": cmd_gap,
    "evolve": cmd_evolve,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "scaling": cmd_scaling,
    "robustness": cmd_robustness,
    "measure": cmd_measure,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        cfg = config_from_args(args)
        summary = COMMANDS[args.command](args, cfg)
    except (PropagationError, EigensolverError, RampError, MemoryError) as exc:
        _emit_error(exc)
        return 3
    except (ConfigError, ParamsError, ValueError) as exc:
        _emit_error(exc)
        return 2
    if summary is not None and getattr(args, "out", None):
        io.write_sidecar(args.out, cfg, summary,
                         timing_s=time.monotonic() - started if args.timing else None)
    return 0


def _emit_error(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["problems"] = exc.problems
    sys.stderr.write(json.dumps(doc) + "\n")


if __name__ == "__main__":
    sys.exit(main())
