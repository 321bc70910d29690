"""Command-line entry point: demo experiments and user configs.

Every command writes CSV artifacts plus a JSON manifest into --out and is
byte-reproducible for a fixed --seed.  Exit codes: 0 success, 2 usage or
schema errors, 3 simulation errors (sync timeout, schedule violation).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import random
import sys
from pathlib import Path

import numpy as np

from . import __version__, afe, orchestrator as orch, qpu as qpu_mod
from .config import ConfigError, load_config
from .dsp import DAC_RATE
from .experiment import (Acquisition, Experiment, Pulse, SweepSpec,
                         default_board_map, ns)
from .qpu import LADDER_EDGES, default_qpu, load_qpu, save_qpu
from .timebase import default_tree, period_fs
from .tproc import (ScheduleViolation, TProcError, TProcProgram, TProcState,
                    WatchdogExceeded, assemble, resume_from_barrier,
                    run_until_barrier)

EXIT_OK, EXIT_USAGE, EXIT_SIM = 0, 2, 3
DEFAULT_SEED_ENV = "BOARDSIM_SEED"

_TS_FS = float(period_fs(DAC_RATE))          # one DAC sample in fs


def _default_seed() -> int:
    return int(os.environ.get(DEFAULT_SEED_ENV, "1234"))


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_manifest(outdir: Path, command: str, params: dict, seed: int,
                    config_path=None):
    payload = {k: v for k, v in sorted(params.items()) if k != "func"}
    if config_path is not None:
        digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    else:
        digest = hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()).hexdigest()
    manifest = {
        "command": command,
        "parameters": payload,
        "config_path": str(config_path) if config_path else None,
        "config_sha256": digest,
        "seed": seed,
        "out_dir": str(outdir),
        "tool_version": __version__,
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_range(text: str, what: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"{what} must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{what} must be numeric start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(
            f"{what}: need step > 0 and stop >= start")
    return start, stop, step


def _edge_crossing_fs(t_start_fs: float, rise_samples: int = 2) -> float:
    """50%-threshold crossing of a square pulse with a 2-sample rise,
    linear interpolation between DAC-grid samples (scope methodology)."""
    rise = rise_samples * _TS_FS
    k = math.floor(t_start_fs / _TS_FS) - 1
    prev_t, prev_s = None, None
    while True:
        t = k * _TS_FS
        s = min(max((t - t_start_fs) / rise, 0.0), 1.0)
        if s >= 0.5:
            return prev_t + (0.5 - prev_s) / (s - prev_s) * _TS_FS
        prev_t, prev_s = t, s
        k += 1


# ---------------------------------------------------------------------------
# sync-bench

def _bench_program(length: int) -> TProcProgram:
    lines = [f"    SET r1, {i}" for i in range(length - 1)]
    lines += ["    SYNC", "    TRIG 0, 0, @0", "    END"]
    return assemble("\n".join(lines) + "\n")


def cmd_sync_bench(args) -> int:
    if args.boards < 2:
        print("sync-bench needs --boards >= 2", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    rng = random.Random(seed)
    boards = [f"B{i}" for i in range(args.boards)]
    tree = default_tree(boards)
    pl = tree.domain(boards[0], "pl_refclk")
    tdom = {b: tree.domain(b, "time") for b in boards}
    sigma_fs = args.jitter_ps * 1000.0
    programs = {n: _bench_program(n) for n in range(1, 61)}

    skews = []
    offsets_seen = set()
    rows = []
    for rep in range(args.reps):
        lengths = [rng.randrange(1, 61) for _ in boards]
        states = [TProcState() for _ in boards]
        ready = []
        events = []
        for st, n in zip(states, lengths):
            _, why, _ = run_until_barrier(st, programs[n])
            assert why == "sync"
            ready.append(st.core_cycle)
        flag_edge = max(ready) + 1            # line high next edge, flag there
        offsets = []
        for st, n in zip(states, lengths):
            resume_from_barrier(st, flag_edge, legacy=args.legacy)
            offsets.append(st.core_cycle - (flag_edge + 1))
            evs, why, _ = run_until_barrier(st, programs[n])
            assert why == "end" and len(evs) == 1
            events.append(evs[0])
        offsets_seen.update(offsets)
        starts = []
        for b, ev in zip(boards, events):
            t = float(tdom[b].edge_time(ev.abs_tick))
            if sigma_fs > 0:
                t += rng.gauss(0.0, sigma_fs)
            starts.append(_edge_crossing_fs(t))
        skew = max(starts) - min(starts)
        skews.append(skew)
        rows.append((rep, skew, offsets))

    csv_path = outdir / "skew.csv"
    with open(csv_path, "w") as fp:
        heads = ",".join(f"offset_b{i}_cycles" for i in range(args.boards))
        fp.write(f"rep,skew_fs,{heads}\n")
        for rep, skew, offs in rows:
            fp.write(f"{rep},{_fmt(skew)},"
                     + ",".join(str(o) for o in offs) + "\n")

    arr = np.array(skews)
    summary = {
        "reps": args.reps,
        "boards": args.boards,
        "jitter_ps": args.jitter_ps,
        "legacy": bool(args.legacy),
        "max_skew_fs": float(arr.max()),
        "rms_skew_fs": float(np.sqrt(np.mean(arr ** 2))),
        "p50_fs": float(np.percentile(arr, 50)),
        "p99_fs": float(np.percentile(arr, 99)),
        "p999_fs": float(np.percentile(arr, 99.9)),
        "resume_offsets_cycles": sorted(int(o) for o in offsets_seen),
    }
    (outdir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(outdir, "sync-bench", vars(args), seed)
    print(f"sync-bench: {args.reps} reps, max skew {arr.max():.0f} fs, "
          f"p99.9 {summary['p999_fs']:.0f} fs, offsets "
          f"{summary['resume_offsets_cycles']} -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# res-flux

def _sweet_spot(biases, dip_freq) -> float:
    """Bias of maximal dressed frequency.

    The arc is flat to first order at the sweet spot, so near-maximal
    biases form a cluster symmetric about it: take the midpoint of the
    contiguous cluster at the top, and among periodic copies keep the one
    needing the least bias (thermal-load tie-break).
    """
    top, bottom = max(dip_freq), min(dip_freq)
    tol = (top - bottom) / 50 if top > bottom else 0.0
    flat = [j for j, f in enumerate(dip_freq) if f >= top - tol]
    clusters = [[flat[0]]]
    for j in flat[1:]:
        if j == clusters[-1][-1] + 1:
            clusters[-1].append(j)
        else:
            clusters.append([j])
    mids = [(biases[c[0]] + biases[c[-1]]) / 2 for c in clusters]
    return min(mids, key=abs)


def cmd_res_flux(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.config:
        with open(args.config) as fp:
            qpu = load_qpu(fp)
    else:
        qpu = default_qpu(2023)
    f0, f1, fstep = args.freq_range
    b0, b1, bstep = args.bias_range
    bmap = default_board_map()
    acqs = [Acquisition(f"q{q}.ro", start_fs=ns(100), window_fs=ns(1000),
                        probe_hz=qpu.resonators[q].f_bare_hz)
            for q in range(10)]
    exp = Experiment(
        acquisitions=acqs,
        sweeps=[SweepSpec("frequency", "*", f0, f1, fstep),
                SweepSpec("dc_bias", "*", b0, b1, bstep)],
        nshots=args.nshots, averaged=True)
    ctx = orch.ExecutionContext(tree=default_tree(("A", "B")), qpu=qpu,
                                seed=args.seed)
    rs = orch.execute(orch.compile_experiment(exp, bmap), ctx)

    offsets = np.array(rs.axes[0].values)
    biases = rs.axes[1].values
    mags = np.abs(rs.data[:, :, 0, :])        # [freq][bias][qubit]
    sweet = []
    for q in range(10):
        base = qpu.resonators[q].f_bare_hz
        path = outdir / f"resflux_q{q}.csv"
        with open(path, "w") as fp:
            fp.write("freq_hz,bias_v,magnitude\n")
            for i, df in enumerate(offsets):
                for j, bias in enumerate(biases):
                    fp.write(f"{_fmt(base + df)},{_fmt(bias)},"
                             f"{_fmt(mags[i, j, q])}\n")
        # continuous dip-center estimate per bias: squared-depth centroid,
        # a strictly monotone function of the dressed frequency
        dip_freq = []
        for j in range(len(biases)):
            w = np.maximum(0.0, 1.0 - mags[:, j, q]) ** 2
            dip_freq.append(float((w * offsets).sum() / w.sum())
                            if w.sum() > 0 else 0.0)
        sweet.append(_sweet_spot(biases, dip_freq))
    with open(outdir / "sweet_spots.csv", "w") as fp:
        fp.write("qubit,sweet_spot_v\n")
        for q, v in enumerate(sweet):
            fp.write(f"{q},{_fmt(v)}\n")
    with open(outdir / "qpu_params.json", "w") as fp:
        save_qpu(qpu, fp)
    _write_manifest(outdir, "res-flux", {k: v for k, v in vars(args).items()},
                    args.seed, config_path=args.config)
    print(f"res-flux: {len(offsets)}x{len(biases)} grid on 10 qubits -> "
          f"{outdir}/resflux_q*.csv, sweet_spots.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# cz-chevron

def _parse_pair(text: str) -> tuple[int, int]:
    parts = text.replace("q", "").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("pair must look like q2,q7")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError("pair must look like q2,q7") \
            from None


def cmd_cz_chevron(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    qpu = default_qpu(2023)
    a, b = args.pair
    if tuple(sorted((a, b))) not in {tuple(sorted(e)) for e in LADDER_EDGES}:
        print(f"qubits q{a},q{b} are not a coupled (ladder-edge) pair",
              file=sys.stderr)
        return EXIT_USAGE
    bmap = default_board_map()
    board_a = bmap.binding(f"q{a}.flux").board
    board_b = bmap.binding(f"q{b}.flux").board
    if board_a == board_b and not args.allow_same_board:
        print(f"pair q{a},q{b} lives on one board; the cross-board demo "
              f"needs a rung pair (or --allow-same-board)", file=sys.stderr)
        return EXIT_USAGE
    hi, lo = (a, b) if qpu.qubits[a].f_max_hz > qpu.qubits[b].f_max_hz \
        else (b, a)
    flux_ch = f"q{hi}.flux"
    d0, d1, dstep = args.dur_range
    a0, a1, astep = args.amp_range
    exp = Experiment(
        pulses=[Pulse(flux_ch, "flux", start_fs=ns(20),
                      duration_fs=ns(max(d0, 1.0)), amp=min(a0, 1.0))],
        acquisitions=[Acquisition(f"q{lo}.ro", start_fs=ns(d1 + 60),
                                  window_fs=ns(1000),
                                  probe_hz=qpu.resonators[lo].f_bare_hz)],
        sweeps=[SweepSpec("duration", flux_ch, ns(d0), ns(d1), ns(dstep)),
                SweepSpec("amplitude", flux_ch, a0, a1, astep)],
        nshots=args.nshots, averaged=True,
        physics_mode="chevron", chevron_pair=(lo, hi),
        chevron_flux_channel=flux_ch)
    ctx = orch.ExecutionContext(tree=default_tree(tuple(bmap.boards)),
                                qpu=qpu, seed=args.seed)
    rs = orch.execute(orch.compile_experiment(exp, bmap), ctx)

    durs = rs.axes[0].values                 # ns, sample-grid snapped
    amps = rs.axes[1].values                 # volts (fullscale 1.0)
    mags = np.abs(rs.data[:, :, 0, 0])
    path = outdir / f"chevron_q{a}q{b}.csv"
    with open(path, "w") as fp:
        fp.write("duration_ns,amplitude_v,magnitude\n")
        for i, d in enumerate(durs):
            for j, v in enumerate(amps):
                fp.write(f"{_fmt(d)},{_fmt(v)},{_fmt(mags[i, j])}\n")
    _write_manifest(outdir, "cz-chevron", vars(args), args.seed)
    print(f"cz-chevron: pair q{hi}(flux)<->q{lo}(readout), "
          f"{len(durs)}x{len(amps)} grid -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        spec = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else spec.seed
    try:
        bundle = orch.compile_experiment(spec.experiment, spec.bmap)
    except orch.CompileError as e:
        print(f"compile error: {e}", file=sys.stderr)
        return EXIT_USAGE
    ctx = orch.ExecutionContext(tree=default_tree(tuple(spec.bmap.boards)),
                                qpu=spec.qpu, seed=seed)
    rs = orch.execute(bundle, ctx)
    csv_path = outdir / "results.csv"
    with open(csv_path, "w") as fp:
        rs.to_csv(fp)
    if args.raw:
        rs.data.astype(np.complex128).tofile(outdir / "results_raw.c128")
    _write_manifest(outdir, "run", {"config": str(args.config),
                                    "raw": bool(args.raw)},
                    seed, config_path=args.config)
    print(f"run: {rs.mode} ResultSet {rs.data.shape} -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="boardsim",
        description="Deterministic multi-board qubit control-system "
                    "simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sb = sub.add_parser("sync-bench",
                        help="cross-board pulse-skew benchmark")
    sb.add_argument("--boards", type=int, default=2)
    sb.add_argument("--reps", type=int, default=1000)
    sb.add_argument("--jitter-ps", type=float, default=0.0)
    sb.add_argument("--legacy", action="store_true",
                    help="use the unmodified-core sync model")
    sb.add_argument("--seed", type=int, default=_default_seed())
    sb.add_argument("--out", default="out/sync-bench")
    sb.set_defaults(func=cmd_sync_bench)

    rf = sub.add_parser("res-flux",
                        help="simultaneous 10-qubit resonator flux "
                             "spectroscopy")
    rf.add_argument("--config", default=None,
                    help="QPU parameter file (JSON)")
    rf.add_argument("--freq-range", default="-100e3:1.3e6:25e3",
                    type=lambda s: _parse_range(s, "--freq-range"),
                    help="probe offsets from each bare resonator, Hz")
    rf.add_argument("--bias-range", default="-2:2:0.05",
                    type=lambda s: _parse_range(s, "--bias-range"),
                    help="DC flux bias sweep, volts")
    rf.add_argument("--nshots", type=int, default=32)
    rf.add_argument("--seed", type=int, default=_default_seed())
    rf.add_argument("--out", default="out/res-flux")
    rf.set_defaults(func=cmd_res_flux)

    cz = sub.add_parser("cz-chevron",
                        help="cross-board CZ interaction chevron")
    cz.add_argument("--pair", type=_parse_pair, default=(2, 7),
                    help="qubit pair, e.g. q2,q7")
    cz.add_argument("--amp-range", default="0.1:0.4:0.0075",
                    type=lambda s: _parse_range(s, "--amp-range"),
                    help="flux pulse amplitude sweep, volts")
    cz.add_argument("--dur-range", default="0:80:1",
                    type=lambda s: _parse_range(s, "--dur-range"),
                    help="flux pulse duration sweep, ns")
    cz.add_argument("--nshots", type=int, default=64)
    cz.add_argument("--allow-same-board", action="store_true")
    cz.add_argument("--seed", type=int, default=_default_seed())
    cz.add_argument("--out", default="out/cz-chevron")
    cz.set_defaults(func=cmd_cz_chevron)

    rn = sub.add_parser("run", help="run an experiment config file")
    rn.add_argument("config")
    rn.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    rn.add_argument("--raw", action="store_true",
                    help="also dump raw complex128 results")
    rn.add_argument("--out", default="out/run")
    rn.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except orch.SyncTimeout as e:
        print(f"sync timeout: {e}", file=sys.stderr)
        return EXIT_SIM
    except (ScheduleViolation, WatchdogExceeded, orch.ShotCountMismatch,
            TProcError) as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
