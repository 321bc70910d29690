"""Multi-board orchestration: compile a declarative experiment into
per-board timing-processor programs, run the boards in lockstep through the
sync-bus barrier, and aggregate acquisitions as one monolithic device.

Sweep lowering: the real-time parameters (frequency, amplitude, phase,
start time, duration) become register-update loops inside the compiled
programs, with per-point generator/readout settings addressed through a
config-id register; duration points are realized by padding waveform
variants on the DAC sample grid.  DC-bias sweeps are host loops: the same
program is re-run after reprogramming the flux DACs over SPI.

Execution is deterministic for a fixed seed: shot noise is keyed by
(seed, axis indices), never by board placement, so an experiment split
across boards is bit-identical to the same experiment on one board.
"""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import afe, qpu as qpu_mod
from .dsp import (DAC_RATE, TileLatency, Waveform, gaussian_envelope,
                  square_envelope)
from .experiment import (DAC_SAMPLE_FS, TIME_TICK_FS, WILDCARD, Acquisition,
                         BoardMap, Experiment, ExperimentError, Pulse,
                         SweepSpec, duration_sweep_samples, fs_to_ticks,
                         snap_duration_samples)
from .syncbus import barrier_release_time
from .timebase import ClockTree, default_tree
from .tproc import (EventKind, TimedEvent, TProcProgram, TProcState,
                    assemble, run_until_barrier, resume_from_barrier)

TICKS_PER_CYCLE = 3


class CompileError(ExperimentError):
    """Base for everything the compiler can reject."""


class UnmappedChannel(CompileError):
    pass


class TooManyTones(CompileError):
    pass


class OverlappingPulses(CompileError):
    pass


class SyncCoverageError(CompileError):
    pass


class SyncTimeout(RuntimeError):
    def __init__(self, board: str, pc: int):
        super().__init__(f"board {board!r} never reached SYNC "
                         f"(halted at pc={pc})")
        self.board = board
        self.pc = pc


class ShotCountMismatch(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sweep axes

@dataclass(frozen=True)
class Axis:
    parameter: str          # sweep parameter or "none"
    channel: str
    values: tuple           # axis values in natural units
    samples: tuple = ()     # duration axes: DAC sample counts per point
    ticks: tuple = ()       # start-time axes: dispatcher ticks per point

    @property
    def is_host(self) -> bool:
        return self.parameter == "dc_bias"

    @property
    def is_real(self) -> bool:
        return self.parameter not in ("none", "dc_bias")

    def __len__(self):
        return len(self.values)


def _build_axis(sweep: SweepSpec) -> Axis:
    if sweep.parameter == "duration":
        samples = duration_sweep_samples(round(sweep.start), round(sweep.stop),
                                         round(sweep.step))
        if not samples:
            raise CompileError("duration sweep selects no sample counts")
        values = tuple(float(n * DAC_SAMPLE_FS) / 1e6 for n in samples)  # ns
        return Axis("duration", sweep.channel, values, samples=tuple(samples))
    if sweep.parameter == "start_time":
        t0 = fs_to_ticks(round(sweep.start))
        dt = max(1, fs_to_ticks(round(sweep.step)))
        n = len(sweep.values())
        ticks = tuple(t0 + k * dt for k in range(n))
        values = tuple(float(t * TIME_TICK_FS) / 1e6 for t in ticks)      # ns
        return Axis("start_time", sweep.channel, values, ticks=ticks)
    return Axis(sweep.parameter, sweep.channel, tuple(sweep.values()))


def build_axes(exp: Experiment) -> list[Axis]:
    axes = [_build_axis(s) for s in exp.sweeps]
    while len(axes) < 2:
        axes.append(Axis("none", WILDCARD, (0.0,)))
    return axes


# ---------------------------------------------------------------------------
# per-point resolution

@dataclass(frozen=True)
class ResolvedPulse:
    channel: str
    kind: str
    shape: str
    start_tick: int
    n_samples: int
    gain: float
    freq_hz: float
    phase_rad: float
    sigma_samples: float | None


@dataclass(frozen=True)
class ResolvedAcq:
    channel: str
    start_tick: int
    window_fs: int
    probe_hz: float


def _sweep_matches(axis: Axis, name: str) -> bool:
    return axis.channel == WILDCARD or axis.channel == name


def resolve_point(exp: Experiment, bmap: BoardMap, axes, i1: int, i2: int):
    """Resolved pulse/acquisition settings and DC biases at one grid point."""
    picks = list(zip(axes, (i1, i2)))
    pulses = []
    for p in exp.pulses:
        start_tick = fs_to_ticks(p.start_fs)
        n_samples = snap_duration_samples(p.duration_fs)
        gain, freq, phase = p.amp, p.freq_hz, p.phase_rad
        for ax, idx in picks:
            if not _sweep_matches(ax, p.channel):
                continue
            if ax.parameter == "frequency":
                freq = p.freq_hz + ax.values[idx]
            elif ax.parameter == "amplitude":
                gain = ax.values[idx]
            elif ax.parameter == "phase":
                phase = ax.values[idx]
            elif ax.parameter == "start_time":
                start_tick = ax.ticks[idx]
            elif ax.parameter == "duration":
                n_samples = ax.samples[idx]
        sigma = None
        if p.shape == "gaussian":
            sigma = (p.sigma_fs / float(DAC_SAMPLE_FS)) if p.sigma_fs \
                else n_samples / 4.0
        pulses.append(ResolvedPulse(p.channel, p.kind, p.shape, start_tick,
                                    n_samples, gain, freq, phase, sigma))
    acqs = []
    for a in exp.acquisitions:
        probe = a.probe_hz
        for ax, idx in picks:
            if ax.parameter == "frequency" and _sweep_matches(ax, a.channel):
                probe = a.probe_hz + ax.values[idx]
        acqs.append(ResolvedAcq(a.channel, fs_to_ticks(a.start_fs),
                                a.window_fs, probe))
    dc = dict(exp.dc_bias_v)
    for ax, idx in picks:
        if ax.parameter != "dc_bias":
            continue
        targets = [name for name, b in bmap.channels.items()
                   if b.kind == "flux" and _sweep_matches(ax, name)]
        for t in targets:
            dc[t] = ax.values[idx]
    return pulses, acqs, dc


def _check_overlap(pulses: list[ResolvedPulse]):
    spans: dict[str, list] = {}
    for p in pulses:
        start = p.start_tick * TIME_TICK_FS
        spans.setdefault(p.channel, []).append(
            (start, start + p.n_samples * DAC_SAMPLE_FS))
    for chan, ivals in spans.items():
        ivals.sort()
        for (s0, e0), (s1, _) in zip(ivals, ivals[1:]):
            if s1 < e0:
                raise OverlappingPulses(
                    f"pulses overlap on channel {chan!r} "
                    f"({float(s1):.0f} fs < {float(e0):.0f} fs)")


# ---------------------------------------------------------------------------
# compiled artifacts

@dataclass(frozen=True)
class PulseConfig:
    channel: str
    gen_id: int
    tile: int
    waveform_id: int
    n_samples: int
    gain: float
    freq_hz: float
    phase_rad: float


@dataclass(frozen=True)
class AcquireConfig:
    feedline: int
    channels: tuple[str, ...]
    probes_hz: tuple[float, ...]
    window_fs: int


@dataclass
class CompiledBoard:
    program: TProcProgram
    assembly: str
    waveforms: dict[int, Waveform]
    configs: dict[int, PulseConfig | AcquireConfig]
    event_bases: dict[str, int]       # event key -> first config id
    acq_bases: dict[int, int]         # feedline -> first config id
    dc_channels: dict[str, int]       # flux channel name -> DC DAC channel


@dataclass
class CompiledBundle:
    exp: Experiment
    bmap: BoardMap
    axes: list[Axis]
    boards: dict[str, CompiledBoard]
    n_rt: int
    shot_period_ticks: int
    schedule_span_ticks: int          # schedule end + relaxation, offset-free
    schedule_offset_ticks: int
    channels: list[str]               # declaration order


# ---------------------------------------------------------------------------
# compilation

_R_OUT, _R_IN, _R_SHOT, _R_CFG = 1, 2, 3, 4
_R_ID, _R_T, _R_BASE = 10, 11, 12
_R_START0 = 16


def _rt_flat(axes, i1, i2) -> int:
    """Row-major index over the real-time axes only."""
    idx = 0
    for ax, i in zip(axes, (i1, i2)):
        if ax.is_real:
            idx = idx * len(ax) + i
    return idx


def _make_waveform(shape, n_samples, sigma_samples, kind) -> Waveform:
    rate = DAC_RATE / 16 if kind == "drive" else DAC_RATE
    n = max(1, n_samples if kind != "drive" else max(1, n_samples // 16))
    if shape == "gaussian":
        sig = (sigma_samples or n / 4.0) * (n / max(n_samples, 1))
        return gaussian_envelope(n, max(sig, 0.5), rate)
    return square_envelope(n, 1.0, rate)


def compile_experiment(exp: Experiment, bmap: BoardMap) -> CompiledBundle:
    """Lower an experiment onto the boards of ``bmap``.

    Raises a :class:`CompileError` subclass on any invalid input; on
    success every board carries a program with the identical loop
    structure, a SYNC on every path required by the sync policy, and
    fully populated waveform/config tables.
    """
    try:
        axes = build_axes(exp)
    except CompileError:
        raise
    except ExperimentError as e:
        raise CompileError(str(e)) from e
    rt_axes = [ax for ax in axes if ax.is_real]
    n_rt = math.prod(len(ax) for ax in rt_axes) if rt_axes else 1

    # bindings up front: unmapped channels and kind mismatches
    def mapped(name: str):
        if name not in bmap.channels:
            raise UnmappedChannel(f"channel {name!r} is not mapped")
        return bmap.binding(name)

    for p in exp.pulses:
        b = mapped(p.channel)
        if b.kind != p.kind:
            raise UnmappedChannel(f"pulse {p.channel!r} is {p.kind} but the "
                                  f"channel is bound as {b.kind}")
    for a in exp.acquisitions:
        if mapped(a.channel).kind != "readout":
            raise UnmappedChannel(f"acquisition channel {a.channel!r} is not "
                                  f"a readout channel")
    for ax in axes:
        if ax.parameter in ("none", "dc_bias"):
            continue
        if ax.channel != WILDCARD:
            mapped(ax.channel)

    # acquisitions grouped per (board, feedline); mux windows must agree
    acq_groups: dict[tuple[str, int], list[Acquisition]] = {}
    for a in exp.acquisitions:
        b = bmap.binding(a.channel)
        acq_groups.setdefault((b.board, b.feedline), []).append(a)
    for (board, line), group in acq_groups.items():
        if len(group) > qpu_mod.MAX_TONES_PER_FEEDLINE:
            raise TooManyTones(f"feedline {line} on board {board} carries "
                               f"{len(group)} tones (max 8)")
        if len({(g.start_fs, g.window_fs) for g in group}) != 1:
            raise CompileError(f"multiplexed acquisitions on feedline {line} "
                               f"must share start and window")
        names = [g.channel for g in group]
        if len(set(names)) != len(names):
            raise CompileError(f"duplicate acquisition channels on feedline "
                               f"{line}: {names}")

    # validate every grid point: overlap and schedule extents
    n1, n2 = len(axes[0]), len(axes[1])
    max_end_tick = 0
    for i1 in range(n1):
        for i2 in range(n2):
            pulses, acqs, _ = resolve_point(exp, bmap, axes, i1, i2)
            _check_overlap(pulses)
            for p in pulses:
                end = p.start_tick + math.ceil(
                    p.n_samples * DAC_SAMPLE_FS / TIME_TICK_FS)
                max_end_tick = max(max_end_tick, end)
            for a in acqs:
                end = a.start_tick + math.ceil(
                    Fraction(a.window_fs) / TIME_TICK_FS)
                max_end_tick = max(max_end_tick, end)

    # board-local event lists: (key, kind, source index, object, binding)
    events_per_board: dict[str, list] = {b: [] for b in bmap.boards}
    for j, p in enumerate(exp.pulses):
        b = bmap.binding(p.channel)
        events_per_board[b.board].append(
            (f"pulse:{j}:{p.channel}", "pulse", j, p, b))
    seen_lines = set()
    for a in exp.acquisitions:
        b = bmap.binding(a.channel)
        if (b.board, b.feedline) in seen_lines:
            continue
        seen_lines.add((b.board, b.feedline))
        events_per_board[b.board].append(
            (f"acq:{b.feedline}", "acquire", None, a, b))

    n_events_max = max((len(v) for v in events_per_board.values()), default=0)
    offset_ticks = TICKS_PER_CYCLE * (16 + 4 * n_events_max)
    relax_ticks = math.ceil(Fraction(exp.relax_fs) / TIME_TICK_FS)
    span_ticks = max_end_tick + relax_ticks
    shot_period = offset_ticks + span_ticks

    # start-time sweep registers (per swept pulse channel)
    start_regs: dict[str, int] = {}
    for ax in rt_axes:
        if ax.parameter != "start_time":
            continue
        for p in exp.pulses:
            if _sweep_matches(ax, p.channel) and p.channel not in start_regs:
                start_regs[p.channel] = _R_START0 + len(start_regs)

    boards: dict[str, CompiledBoard] = {}
    for board in bmap.boards:
        boards[board] = _compile_board(
            exp, bmap, axes, n_rt, board, events_per_board[board],
            offset_ticks, shot_period, start_regs)

    bundle = CompiledBundle(exp, bmap, axes, boards, n_rt, shot_period,
                            span_ticks, offset_ticks,
                            exp.readout_channel_names())
    for board, cb in boards.items():
        verify_sync_coverage(cb.program, exp.sync_policy)
    return bundle


def _compile_board(exp, bmap, axes, n_rt, board, events, offset_ticks,
                   shot_period, start_regs) -> CompiledBoard:
    rt_axes = [ax for ax in axes if ax.is_real]
    n_axis = [len(ax) for ax in rt_axes] + [1] * (2 - len(rt_axes))
    once = exp.sync_policy == "Once"

    waveforms: dict[int, Waveform] = {}
    wave_index: dict[tuple, int] = {}

    def wave_id(shape, n_samples, sigma, kind) -> int:
        key = (shape, n_samples, None if sigma is None else round(sigma, 6),
               kind)
        if key not in wave_index:
            wid = len(waveforms)
            wave_index[key] = wid
            waveforms[wid] = _make_waveform(shape, n_samples, sigma, kind)
        return wave_index[key]

    # order events deterministically: (nominal start, generator id)
    def nominal_start(item):
        _, _, _, obj, b = item
        return (fs_to_ticks(obj.start_fs), b.gen_id)

    events = sorted(events, key=nominal_start)

    configs: dict[int, PulseConfig | AcquireConfig] = {}
    event_bases: dict[str, int] = {}
    acq_bases: dict[int, int] = {}
    grid = [(i1, i2) for i1 in range(len(axes[0]))
            for i2 in range(len(axes[1]))]
    # resolved settings per rt point (host axes collapse onto rt index)
    rt_points: dict[int, tuple] = {}
    for i1, i2 in grid:
        rt_points.setdefault(_rt_flat(axes, i1, i2),
                             resolve_point(exp, bmap, axes, i1, i2))

    for e_idx, (key, kind, src_idx, obj, binding) in enumerate(events):
        base = e_idx * n_rt
        event_bases[key] = base
        if kind == "acquire":
            acq_bases[binding.feedline] = base
        for p_idx in range(n_rt):
            pulses, acqs, _ = rt_points[p_idx]
            if kind == "pulse":
                rp = pulses[src_idx]
                wid = wave_id(rp.shape, rp.n_samples, rp.sigma_samples,
                              rp.kind)
                configs[base + p_idx] = PulseConfig(
                    rp.channel, binding.gen_id, binding.tile, wid,
                    rp.n_samples, rp.gain, rp.freq_hz, rp.phase_rad)
            else:
                group = [r for r in acqs
                         if bmap.binding(r.channel).feedline == binding.feedline
                         and bmap.binding(r.channel).board == board]
                group.sort(key=lambda r: bmap.binding(r.channel).slot)
                configs[base + p_idx] = AcquireConfig(
                    binding.feedline, tuple(r.channel for r in group),
                    tuple(r.probe_hz for r in group), group[0].window_fs)

    # waveform table must exist even for boards without pulses
    lines: list[str] = []
    emit = lines.append

    def time_operand(within_shot) -> tuple[list[str], str]:
        """(prep instructions, operand) for an absolute within-shot time."""
        if once:
            if isinstance(within_shot, int):
                return ([f"    ADD r{_R_T}, r{_R_BASE}, {within_shot}"],
                        f"@r{_R_T}")
            return ([f"    ADD r{_R_T}, r{_R_BASE}, r{within_shot}"],
                    f"@r{_R_T}")
        if isinstance(within_shot, int):
            return [], f"@{within_shot}"
        return [], f"@r{within_shot}"

    if once:
        emit("    SYNC")
        emit(f"    SET r{_R_BASE}, 0")
    for chan, reg in start_regs.items():
        ax = next(ax for ax in rt_axes if ax.parameter == "start_time"
                  and _sweep_matches(ax, chan))
        emit(f"    SET r{reg}, {offset_ticks + ax.ticks[0]}")
    emit(f"    SET r{_R_CFG}, 0")
    emit(f"    SET r{_R_OUT}, {n_axis[0]}")
    emit("outer:")
    emit(f"    SET r{_R_IN}, {n_axis[1]}")
    emit("inner:")
    emit(f"    SET r{_R_SHOT}, {exp.nshots}")
    emit("shot:")
    if not once:
        emit("    SYNC")
    for key, kind, src_idx, obj, binding in events:
        base = event_bases[key]
        if n_rt > 1:
            emit(f"    ADD r{_R_ID}, r{_R_CFG}, {base}")
            id_op = f"r{_R_ID}"
        else:
            id_op = f"{base}"
        if kind == "pulse" and obj.channel in start_regs:
            within = start_regs[obj.channel]
        else:
            within = offset_ticks + fs_to_ticks(obj.start_fs)
        prep, t_op = time_operand(within)
        lines.extend(prep)
        mnemonic = "TRIG" if kind == "pulse" else "ACQ"
        emit(f"    {mnemonic} {binding.gen_id}, {id_op}, {t_op}")
    prep, t_op = time_operand(shot_period)
    lines.extend(prep)
    emit(f"    WAITT {t_op}")
    if once:
        emit(f"    ADD r{_R_BASE}, r{_R_BASE}, {shot_period}")
    emit(f"    LOOPNZ r{_R_SHOT}, shot")
    if n_rt > 1:
        emit(f"    ADD r{_R_CFG}, r{_R_CFG}, 1")
    # start-register deltas: inner axis every wrap, outer axis patch
    inner_ax = rt_axes[1] if len(rt_axes) == 2 else None
    outer_ax = rt_axes[0] if rt_axes else None
    for chan, reg in start_regs.items():
        if inner_ax and inner_ax.parameter == "start_time" \
                and _sweep_matches(inner_ax, chan):
            dt = inner_ax.ticks[1] - inner_ax.ticks[0] \
                if len(inner_ax.ticks) > 1 else 0
            if dt:
                emit(f"    ADD r{reg}, r{reg}, {dt}")
    emit(f"    LOOPNZ r{_R_IN}, inner")
    for chan, reg in start_regs.items():
        patches = 0
        if outer_ax and outer_ax.parameter == "start_time" \
                and _sweep_matches(outer_ax, chan):
            d_out = outer_ax.ticks[1] - outer_ax.ticks[0] \
                if len(outer_ax.ticks) > 1 else 0
            patches += d_out
        if inner_ax and inner_ax.parameter == "start_time" \
                and _sweep_matches(inner_ax, chan) and len(inner_ax.ticks) > 1:
            # inner register walked n2-1 steps; rewind for the next row
            patches -= (len(inner_ax.ticks) - 1) \
                * (inner_ax.ticks[1] - inner_ax.ticks[0])
        if patches:
            emit(f"    ADD r{reg}, r{reg}, {patches}")
    emit(f"    LOOPNZ r{_R_OUT}, outer")
    emit("    END")

    assembly = "\n".join(lines) + "\n"
    program = assemble(assembly)
    dc_channels = {name: b.dc_channel for name, b in bmap.channels.items()
                   if b.board == board and b.kind == "flux"}
    return CompiledBoard(program, assembly, waveforms, configs, event_bases,
                         acq_bases, dc_channels)


def compile_single_board(exp: Experiment, bmap: BoardMap) -> CompiledBundle:
    """Direct path for experiments that fit one board; bit-identical to the
    general compiler restricted to that board."""
    used = {bmap.binding(p.channel).board for p in exp.pulses} | \
           {bmap.binding(a.channel).board for a in exp.acquisitions}
    if len(used) > 1:
        raise CompileError(f"experiment spans boards {sorted(used)}")
    return compile_experiment(exp, bmap)


def verify_sync_coverage(program: TProcProgram, policy: str):
    """Exhaustive walk of the loop-structured control-flow graph: no event
    may be reachable without crossing a SYNC, and under PerShot every loop
    body that emits events must contain its own SYNC."""
    instrs = program.instructions
    n = len(instrs)
    reach_nosync = set()
    stack = [0]
    while stack:
        i = stack.pop()
        if i in reach_nosync or i >= n:
            continue
        reach_nosync.add(i)
        ins = instrs[i]
        if ins.op == "SYNC":
            continue
        if ins.op == "END":
            continue
        if ins.op == "JMP":
            stack.append(ins.args[0][1])
        elif ins.op in ("BNZ", "LOOPNZ"):
            stack.extend([ins.args[1][1], i + 1])
        else:
            stack.append(i + 1)
    for i in reach_nosync:
        if instrs[i].op in ("TRIG", "ACQ"):
            raise SyncCoverageError(
                f"event at pc={i} reachable without a SYNC")
    if policy == "PerShot":
        for i, ins in enumerate(instrs):
            if ins.op in ("BNZ", "LOOPNZ") and ins.args[1][1] <= i:
                body = range(ins.args[1][1], i + 1)
                has_event = any(instrs[j].op in ("TRIG", "ACQ") for j in body)
                has_sync = any(instrs[j].op == "SYNC" for j in body)
                if has_event and not has_sync:
                    raise SyncCoverageError(
                        f"loop at pc={i} replays events without a SYNC")


# ---------------------------------------------------------------------------
# execution

@dataclass
class ExecutionContext:
    tree: ClockTree = field(default_factory=lambda: default_tree(("A", "B")))
    qpu: qpu_mod.QpuParams = field(default_factory=qpu_mod.default_qpu)
    seed: int = 0
    legacy: bool = False
    propagation_delay_fs: int = 0
    tiles: dict | None = None          # board -> TileLatency
    watchdog: int = 50_000_000

    def tile_latency(self, board: str) -> TileLatency:
        if self.tiles and board in self.tiles:
            return self.tiles[board]
        return TileLatency({t: 0 for t in range(4)}, mts_enabled=True)


@dataclass
class AxisInfo:
    parameter: str
    channel: str
    values: list


@dataclass
class ResultSet:
    data: np.ndarray                   # [n1][n2][shots|1][channels]
    axes: list[AxisInfo]
    channels: list[str]
    mode: str                          # binned | averaged

    def to_csv(self, fp):
        fp.write("axis1,axis2,shot,channel,i,q\n")
        n1, n2, ns_, nc = self.data.shape
        for i1 in range(n1):
            v1 = self.axes[0].values[i1]
            for i2 in range(n2):
                v2 = self.axes[1].values[i2]
                for s in range(ns_):
                    for c in range(nc):
                        z = self.data[i1, i2, s, c]
                        fp.write(f"{float(v1)!r},{float(v2)!r},{s},"
                                 f"{self.channels[c]},{float(z.real)!r},"
                                 f"{float(z.imag)!r}\n")


@dataclass
class ExecutionDetail:
    events: dict                      # board -> list[TimedEvent]
    sync_counts: dict                 # board -> int
    resume_cycles: dict               # board -> list[int]
    spi_frames: dict                  # board -> list[str] (hex)


def _run_boards_lockstep(bundle: CompiledBundle, ctx: ExecutionContext):
    """Advance every board program to completion, resolving each SYNC on a
    common flag edge through the wired-AND barrier."""
    boards = list(bundle.boards)
    pl = {b: ctx.tree.domain(b, "pl_refclk") for b in boards}
    states = {b: TProcState() for b in boards}
    events: dict[str, list[TimedEvent]] = {b: [] for b in boards}
    sync_counts = {b: 0 for b in boards}
    resumes: dict[str, list[int]] = {b: [] for b in boards}
    status: dict[str, str] = {}
    budget = {b: ctx.watchdog for b in boards}
    for b in boards:
        evs, why, used = run_until_barrier(states[b],
                                           bundle.boards[b].program,
                                           budget[b])
        events[b].extend(evs)
        budget[b] -= used
        status[b] = why
    while any(s == "sync" for s in status.values()):
        enders = [b for b in boards if status[b] == "end"]
        if enders:
            bad = enders[0]
            raise SyncTimeout(bad, states[bad].pc)
        ready_times = [pl[b].edge_time(states[b].core_cycle) for b in boards]
        release = barrier_release_time(ready_times, ctx.tree,
                                       ctx.propagation_delay_fs)
        ref = pl[boards[0]]
        flag_edge, _ = ref.edge_at_or_after(release)
        for b in boards:
            resume_from_barrier(states[b], flag_edge, legacy=ctx.legacy)
            sync_counts[b] += 1
            resumes[b].append(states[b].core_cycle)
            evs, why, used = run_until_barrier(states[b],
                                               bundle.boards[b].program,
                                               budget[b])
            events[b].extend(evs)
            budget[b] -= used
            status[b] = why
    return events, sync_counts, resumes


def event_time_fs(bundle: CompiledBundle, ctx: ExecutionContext, board: str,
                  ev: TimedEvent, rng=None) -> int:
    """Absolute emission time of an event: dispatcher edge plus the owning
    generator tile's converter latency (and jitter when an rng is given)."""
    dom = ctx.tree.domain(board, "time")
    t = dom.edge_time(ev.abs_tick, rng)
    cfg = bundle.boards[board].configs.get(ev.config_id)
    if isinstance(cfg, PulseConfig):
        offset = ctx.tile_latency(board).offsets.get(cfg.tile, 0)
        t += round(offset * DAC_SAMPLE_FS)
    return t


def _program_dc(bundle: CompiledBundle, dc_volts: dict, board: str,
                regs: afe.DacRegisterFile) -> list[str]:
    frames = []
    for chan, dc_ch in sorted(bundle.boards[board].dc_channels.items()):
        volts = dc_volts.get(chan, 0.0)
        frame = afe.SpiFrame(0, dc_ch, afe.voltage_to_code(volts))
        afe.spi_transfer(regs, frame)
        frames.append(frame.hex())
    return frames


def _window_samples(bundle: CompiledBundle) -> int:
    # duty window of the bias tee: the schedule repetition span, which is a
    # property of the experiment, never of per-board program layout
    return max(1, round(bundle.schedule_span_ticks * TIME_TICK_FS
                        / DAC_SAMPLE_FS))


def _control_record(bundle: CompiledBundle, i1: int, i2: int,
                    dc_volts: dict) -> qpu_mod.ControlRecord:
    exp, bmap, axes = bundle.exp, bundle.bmap, bundle.axes
    pulses, acqs, dc = resolve_point(exp, bmap, axes, i1, i2)
    dc = {**dc_volts, **dc}
    window = _window_samples(bundle)
    flux_v: dict[int, float] = {}
    for name, b in bmap.channels.items():
        if b.kind != "flux" or b.qubit is None:
            continue
        flux_v[b.qubit] = dc.get(name, 0.0)
    chev_amp, chev_dur = 0.0, 0.0
    for p in pulses:
        b = bmap.binding(p.channel)
        if p.kind != "flux" or b.qubit is None:
            continue
        plateau = afe.flux_plateau(dc.get(p.channel, 0.0), p.gain,
                                   exp.rf_fullscale_v, p.n_samples, window)
        if exp.physics_mode == "chevron" \
                and p.channel == exp.chevron_flux_channel:
            chev_amp = plateau
            chev_dur = float(p.n_samples * DAC_SAMPLE_FS) * 1e-15
        else:
            flux_v[b.qubit] = plateau
    probe = {}
    for a in acqs:
        q = bmap.binding(a.channel).qubit
        if q is not None:
            probe[q] = a.probe_hz
    chans = [bmap.binding(name).qubit for name in bundle.channels]
    return qpu_mod.ControlRecord(
        readout_channels=chans, flux_v=flux_v, probe_hz=probe,
        mode=exp.physics_mode, chevron_pair=exp.chevron_pair,
        chevron_amp_v=chev_amp, chevron_dur_s=chev_dur)


def execute(bundle: CompiledBundle, ctx: ExecutionContext,
            detail: ExecutionDetail | None = None) -> ResultSet:
    """Run the bundle and aggregate acquisitions into a ResultSet.

    Host-loop (dc-bias) axes re-program the flux DACs and re-run the
    board programs; real-time axes are inside the programs.  Shot noise is
    keyed by (seed, i1, i2), so results are independent of board split and
    of evaluation order.
    """
    exp, axes = bundle.exp, bundle.axes
    n1, n2 = len(axes[0]), len(axes[1])
    nshots = exp.nshots
    channels = bundle.channels
    data = np.zeros((n1, n2, nshots, len(channels)), dtype=np.complex128)

    host_axes = [k for k, ax in enumerate(axes) if ax.is_host]
    host_grid = [()]
    if host_axes:
        shapes = [range(len(axes[k])) for k in host_axes]
        host_grid = [(i,) for i in shapes[0]] if len(shapes) == 1 else \
            [(i, j) for i in shapes[0] for j in shapes[1]]

    dac_regs = {b: afe.DacRegisterFile() for b in bundle.boards}
    spi_log: dict[str, list[str]] = {b: [] for b in bundle.boards}
    per_board_events = {b: [] for b in bundle.boards}
    sync_totals = {b: 0 for b in bundle.boards}
    resume_log = {b: [] for b in bundle.boards}

    for combo in host_grid:
        host_idx = dict(zip(host_axes, combo))
        # a representative grid point of this host step fixes the DC codes
        rep = [host_idx.get(k, 0) for k in range(2)]
        _, _, dc_volts = resolve_point(exp, bundle.bmap, axes, rep[0], rep[1])
        for b in bundle.boards:
            spi_log[b].extend(_program_dc(bundle, dc_volts, b, dac_regs[b]))
        events, sync_counts, resumes = _run_boards_lockstep(bundle, ctx)
        for b in bundle.boards:
            per_board_events[b].extend(events[b])
            sync_totals[b] += sync_counts[b]
            resume_log[b].extend(resumes[b])
        _check_acquisition_counts(bundle, events, nshots)

        # physics for every grid point belonging to this host step
        for i1 in range(n1):
            if 0 in host_idx and i1 != host_idx[0]:
                continue
            for i2 in range(n2):
                if 1 in host_idx and i2 != host_idx[1]:
                    continue
                record = _control_record(bundle, i1, i2, dc_volts)
                rng = np.random.default_rng(
                    np.random.SeedSequence((ctx.seed, i1, i2)))
                data[i1, i2] = qpu_mod.simulate_readout(
                    ctx.qpu, record, nshots, rng)

    if detail is not None:
        detail.events = per_board_events
        detail.sync_counts = sync_totals
        detail.resume_cycles = resume_log
        detail.spi_frames = spi_log

    # route through the per-board aggregation path
    per_board = {}
    board_channels = {}
    for b in bundle.boards:
        idx = [k for k, name in enumerate(channels)
               if bundle.bmap.binding(name).board == b]
        per_board[b] = data[:, :, :, idx]
        board_channels[b] = [channels[k] for k in idx]
    return aggregate(per_board, board_channels, channels, axes,
                     averaged=exp.averaged)


def _check_acquisition_counts(bundle, events, nshots):
    for b, evs in events.items():
        acqs = [e for e in evs if e.kind is EventKind.ACQUIRE_START]
        expect = len(bundle.boards[b].acq_bases) * bundle.n_rt * nshots
        if len(acqs) != expect:
            raise ShotCountMismatch(
                f"board {b} produced {len(acqs)} acquisitions, "
                f"expected {expect}")


def aggregate(per_board: dict, board_channels: dict, declared: list[str],
              axes, averaged: bool = False) -> ResultSet:
    """Reassemble per-board acquisition arrays as one device.

    Channels return in experiment declaration order regardless of board
    placement; shot counts must agree across boards.
    """
    shots = {b: arr.shape[2] for b, arr in per_board.items()}
    if len(set(shots.values())) > 1:
        raise ShotCountMismatch(
            "boards report different shot counts: "
            + ", ".join(f"{b}={n}" for b, n in sorted(shots.items())))
    sample = next(iter(per_board.values()))
    n1, n2, ns_, _ = sample.shape
    data = np.zeros((n1, n2, ns_, len(declared)), dtype=np.complex128)
    for b, arr in per_board.items():
        for j, name in enumerate(board_channels[b]):
            data[:, :, :, declared.index(name)] = arr[:, :, :, j]
    mode = "binned"
    if averaged:
        data = data.mean(axis=2, keepdims=True)
        mode = "averaged"
    infos = [AxisInfo(ax.parameter, ax.channel, list(ax.values))
             for ax in axes]
    return ResultSet(data, infos, list(declared), mode)


# ---------------------------------------------------------------------------
# pipelined batches

def execute_pipelined(batches, ctx: ExecutionContext,
                      compile_fn=None, execute_fn=None) -> list[ResultSet]:
    """Overlap compilation of batch k+1 with execution of batch k.

    ``batches`` is a sequence of (Experiment, BoardMap) pairs.  Results
    come back in submission order and are bit-identical to serial
    execution; the only shared structure is the ordered hand-off queue.
    """
    compile_fn = compile_fn or (lambda job: compile_experiment(*job))
    execute_fn = execute_fn or (lambda bundle: execute(bundle, ctx))
    jobs = list(batches)
    q: queue.Queue = queue.Queue(maxsize=2)

    def producer():
        for k, job in enumerate(jobs):
            try:
                q.put((k, compile_fn(job), None))
            except Exception as exc:            # attributed to its batch
                q.put((k, None, exc))
                return

    t = threading.Thread(target=producer, daemon=True)
    t.start()
    results: list[ResultSet] = []
    for k in range(len(jobs)):
        idx, bundle, exc = q.get()
        if exc is not None:
            raise RuntimeError(f"batch {idx} failed to compile") from exc
        if idx != k:
            raise RuntimeError("pipeline delivered results out of order")
        try:
            results.append(execute_fn(bundle))
        except Exception as exc:
            raise RuntimeError(f"batch {idx} failed to execute") from exc
    t.join()
    return results
