"""Cycle-accurate timing-processor emulator and its two-pass assembler.

The core executes one instruction per pl_refclk cycle (122.88 MHz); the
pulse dispatcher counts ticks of the 368.64 MHz time clock, three per core
cycle.  Assembly grammar, one instruction per line, ``#`` starts a comment,
``name:`` defines a jump target (own line or prefixing an instruction):

    SET rD, imm           rD := imm
    ADD rD, rS, v         rD := rS + v       (v: imm or rK)
    JMP label             unconditional jump
    BNZ rS, label         jump when rS != 0
    LOOPNZ rS, label      rS := rS - 1, jump when result != 0
    TRIG ch, w, t         schedule a pulse start on channel ch, waveform w
    ACQ ch, c, t          schedule an acquisition, readout config c
    WAITT t               stall until the dispatch counter reaches t
    SYNC                  barrier: assert ready, stall for the release flag
    END                   halt

``w``/``c`` are immediates or registers.  Times ``t`` are dispatcher ticks:
``@n`` or ``@rK`` are absolute since the last counter reset, ``+n`` is
relative to the counter at execution.  Registers are 32 signed 32-bit
values with wraparound.

Two sync models are provided.  The modified core pauses the program counter
on the cycle SYNC is fetched and resumes on the first edge after the
release flag, so every board restarts on the same clock edge.  The legacy
core adds a program-position-dependent flush of 0..2 extra cycles before
the flag is sampled, reproducing the +/-2-cycle cross-board disparity of an
unmodified fetch unit.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .syncbus import PinState
from .timebase import ClockDomain

NREGS = 32
TICKS_PER_CYCLE = 3           # dispatcher ticks per core cycle (368.64/122.88)
_WRAP = 1 << 32


def _wrap32(v: int) -> int:
    return (v + (1 << 31)) % _WRAP - (1 << 31)


class TProcError(Exception):
    pass


class AssemblyError(TProcError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ScheduleViolation(TProcError):
    """A TRIG/ACQ named a dispatch time already in the past."""


class WatchdogExceeded(TProcError):
    """Instruction budget blown; almost certainly a runaway loop."""


# ---------------------------------------------------------------------------
# program representation and assembler

@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()


@dataclass(frozen=True)
class TProcProgram:
    instructions: tuple[Instruction, ...]

    def __len__(self):
        return len(self.instructions)


_OPCODES = {"SET", "ADD", "JMP", "BNZ", "LOOPNZ", "TRIG", "ACQ",
            "WAITT", "SYNC", "END"}
_BRANCH_OPS = {"JMP", "BNZ", "LOOPNZ"}
_REG_RE = re.compile(r"^r(\d+)$", re.IGNORECASE)
_LABEL_RE = re.compile(r"^([A-Za-z_][\w.]*):")


def _parse_reg(tok: str, line: int):
    m = _REG_RE.match(tok)
    if not m:
        raise AssemblyError(f"expected register, got {tok!r}", line)
    k = int(m.group(1))
    if k >= NREGS:
        raise AssemblyError(f"register index {k} out of range (< {NREGS})", line)
    return ("r", k)


def _parse_imm(tok: str, line: int):
    try:
        return ("i", int(tok, 0))
    except ValueError:
        raise AssemblyError(f"expected immediate, got {tok!r}", line) from None


def _parse_value(tok: str, line: int):
    if _REG_RE.match(tok):
        return _parse_reg(tok, line)
    return _parse_imm(tok, line)


def _parse_time(tok: str, line: int):
    if tok.startswith("@"):
        body = tok[1:]
        if _REG_RE.match(body):
            return ("@r", _parse_reg(body, line)[1])
        t = _parse_imm(body, line)[1]
        if t < 0:
            raise AssemblyError(f"absolute time must be >= 0, got {t}", line)
        return ("@i", t)
    if tok.startswith("+"):
        d = _parse_imm(tok[1:], line)[1]
        if d < 0:
            raise AssemblyError(f"relative time must be >= 0, got {d}", line)
        return ("+i", d)
    raise AssemblyError(f"expected @abs, @rK or +rel time, got {tok!r}", line)


def _parse_channel(tok: str, line: int):
    ch = _parse_imm(tok, line)[1]
    if ch < 0:
        raise AssemblyError(f"channel must be >= 0, got {ch}", line)
    return ("i", ch)


def assemble(text: str) -> TProcProgram:
    """Two-pass assembly of ``text``; errors carry 1-based line numbers."""
    labels: dict[str, int] = {}
    pending: list[tuple[int, str, list[str]]] = []   # (line, op, operand toks)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split("#", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(stmt)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AssemblyError(f"duplicate label {name!r}", lineno)
            labels[name] = len(pending)
            stmt = stmt[m.end():].strip()
        if not stmt:
            continue
        parts = stmt.split(None, 1)
        op = parts[0].upper()
        if op not in _OPCODES:
            raise AssemblyError(f"unknown opcode {parts[0]!r}", lineno)
        toks = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []
        pending.append((lineno, op, toks))

    def argc(line, op, toks, n):
        if len(toks) != n:
            raise AssemblyError(f"{op} takes {n} operand(s), got {len(toks)}", line)

    instrs: list[Instruction] = []
    for line, op, toks in pending:
        if op == "SET":
            argc(line, op, toks, 2)
            args = (_parse_reg(toks[0], line), _parse_imm(toks[1], line))
        elif op == "ADD":
            argc(line, op, toks, 3)
            args = (_parse_reg(toks[0], line), _parse_reg(toks[1], line),
                    _parse_value(toks[2], line))
        elif op in _BRANCH_OPS:
            want = 1 if op == "JMP" else 2
            argc(line, op, toks, want)
            name = toks[-1]
            if name not in labels:
                raise AssemblyError(f"undefined label {name!r}", line)
            target = ("i", labels[name])
            args = (target,) if op == "JMP" else (_parse_reg(toks[0], line), target)
        elif op in ("TRIG", "ACQ"):
            argc(line, op, toks, 3)
            args = (_parse_channel(toks[0], line), _parse_value(toks[1], line),
                    _parse_time(toks[2], line))
        elif op == "WAITT":
            argc(line, op, toks, 1)
            args = (_parse_time(toks[0], line),)
        else:   # SYNC, END
            argc(line, op, toks, 0)
            args = ()
        instrs.append(Instruction(op, args))
    return TProcProgram(tuple(instrs))


def disassemble(program: TProcProgram) -> str:
    """Canonical listing; assemble(disassemble(p)) == p."""
    targets = set()
    for ins in program.instructions:
        if ins.op in _BRANCH_OPS:
            targets.add(ins.args[-1][1])

    def fmt(arg):
        tag, v = arg
        if tag == "r":
            return f"r{v}"
        if tag == "i":
            return str(v)
        if tag == "@i":
            return f"@{v}"
        if tag == "@r":
            return f"@r{v}"
        return f"+{v}"

    lines = []
    for idx, ins in enumerate(program.instructions):
        if idx in targets:
            lines.append(f"L{idx}:")
        if ins.op in _BRANCH_OPS:
            ops = [fmt(a) for a in ins.args[:-1]] + [f"L{ins.args[-1][1]}"]
        else:
            ops = [fmt(a) for a in ins.args]
        if ops:
            lines.append(f"    {ins.op} " + ", ".join(ops))
        else:
            lines.append(f"    {ins.op}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# execution state and events

class EventKind(enum.Enum):
    PULSE_START = "pulse_start"
    ACQUIRE_START = "acquire_start"


@dataclass(frozen=True)
class TimedEvent:
    kind: EventKind
    channel: int
    config_id: int
    t_ticks: int        # dispatcher ticks since the last counter reset
    abs_tick: int       # dispatcher ticks since the simulation epoch
    core_cycle: int     # core cycle at which the event was issued


@dataclass
class TProcState:
    pc: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * NREGS)
    time_counter: int = 0           # dispatcher ticks since last reset
    core_cycle: int = 0
    fetch_en: bool = True
    ready_pin: PinState = PinState.DRIVEN_LOW
    halted: bool = False
    tick_epoch: int = 0             # absolute tick at the last counter reset
    wait_until: int | None = None
    sync_index: int | None = None   # pc of the SYNC currently stalled on
    legacy_pending: int | None = None

    def reg(self, k: int) -> int:
        return self.regs[k]


def _value(state: TProcState, arg) -> int:
    tag, v = arg
    return state.regs[v] if tag == "r" else v


def _event_time(state: TProcState, arg) -> int:
    tag, v = arg
    if tag == "@i":
        return v
    if tag == "@r":
        return state.regs[v]
    return state.time_counter + v


def _issue(state: TProcState, kind: EventKind, ins: Instruction) -> TimedEvent:
    ch = _value(state, ins.args[0])
    cfg = _value(state, ins.args[1])
    t = _event_time(state, ins.args[2])
    if t < state.time_counter:
        raise ScheduleViolation(
            f"{ins.op} at pc={state.pc} schedules tick {t} but the dispatch "
            f"counter is already at {state.time_counter}")
    return TimedEvent(kind, ch, cfg, t, state.tick_epoch + t, state.core_cycle)


def _execute(state: TProcState, program: TProcProgram) -> list[TimedEvent]:
    """Run the instruction at ``state.pc`` for one cycle; WAITT may stall."""
    if state.pc >= len(program.instructions) or state.pc < 0:
        raise TProcError(f"pc {state.pc} out of range; program must END")
    ins = program.instructions[state.pc]
    events: list[TimedEvent] = []
    op = ins.op
    if op == "WAITT":
        target = _event_time(state, ins.args[0]) if state.wait_until is None \
            else state.wait_until
        if state.time_counter < target:
            state.wait_until = target
            state.time_counter += TICKS_PER_CYCLE   # stalled, clock runs on
            return events
        state.wait_until = None
        state.pc += 1
    elif op == "SET":
        state.regs[ins.args[0][1]] = _wrap32(ins.args[1][1])
        state.pc += 1
    elif op == "ADD":
        state.regs[ins.args[0][1]] = _wrap32(
            state.regs[ins.args[1][1]] + _value(state, ins.args[2]))
        state.pc += 1
    elif op == "JMP":
        state.pc = ins.args[0][1]
    elif op == "BNZ":
        state.pc = ins.args[1][1] if state.regs[ins.args[0][1]] != 0 \
            else state.pc + 1
    elif op == "LOOPNZ":
        k = ins.args[0][1]
        state.regs[k] = _wrap32(state.regs[k] - 1)
        state.pc = ins.args[1][1] if state.regs[k] != 0 else state.pc + 1
    elif op == "TRIG":
        events.append(_issue(state, EventKind.PULSE_START, ins))
        state.pc += 1
    elif op == "ACQ":
        events.append(_issue(state, EventKind.ACQUIRE_START, ins))
        state.pc += 1
    elif op == "SYNC":
        state.ready_pin = PinState.RELEASED
        state.fetch_en = False
        state.sync_index = state.pc
        return events                  # counter freezes while stalled
    elif op == "END":
        state.halted = True
        return events
    state.time_counter += TICKS_PER_CYCLE
    return events


def _resume(state: TProcState):
    state.fetch_en = True
    state.ready_pin = PinState.DRIVEN_LOW
    state.time_counter = 0
    state.tick_epoch = TICKS_PER_CYCLE * state.core_cycle
    state.pc += 1
    state.sync_index = None
    state.legacy_pending = None


def _step(state: TProcState, program: TProcProgram, ext_flag: bool,
          legacy: bool) -> tuple[TProcState, list[TimedEvent]]:
    if state.halted:
        raise TProcError("cannot step a halted core")
    events: list[TimedEvent] = []
    if not state.fetch_en:
        # Stalled at SYNC.  The modified core resumes on the first cycle the
        # registered flag is high; the legacy core drains its flush first.
        fire = False
        if legacy:
            if state.legacy_pending is not None:
                state.legacy_pending -= 1
                fire = state.legacy_pending <= 0
            elif ext_flag:
                phase = state.sync_index % 3
                if phase == 0:
                    fire = True
                else:
                    state.legacy_pending = phase
        else:
            fire = ext_flag
        if fire:
            _resume(state)
            events = _execute(state, program)
    else:
        events = _execute(state, program)
    if not state.halted:
        state.core_cycle += 1
    return state, events


def step(state: TProcState, program: TProcProgram,
         ext_flag: bool = False) -> tuple[TProcState, list[TimedEvent]]:
    """One pl_refclk cycle of the modified (deterministic-sync) core.

    ``ext_flag`` is the release flag registered from the previous edge.
    """
    return _step(state, program, ext_flag, legacy=False)


def step_legacy(state: TProcState, program: TProcProgram,
                ext_flag: bool = False) -> tuple[TProcState, list[TimedEvent]]:
    """One cycle of the unmodified core: the conditional-SYNC flush delays
    flag sampling by (sync instruction index mod 3) cycles."""
    return _step(state, program, ext_flag, legacy=True)


# ---------------------------------------------------------------------------
# whole-program execution

@dataclass(frozen=True)
class SyncRecord:
    sync_cycle: int      # cycle the SYNC was fetched (ready asserted)
    flag_edge: int       # edge carrying the release flag
    resume_cycle: int    # cycle execution continued


@dataclass
class Trace:
    events: list[TimedEvent]
    syncs: list[SyncRecord]
    cycles: int
    instructions: int


class LocalBarrier:
    """Single-board sync source: the wired-AND of one pin goes high as soon
    as it is released, so the FSM flags on the next edge."""

    def flag_edge(self, ready_cycle: int) -> int:
        return ready_cycle + 1


def run_until_barrier(state: TProcState, program: TProcProgram,
                      watchdog: int = 1_000_000) -> tuple[list[TimedEvent], str, int]:
    """Execute until the core stalls at SYNC or halts.

    WAITT stalls are fast-forwarded in O(1) with semantics identical to
    per-cycle stepping.  Returns (events, 'sync'|'end', instructions).
    """
    events: list[TimedEvent] = []
    executed = 0
    while True:
        if state.halted:
            return events, "end", executed
        if not state.fetch_en:
            return events, "sync", executed
        if executed >= watchdog:
            raise WatchdogExceeded(
                f"{watchdog} instructions executed without reaching SYNC/END")
        if state.pc >= len(program.instructions) or state.pc < 0:
            raise TProcError(f"pc {state.pc} out of range; program must END")
        ins = program.instructions[state.pc]
        if ins.op == "WAITT":
            target = state.wait_until if state.wait_until is not None \
                else _event_time(state, ins.args[0])
            state.wait_until = target      # pin: relative targets are
            if state.time_counter < target:  # measured at fetch, not resume
                stall = -((state.time_counter - target) // TICKS_PER_CYCLE)
                state.core_cycle += stall
                state.time_counter += stall * TICKS_PER_CYCLE
        events.extend(_execute(state, program))
        executed += 1
        if not state.halted and state.fetch_en:
            state.core_cycle += 1


def resume_from_barrier(state: TProcState, flag_edge: int,
                        legacy: bool = False):
    """Restart a SYNC-stalled core given the flag's edge index.

    The flag is read on the following edge; the legacy core adds its flush
    phase on top.  The dispatch counter restarts at zero on the resume edge.
    """
    if state.fetch_en:
        raise TProcError("core is not stalled at a SYNC")
    phase = (state.sync_index % 3) if legacy else 0
    state.core_cycle = flag_edge + 1 + phase
    _resume(state)


def run(state: TProcState, program: TProcProgram, sync_source=None,
        legacy: bool = False, watchdog: int = 1_000_000) -> Trace:
    """Run to completion, resolving SYNC barriers through ``sync_source``."""
    sync_source = sync_source or LocalBarrier()
    events: list[TimedEvent] = []
    syncs: list[SyncRecord] = []
    executed = 0
    while True:
        evs, why, n = run_until_barrier(state, program, watchdog - executed)
        events.extend(evs)
        executed += n
        if why == "end":
            return Trace(events, syncs, state.core_cycle, executed)
        ready = state.core_cycle
        flag = sync_source.flag_edge(ready)
        resume_from_barrier(state, flag, legacy=legacy)
        syncs.append(SyncRecord(ready, flag, state.core_cycle))


def event_sim_time(event: TimedEvent, time_domain: ClockDomain,
                   rng=None) -> int:
    """Absolute femtosecond timestamp of an event on a board's time clock."""
    return time_domain.edge_time(event.abs_tick, rng)


def write_trace_csv(fp, board_events: dict, time_domains: dict):
    """CSV export: ``board,cycle,event_kind,channel,time_fs`` per event."""
    fp.write("board,cycle,event_kind,channel,time_fs\n")
    for board in sorted(board_events):
        dom = time_domains[board]
        for ev in board_events[board]:
            fp.write(f"{board},{ev.abs_tick},{ev.kind.value},{ev.channel},"
                     f"{event_sim_time(ev, dom)}\n")
