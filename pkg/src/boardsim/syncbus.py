"""Shared wired-AND barrier line and the per-board sync FSM.

Every board drives one open-drain pin on a single shared wire.  The wire
reads high only when all pins are released, which is the N-way barrier
condition.  Each board's FSM samples the (registered) line once per
pl_refclk edge and emits a one-cycle release flag when the barrier is
satisfied; the flag edge is identical on every board with synchronized
clocks.

Two-phase update contract: FSM outputs at edge k depend only on the pin
vector as of edge k-1 (plus wire propagation delay), so boards may be
stepped in any order within an edge.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .timebase import ClockDomain, ClockTree


class PinState(enum.Enum):
    DRIVEN_LOW = "driven_low"
    RELEASED = "released"      # high-impedance


class SyncFsm(enum.Enum):
    IDLE = "idle"
    AWAITING_ALL = "awaiting_all"
    RELEASING = "releasing"


@dataclass(frozen=True)
class SyncIpState:
    fsm: SyncFsm = SyncFsm.IDLE
    pin: PinState = PinState.DRIVEN_LOW
    flag_out: bool = False


class EmptyBusError(ValueError):
    """A bus with no pins has no defined level."""


def line_level(pins) -> bool:
    """True (high) iff every pin is released; any driver pulls the line low."""
    pins = list(pins)
    if not pins:
        raise EmptyBusError("wired-AND line with zero pins is ambiguous")
    return all(p is PinState.RELEASED for p in pins)


def sync_ip_step(state: SyncIpState, line_high: bool,
                 edge_time_fs: int) -> tuple[SyncIpState, int | None]:
    """Advance one board's sync FSM by one pl_refclk edge.

    ``line_high`` must be the registered line level (previous edge's pin
    vector, wire delay applied).  Returns the new state and, when the FSM
    releases, the flag pulse timestamp (== ``edge_time_fs``).
    """
    if state.fsm is SyncFsm.IDLE:
        if state.pin is PinState.RELEASED:
            return replace(state, fsm=SyncFsm.AWAITING_ALL, flag_out=False), None
        return replace(state, flag_out=False), None
    if state.fsm is SyncFsm.AWAITING_ALL:
        if line_high:
            return replace(state, fsm=SyncFsm.RELEASING, flag_out=True), edge_time_fs
        return state, None
    # RELEASING lasts exactly one cycle: re-drive the pin, return to idle.
    return SyncIpState(fsm=SyncFsm.IDLE, pin=PinState.DRIVEN_LOW,
                       flag_out=False), None


class WiredAndBus:
    """Lockstep simulation of one shared line plus one sync FSM per board.

    The caller owns the schedule: it releases pins at edges (via
    ``set_ready``) and calls ``step_edge`` once per rising pl_refclk edge in
    increasing edge order.  Flags are reported per board per edge.
    """

    def __init__(self, n_boards: int, pl_domain: ClockDomain,
                 propagation_delay_fs: int = 0):
        if n_boards < 1:
            raise EmptyBusError("bus needs at least one board")
        self.pl = pl_domain
        self.delay_fs = int(propagation_delay_fs)
        self.states = [SyncIpState() for _ in range(n_boards)]
        # (edge_time_fs, pin vector) history for the delayed line level
        self._pin_history: list[tuple[int, tuple[PinState, ...]]] = [
            (-(1 << 62), tuple(PinState.DRIVEN_LOW for _ in range(n_boards)))]

    def set_ready(self, board: int):
        """Board's processor asserts readiness: release its open-drain pin."""
        st = self.states[board]
        self.states[board] = replace(st, pin=PinState.RELEASED)

    def _pins_at(self, t_fs: int) -> tuple[PinState, ...]:
        pins = self._pin_history[0][1]
        for when, vec in self._pin_history:
            if when <= t_fs:
                pins = vec
            else:
                break
        return pins

    def _record_pins(self, edge_time_fs: int):
        self._pin_history.append(
            (edge_time_fs, tuple(s.pin for s in self.states)))

    def step_edge(self, edge: int) -> list[int | None]:
        """Process one pl_refclk edge; returns per-board flag timestamps."""
        t_now = self.pl.edge_time(edge)
        t_prev = self.pl.edge_time(edge - 1) if edge > 0 else -(1 << 62)
        # Registered sample: the physical line at the previous edge, itself
        # showing the pin vector from delay_fs earlier.
        line = line_level(self._pins_at(t_prev - self.delay_fs))
        flags: list[int | None] = []
        for i, st in enumerate(self.states):
            new, flag = sync_ip_step(st, line, t_now)
            self.states[i] = new
            flags.append(flag)
        self._record_pins(t_now)
        return flags


def barrier_release_time(ready_times_fs, tree: ClockTree,
                         propagation_delay_fs: int = 0,
                         board: str | None = None) -> int:
    """Common flag edge for a complete set of per-board ready times.

    The release is the first pl_refclk edge at or after
    ``max(ready_times) + propagation_delay`` plus one FSM latency cycle.
    With synchronized clocks the result is identical for all boards.  A
    board that never becomes ready is the caller's timeout to report; this
    function requires one ready time per board.
    """
    ready = list(ready_times_fs)
    if not ready:
        raise EmptyBusError("barrier needs at least one ready time")
    bid = board if board is not None else tree.board_ids()[0]
    pl = tree.domain(bid, "pl_refclk")
    edge, _ = pl.edge_at_or_after(max(ready) + int(propagation_delay_fs))
    return pl.edge_time(edge + 1)
