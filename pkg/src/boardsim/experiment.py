"""Declarative experiment description and the logical-to-physical channel map.

An :class:`Experiment` lists pulses, acquisitions, up to two sweep axes and
a shot count; a :class:`BoardMap` binds each logical channel to a board,
generator (or readout slot) and converter tile.  Times and durations are
integer femtoseconds at this level; the compiler snaps them to hardware
grids (dispatcher ticks for starts, DAC samples for durations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .timebase import FS_PER_NS, REF_HZ, derive_clock, period_fs

DAC_SAMPLE_FS = period_fs(derive_clock(REF_HZ, 768))     # exact Fraction
TIME_TICK_FS = period_fs(derive_clock(REF_HZ, 48))
DEFAULT_RELAX_FS = 100 * 10**9          # 100 us between repetitions

REALTIME_PARAMS = ("frequency", "amplitude", "phase", "start_time", "duration")
HOSTLOOP_PARAMS = ("dc_bias",)
WILDCARD = "*"


class ExperimentError(ValueError):
    pass


@dataclass
class Pulse:
    channel: str
    kind: str                     # drive | flux | readout
    shape: str = "square"         # square | gaussian
    start_fs: int = 0
    duration_fs: int = 0
    freq_hz: float = 0.0
    amp: float = 1.0              # DAC-relative gain
    phase_rad: float = 0.0
    sigma_fs: int | None = None   # gaussian width

    def __post_init__(self):
        if self.kind not in ("drive", "flux", "readout"):
            raise ExperimentError(f"unknown pulse kind {self.kind!r}")
        if self.shape not in ("square", "gaussian"):
            raise ExperimentError(f"unknown pulse shape {self.shape!r}")
        if self.start_fs < 0 or self.duration_fs < 0:
            raise ExperimentError("pulse start/duration must be >= 0")
        if not 0.0 <= self.amp <= 1.0:
            raise ExperimentError("pulse amp is DAC-relative, in [0, 1]")


@dataclass
class Acquisition:
    channel: str
    start_fs: int
    window_fs: int
    probe_hz: float

    def __post_init__(self):
        if self.start_fs < 0 or self.window_fs <= 0:
            raise ExperimentError("acquisition needs start >= 0, window > 0")


@dataclass
class SweepSpec:
    parameter: str
    channel: str                  # logical channel or "*"
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if self.parameter not in REALTIME_PARAMS + HOSTLOOP_PARAMS:
            raise ExperimentError(f"unknown sweep parameter {self.parameter!r}")
        if self.step <= 0:
            raise ExperimentError("sweep step must be > 0")
        if self.stop < self.start:
            raise ExperimentError("sweep stop must be >= start")

    @property
    def mode(self) -> str:
        return "HostLoop" if self.parameter in HOSTLOOP_PARAMS else "RealTime"

    def values(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [self.start + i * self.step for i in range(n)]


@dataclass
class Experiment:
    pulses: list[Pulse] = field(default_factory=list)
    acquisitions: list[Acquisition] = field(default_factory=list)
    sweeps: list[SweepSpec] = field(default_factory=list)
    nshots: int = 1
    sync_policy: str = "PerShot"            # PerShot | Once
    relax_fs: int = DEFAULT_RELAX_FS
    dc_bias_v: dict[str, float] = field(default_factory=dict)
    rf_fullscale_v: float = 1.0
    physics_mode: str = "spectroscopy"      # spectroscopy | chevron
    chevron_pair: tuple[int, int] | None = None
    chevron_flux_channel: str | None = None
    averaged: bool = False

    def __post_init__(self):
        if self.nshots < 1:
            raise ExperimentError("nshots must be >= 1")
        if self.sync_policy not in ("PerShot", "Once"):
            raise ExperimentError(f"unknown sync policy {self.sync_policy!r}")
        if len(self.sweeps) > 2:
            raise ExperimentError("at most two sweep axes are supported")
        if self.physics_mode not in ("spectroscopy", "chevron"):
            raise ExperimentError(f"unknown physics mode {self.physics_mode!r}")

    def readout_channel_names(self) -> list[str]:
        return [a.channel for a in self.acquisitions]


@dataclass(frozen=True)
class ChannelBinding:
    board: str
    kind: str                     # drive | flux | readout
    gen_id: int                   # generator (or mux slot for readout)
    tile: int = 0
    feedline: int | None = None
    slot: int | None = None       # readout subband slot
    qubit: int | None = None
    dc_channel: int | None = None # flux DC DAC channel


@dataclass
class BoardMap:
    boards: list[str]
    channels: dict[str, ChannelBinding]

    def __post_init__(self):
        seen = set()
        for name, b in self.channels.items():
            if b.board not in self.boards:
                raise ExperimentError(f"channel {name!r} bound to unknown "
                                      f"board {b.board!r}")
            if b.kind != "readout":
                key = (b.board, b.gen_id)
                if key in seen:
                    raise ExperimentError(
                        f"generator {key} assigned to more than one channel")
                seen.add(key)

    def binding(self, channel: str) -> ChannelBinding:
        try:
            return self.channels[channel]
        except KeyError:
            raise ExperimentError(f"channel {channel!r} is not mapped") \
                from None

    def feedline_channels(self, board: str) -> dict[int, list[str]]:
        """Readout channels per feedline on one board, slot order."""
        lines: dict[int, list[str]] = {}
        for name, b in self.channels.items():
            if b.board == board and b.kind == "readout":
                lines.setdefault(b.feedline, []).append(name)
        for line in lines.values():
            line.sort(key=lambda n: self.channels[n].slot)
        return lines


def default_board_map(boards=("A", "B")) -> BoardMap:
    """Two boards, five qubits each: per qubit an interpolated drive
    generator, a full-speed flux generator (with its DC DAC channel) and a
    multiplexed readout slot on the board's feedline."""
    channels: dict[str, ChannelBinding] = {}
    for row, board in enumerate(boards):
        feedline = row
        for col in range(5):
            q = 5 * row + col
            channels[f"q{q}.drive"] = ChannelBinding(
                board, "drive", gen_id=col, tile=col // 4, qubit=q)
            channels[f"q{q}.flux"] = ChannelBinding(
                board, "flux", gen_id=5 + col, tile=1 + (5 + col) // 4,
                qubit=q, dc_channel=col)
            channels[f"q{q}.ro"] = ChannelBinding(
                board, "readout", gen_id=12, tile=3, feedline=feedline,
                slot=col, qubit=q)
    return BoardMap(list(boards), channels)


# ---------------------------------------------------------------------------
# hardware-grid snapping

def snap_duration_samples(duration_fs: int) -> int:
    """Nearest whole number of DAC samples for a single (unswept) duration."""
    return round(Fraction(duration_fs) / DAC_SAMPLE_FS)


def duration_sweep_samples(start_fs: int, stop_fs: int,
                           step_fs: int) -> list[int]:
    """Duration-axis grid in DAC samples.

    Points run from the first sample count at/after ``start`` to the last
    at/before ``stop``, spaced by the requested step rounded to whole
    samples.  A step below one sample period is an error: the hardware
    grid cannot honor it.
    """
    if Fraction(step_fs) < DAC_SAMPLE_FS:
        raise ExperimentError(
            f"duration sweep step {step_fs} fs is below one DAC sample "
            f"period ({float(DAC_SAMPLE_FS):.0f} fs)")
    first = math.ceil(Fraction(start_fs) / DAC_SAMPLE_FS)
    last = math.floor(Fraction(stop_fs) / DAC_SAMPLE_FS)
    stride = round(Fraction(step_fs) / DAC_SAMPLE_FS)
    return list(range(first, last + 1, stride))


def fs_to_ticks(t_fs: int) -> int:
    """Dispatcher ticks for a start time (rounded to the tick grid)."""
    return round(Fraction(t_fs) / TIME_TICK_FS)


def ns(x: float) -> int:
    """Convenience: nanoseconds to integer femtoseconds."""
    return round(x * FS_PER_NS)
