"""Two-level clock distribution: a shared 7.68 MHz reference drives one clock
conditioner per board, which multiplies it into the FPGA and data-converter
domains.

Frequencies are exact rationals (`fractions.Fraction`, in Hz) and timestamps
are integer femtoseconds, so integer-ratio checks and cross-board equality
comparisons never see floating-point drift.  Rational periods are rounded to
integer femtoseconds only at the moment a timestamp is emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

FS_PER_SECOND = 10**15
FS_PER_NS = 10**6
FS_PER_PS = 10**3

#: Shared rack-level reference distributed to every board.
REF_HZ = Fraction(7_680_000)

#: Conditioner outputs and fabric domains as integer multiples of the reference.
DEFAULT_RATIOS = {
    "sysref": 1,         # 7.68 MHz converter alignment strobe
    "pl_refclk": 16,     # 122.88 MHz core + sync FSM clock
    "axi": 16,           # 122.88 MHz register/stream plumbing
    "dac_ref": 32,       # 245.76 MHz DAC PLL input
    "adc_ref": 32,       # 245.76 MHz ADC PLL input
    "axis": 48,          # 368.64 MHz stream clock
    "time": 48,          # 368.64 MHz dispatcher clock
    "dac_sample": 768,   # 5.89824 GSPS
    "adc_sample": 320,   # 2.4576 GSPS
}


def as_hz(value) -> Fraction:
    """Coerce ``value`` to an exact positive Fraction of hertz."""
    f = Fraction(value)
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {value!r}")
    return f


def derive_clock(ref, multiplier: int) -> Fraction:
    """Return ``ref * multiplier`` exactly.  ``multiplier`` must be >= 1."""
    if multiplier < 1 or multiplier != int(multiplier):
        raise ValueError(f"multiplier must be a positive integer, got {multiplier!r}")
    return as_hz(ref) * int(multiplier)


def period_fs(freq) -> Fraction:
    """Exact period of ``freq`` in femtoseconds (a Fraction, not yet rounded)."""
    return Fraction(FS_PER_SECOND) / as_hz(freq)


def emit_fs(x: Fraction) -> int:
    """Round an exact femtosecond quantity to an integer timestamp.

    Uses round-half-even on the exact rational, so results are reproducible
    and independent of any float representation.
    """
    return round(x)


@dataclass
class ClockDomain:
    """One named clock: an integer multiple of the shared reference plus a
    deterministic per-board skew and an optional white-jitter RMS."""

    name: str
    freq: Fraction
    ratio_to_ref: int
    phase_offset_fs: int = 0
    jitter_rms_fs: int = 0

    def __post_init__(self):
        self.freq = as_hz(self.freq)
        if self.jitter_rms_fs < 0:
            raise ValueError(f"{self.name}: jitter_rms_fs must be >= 0")

    @property
    def period(self) -> Fraction:
        return period_fs(self.freq)

    def edge_time(self, tick: int, rng=None) -> int:
        """Timestamp of rising edge ``tick`` in integer femtoseconds.

        Deterministic when ``rng`` is None; with a seeded ``random.Random``
        one Gaussian jitter sample of RMS ``jitter_rms_fs`` is added.
        """
        if tick < 0:
            raise ValueError("tick must be non-negative")
        t = emit_fs(tick * self.period) + self.phase_offset_fs
        if rng is not None and self.jitter_rms_fs > 0:
            t += round(rng.gauss(0.0, self.jitter_rms_fs))
        return t

    def edge_at_or_after(self, t_fs: int) -> tuple[int, int]:
        """Smallest ``(tick, edge_time)`` with edge_time >= ``t_fs`` (no jitter)."""
        base = Fraction(t_fs - self.phase_offset_fs)
        k = max(0, math.ceil(base / self.period))
        while k > 0 and self.edge_time(k - 1) >= t_fs:
            k -= 1
        while self.edge_time(k) < t_fs:
            k += 1
        return k, self.edge_time(k)


def edge_time(domain: ClockDomain, tick: int, rng=None) -> int:
    return domain.edge_time(tick, rng)


@dataclass
class ClockTree:
    """Reference frequency plus the per-board map of derived domains."""

    ref: Fraction = REF_HZ
    boards: dict[str, dict[str, ClockDomain]] = field(default_factory=dict)

    def domain(self, board: str, name: str) -> ClockDomain:
        return self.boards[board][name]

    def board_ids(self) -> list[str]:
        return list(self.boards)


@dataclass
class TreeReport:
    valid: bool
    ratios: dict[str, set[int]]
    violations: list[str]


def default_tree(board_ids=("A", "B"), phase_offsets_fs=None,
                 jitter_rms_fs=0) -> ClockTree:
    """Build the stock tree: every board carries the full domain set.

    ``phase_offsets_fs`` maps board id to a deterministic skew (cable-length
    mismatch); unlisted boards get 0 fs.  ``jitter_rms_fs`` applies to every
    domain of every board.
    """
    phase_offsets_fs = phase_offsets_fs or {}
    tree = ClockTree(ref=REF_HZ)
    for bid in board_ids:
        off = int(phase_offsets_fs.get(bid, 0))
        tree.boards[bid] = {
            name: ClockDomain(name, derive_clock(REF_HZ, ratio), ratio,
                              phase_offset_fs=off, jitter_rms_fs=jitter_rms_fs)
            for name, ratio in DEFAULT_RATIOS.items()
        }
    return tree


def validate_tree(tree: ClockTree) -> TreeReport:
    """Check every domain is an exact integer multiple of the reference.

    Returns a report rather than raising; violations name the offending
    board/domain pairs.
    """
    violations = []
    ratios: dict[str, set[int]] = {}
    for bid, domains in tree.boards.items():
        seen = set()
        for name, dom in domains.items():
            ratio = dom.freq / tree.ref
            if ratio.denominator != 1 or ratio < 1:
                violations.append(
                    f"{bid}/{name}: {float(dom.freq):g} Hz is not an integer "
                    f"multiple of the {float(tree.ref):g} Hz reference")
                continue
            if int(ratio) != dom.ratio_to_ref:
                violations.append(
                    f"{bid}/{name}: declared ratio {dom.ratio_to_ref} but "
                    f"freq implies {int(ratio)}")
                continue
            seen.add(int(ratio))
        ratios[bid] = seen
    return TreeReport(valid=not violations, ratios=ratios, violations=violations)
