"""Flux analog front-end: an 8-channel 16-bit DC DAC programmed over SPI,
combined with the RF flux path through an ideal bias tee.

The bias tee blocks the DC content of the RF path and passes the DC path
unchanged, so ``combined = v_dc + fullscale * (rf - mean(rf))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp import Waveform

log = logging.getLogger(__name__)

N_CHANNELS = 8
FULL_SCALE_V = 2.5          # output range is +/- 2.5 V
LSB_V = 5.0 / 65536


@dataclass
class DacRegisterFile:
    channel_codes: list[int] = field(default_factory=lambda: [0x8000] * N_CHANNELS)
    powered: bool = True

    def __post_init__(self):
        if len(self.channel_codes) != N_CHANNELS:
            raise ValueError(f"register file holds {N_CHANNELS} channels")
        for c in self.channel_codes:
            if not 0 <= c <= 0xFFFF:
                raise ValueError(f"code {c:#x} out of 16-bit range")


@dataclass(frozen=True)
class SpiFrame:
    """24-bit frame: rw(1) | address(7) | data(16).  rw=1 reads."""

    rw: int
    address: int
    data: int = 0

    def __post_init__(self):
        if self.rw not in (0, 1):
            raise ValueError("rw bit must be 0 (write) or 1 (read)")
        if not 0 <= self.address < 128:
            raise ValueError(f"address {self.address} out of 7-bit range")
        if not 0 <= self.data <= 0xFFFF:
            raise ValueError(f"data {self.data:#x} out of 16-bit range")

    def to_word(self) -> int:
        return (self.rw << 23) | (self.address << 16) | self.data

    @classmethod
    def from_word(cls, word: int) -> "SpiFrame":
        return cls((word >> 23) & 1, (word >> 16) & 0x7F, word & 0xFFFF)

    def hex(self) -> str:
        return f"{self.to_word():06x}"


def spi_transfer(regs: DacRegisterFile,
                 frame: SpiFrame) -> tuple[DacRegisterFile, int | None]:
    """Apply one frame to the register file.

    Writes to channel addresses 0..7 update the stored code; reads return
    it.  Reserved addresses are tolerated hardware-style: the transfer is
    ignored (write) or answers 0 (read), with a warning logged either way.
    """
    if frame.address >= N_CHANNELS:
        log.warning("SPI frame %s targets reserved address %d; ignored",
                    frame.hex(), frame.address)
        return regs, (0 if frame.rw else None)
    if frame.rw:
        return regs, regs.channel_codes[frame.address]
    regs.channel_codes[frame.address] = frame.data
    return regs, None


def code_to_voltage(code: int) -> float:
    """Bipolar straight-binary map: 0 -> -2.5 V, 0x8000 -> exactly 0 V."""
    if not 0 <= code <= 0xFFFF:
        raise ValueError(f"code {code} out of 16-bit range")
    return -FULL_SCALE_V + 5.0 * code / 65536


def voltage_to_code(volts: float) -> int:
    """Nearest code for a requested bias; clamps to the +/-2.5 V rails."""
    code = round((volts + FULL_SCALE_V) / 5.0 * 65536)
    return min(max(code, 0), 0xFFFF)


@dataclass
class FluxLineOutput:
    dc_v: float
    rf: Waveform
    combined_v: np.ndarray


def bias_tee_combine(v_dc: float, rf: Waveform,
                     rf_fullscale_volts: float = 1.0) -> FluxLineOutput:
    """Ideal bias tee: the RF path is AC-coupled (its mean is removed), the
    DC path passes straight through."""
    ac = rf.samples - np.mean(rf.samples)
    return FluxLineOutput(v_dc, rf, v_dc + rf_fullscale_volts * ac)


def flux_plateau(v_dc: float, gain: float, rf_fullscale_volts: float,
                 pulse_samples: int, window_samples: int) -> float:
    """Mean combined voltage over a square pulse's on-window when the pulse
    occupies ``pulse_samples`` of a ``window_samples``-long repetition.

    Closed form of ``bias_tee_combine`` on the full (pulse + idle) record:
    the AC coupling subtracts the duty-cycle mean from the plateau.
    """
    if window_samples <= 0 or not 0 <= pulse_samples <= window_samples:
        raise ValueError("pulse must fit inside its repetition window")
    if pulse_samples == 0:
        return v_dc
    duty = pulse_samples / window_samples
    return v_dc + rf_fullscale_volts * gain * (1.0 - duty)
