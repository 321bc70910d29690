"""Signal synthesis and acquisition chains.

Generation: full-speed DDS (envelope at the DAC rate), interpolated DDS
(envelope at 1/16 rate, linear upsampling) and the multiplexed generator
(up to 8 gated tones summed digitally).  Acquisition: standard DDC
(mix, 64-tap lowpass, decimate by 8) and the 8-subband polyphase filter
bank with per-subband fine demodulation.  Plus Nyquist-zone arithmetic,
the converter tile-latency (MTS) model, and the ideal analog channel that
stands between DAC and ADC in loopback tests.

All operations are pure array transforms, deterministic for fixed inputs
and seeds.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from .timebase import as_hz

DAC_RATE = Fraction(5_898_240_000)     # 5.89824 GSPS
ADC_RATE = Fraction(2_457_600_000)     # 2.4576 GSPS
INTERP_FACTOR = 16                     # interpolated generator envelope ratio
DDC_DECIM = 8
N_SUBBANDS = 8
MAX_MUX_TONES = 8

_DDC_TAPS = 64
_PFB_TAPS_PER_BRANCH = 8


class RateMismatch(ValueError):
    pass


@dataclass
class Waveform:
    """Envelope samples in [-1, 1] at a stated sample rate."""

    samples: np.ndarray
    sample_rate: Fraction

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.sample_rate = as_hz(self.sample_rate)
        if self.samples.size == 0:
            raise ValueError("waveform must be non-empty")
        peak = np.max(np.abs(self.samples))
        if peak > 1.0 + 1e-12:
            raise ValueError(f"waveform exceeds full scale: |s|max = {peak}")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ToneConfig:
    freq_hz: float
    phase_rad: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError(f"gain must be in [0, 1], got {self.gain}")
        if self.freq_hz < 0:
            raise ValueError("tone frequency must be >= 0")


@dataclass(frozen=True)
class GenConfig:
    """Signal-generator flavor and placement (tile drives MTS offsets)."""

    kind: str                      # full_speed | interpolated | multiplexed
    tile: int = 0
    dac_rate: Fraction = DAC_RATE


@dataclass(frozen=True)
class ReadoutConfig:
    kind: str                      # standard | multiplexed
    ddc_freq_hz: float = 0.0
    decim: int = DDC_DECIM
    adc_rate: Fraction = ADC_RATE


@dataclass
class TileLatency:
    """Per-tile converter latency in DAC sample periods."""

    offsets: dict[int, int]
    mts_enabled: bool = True

    def __post_init__(self):
        if self.mts_enabled and len(set(self.offsets.values())) > 1:
            raise ValueError("MTS enabled requires equal per-tile offsets")


# ---------------------------------------------------------------------------
# generation

def _check_rate(wave: Waveform, expect: Fraction, what: str):
    if wave.sample_rate != expect:
        raise RateMismatch(
            f"{what}: envelope rate {float(wave.sample_rate):g} Hz, "
            f"expected {float(expect):g} Hz")


def _carrier(n: int, tone: ToneConfig, rate: Fraction) -> np.ndarray:
    if tone.freq_hz >= float(rate):
        raise ValueError(f"tone at {tone.freq_hz:g} Hz is not a digital "
                         f"frequency below {float(rate):g} Hz")
    w = 2.0 * np.pi * tone.freq_hz / float(rate)
    return np.cos(w * np.arange(n) + tone.phase_rad)


def synth_fullspeed(env: Waveform, tone: ToneConfig,
                    dac_rate: Fraction = DAC_RATE) -> np.ndarray:
    """DDS at the full DAC rate: s[i] = gain * env[i] * cos(w i + phase)."""
    _check_rate(env, dac_rate, "full-speed generator")
    return tone.gain * env.samples * _carrier(len(env), tone, dac_rate)


def upsample_linear(samples: np.ndarray, factor: int) -> np.ndarray:
    """Linear interpolation by an integer factor; holds the last value over
    the final fractional span."""
    n = len(samples)
    pos = np.arange(n * factor) / factor
    return np.interp(pos, np.arange(n), samples)


def synth_interpolated(env: Waveform, tone: ToneConfig,
                       dac_rate: Fraction = DAC_RATE) -> np.ndarray:
    """Envelope at dac_rate/16, linearly upsampled, then modulated."""
    _check_rate(env, dac_rate / INTERP_FACTOR, "interpolated generator")
    up = upsample_linear(env.samples, INTERP_FACTOR)
    return tone.gain * up * _carrier(len(up), tone, dac_rate)


def synth_mux(tones, length: int,
              dac_rate: Fraction = DAC_RATE) -> tuple[np.ndarray, int]:
    """Sum of up to 8 rectangular-gated tones; returns (samples, clip count)."""
    tones = list(tones)
    if len(tones) > MAX_MUX_TONES:
        raise ValueError(f"multiplexed generator supports <= {MAX_MUX_TONES} "
                         f"tones, got {len(tones)}")
    out = np.zeros(length)
    for t in tones:
        out += t.gain * _carrier(length, t, dac_rate)
    clipped = int(np.count_nonzero(np.abs(out) > 1.0))
    return np.clip(out, -1.0, 1.0), clipped


# ---------------------------------------------------------------------------
# Nyquist-zone arithmetic

def nyquist_zone(f, fs) -> int:
    """1-based zone index: zone = floor(f / (fs/2)) + 1."""
    f = Fraction(f)
    if f < 0:
        raise ValueError("frequency must be >= 0")
    half = as_hz(fs) / 2
    return int(f / half) + 1


def alias_freq(f, fs) -> Fraction:
    """Image of f in the first Nyquist zone of a sampler at fs (exact)."""
    f = Fraction(f)
    if f < 0:
        raise ValueError("frequency must be >= 0")
    fs = as_hz(fs)
    r = f % fs
    return fs - r if r > fs / 2 else r


# ---------------------------------------------------------------------------
# acquisition

def design_lowpass(num_taps: int, cutoff_cycles: float,
                   window: str = "hamming") -> np.ndarray:
    """Windowed-sinc FIR, unity DC gain; cutoff in cycles/sample."""
    n = np.arange(num_taps)
    h = 2 * cutoff_cycles * np.sinc(2 * cutoff_cycles * (n - (num_taps - 1) / 2))
    h *= {"hamming": np.hamming, "blackman": np.blackman,
          "hann": np.hanning}[window](num_taps)
    return h / h.sum()


_DDC_FIR = design_lowpass(_DDC_TAPS, 1.0 / 16.0, "hamming")


def ddc_decimate(samples: np.ndarray, ddc_freq_hz: float,
                 adc_rate: Fraction = ADC_RATE,
                 decim: int = DDC_DECIM) -> np.ndarray:
    """Standard readout: mix to baseband, lowpass, keep every 8th sample."""
    if decim != DDC_DECIM:
        raise ValueError(f"decimation factor is fixed at {DDC_DECIM}")
    x = np.asarray(samples)
    n = np.arange(len(x))
    mixed = x * np.exp(-2j * np.pi * ddc_freq_hz / float(adc_rate) * n)
    y = np.convolve(mixed, _DDC_FIR)[:len(x)]
    return y[::decim][:len(x) // decim]


_PFB_FIR = design_lowpass(N_SUBBANDS * _PFB_TAPS_PER_BRANCH,
                          1.0 / (2 * N_SUBBANDS), "blackman")


def pfb_channelize(samples: np.ndarray, n_ch: int = N_SUBBANDS) -> np.ndarray:
    """Critically sampled polyphase filter bank.

    Returns an (n_ch, len//n_ch) complex array; subband k is centered at
    k*fs/n_ch and decimated by n_ch.  A tone exactly at a subband center
    comes out at DC with its input amplitude.
    """
    if n_ch != N_SUBBANDS:
        raise ValueError(f"channelizer is fixed at {N_SUBBANDS} subbands")
    x = np.asarray(samples)
    if len(x) % n_ch:
        raise ValueError(f"input length {len(x)} is not a multiple of {n_ch}")
    frames = x.reshape(-1, n_ch)
    m = frames.shape[0]
    hp = _PFB_FIR.reshape(_PFB_TAPS_PER_BRANCH, n_ch)
    branches = np.zeros((m, n_ch), dtype=np.complex128)
    for p in range(n_ch):
        branches[:, p] = np.convolve(frames[:, p], hp[:, p])[:m]
    return np.fft.fft(branches, axis=1).T


def fine_ddc(subband: np.ndarray, offset_hz: float,
             subband_rate: Fraction) -> np.ndarray:
    """Per-subband NCO: shift a tone ``offset_hz`` from the subband center
    down to DC."""
    n = np.arange(len(subband))
    return subband * np.exp(-2j * np.pi * offset_hz / float(subband_rate) * n)


def integrate(iq: np.ndarray, window: int) -> complex:
    """Mean of the first ``window`` complex samples."""
    iq = np.asarray(iq)
    if window <= 0:
        raise ValueError("integration window must be positive")
    if window > len(iq):
        raise ValueError(f"window {window} exceeds stream length {len(iq)}")
    return complex(np.mean(iq[:window]))


# ---------------------------------------------------------------------------
# tile latency / MTS

def apply_mts(tiles: TileLatency, enable: bool, seed: int = 0) -> TileLatency:
    """Enabled: deterministic common latency (0).  Disabled: seeded
    pseudo-random per-tile offsets of 0..3 sample periods."""
    ids = sorted(tiles.offsets)
    if enable:
        return TileLatency({t: 0 for t in ids}, mts_enabled=True)
    rng = random.Random(seed)
    return TileLatency({t: rng.randrange(4) for t in ids}, mts_enabled=False)


# ---------------------------------------------------------------------------
# ideal analog channel (loopback tests)

def channel_to_adc(envelope_dac: np.ndarray, rf_hz,
                   adc_rate: Fraction = ADC_RATE,
                   dac_rate: Fraction = DAC_RATE,
                   gain: float = 1.0, noise_sigma: float = 0.0,
                   rng=None, iq: bool = False) -> np.ndarray:
    """Ideal stand-in for the balun/cable chain plus the ADC front end.

    Selects the RF image at ``rf_hz`` from the DAC output, carries the
    envelope across (polyphase resampling to the ADC rate), and emits ADC
    samples of the folded carrier: real samples by default, complex when
    the converter pair runs in IQ mode.
    """
    ratio = as_hz(adc_rate) / as_hz(dac_rate)
    env = resample_poly(np.asarray(envelope_dac, dtype=np.float64),
                        ratio.numerator, ratio.denominator)
    f_img = float(alias_freq(rf_hz, adc_rate))
    n = np.arange(len(env))
    w = 2 * np.pi * f_img / float(adc_rate)
    carrier = np.exp(1j * w * n) if iq else np.cos(w * n)
    y = gain * env * carrier
    if noise_sigma > 0.0:
        rng = rng or np.random.default_rng(0)
        y = y + rng.normal(0.0, noise_sigma, len(y)) * (1 + 1j if iq else 1)
    return y


def tones_to_adc(tones, n_samples: int, adc_rate: Fraction = ADC_RATE,
                 noise_sigma: float = 0.0, rng=None) -> np.ndarray:
    """IQ-mode capture of a set of RF tones: the converter pair delivers the
    analytic signal, so each tone wraps modulo the sample rate (no mirror
    fold, unlike real sampling)."""
    m = np.arange(n_samples)
    y = np.zeros(n_samples, dtype=np.complex128)
    for t in tones:
        f = float(Fraction(t.freq_hz) % as_hz(adc_rate))
        y += t.gain * np.exp(1j * (2 * np.pi * f / float(adc_rate) * m
                                   + t.phase_rad))
    if noise_sigma > 0.0:
        rng = rng or np.random.default_rng(0)
        y = y + rng.normal(0.0, noise_sigma, n_samples) \
            + 1j * rng.normal(0.0, noise_sigma, n_samples)
    return y


# ---------------------------------------------------------------------------
# waveform import/export

def waveform_to_csv(wave: Waveform, fp):
    fp.write("index,value\n")
    for i, v in enumerate(wave.samples):
        fp.write(f"{i},{float(v)!r}\n")


def waveform_from_csv(fp, sample_rate) -> Waveform:
    header = fp.readline().strip()
    if header != "index,value":
        raise ValueError(f"unexpected waveform CSV header: {header!r}")
    vals = [float(line.split(",")[1]) for line in fp if line.strip()]
    return Waveform(np.array(vals), as_hz(sample_rate))


_BIN_MAGIC = b"BSWF"


def waveform_to_bin(wave: Waveform, fp):
    """Little-endian float32 samples behind a (rate, length) header."""
    fp.write(_BIN_MAGIC)
    fp.write(struct.pack("<dI", float(wave.sample_rate), len(wave)))
    fp.write(wave.samples.astype("<f4").tobytes())


def waveform_from_bin(fp) -> Waveform:
    magic = fp.read(4)
    if magic != _BIN_MAGIC:
        raise ValueError("not a waveform binary file")
    rate, n = struct.unpack("<dI", fp.read(12))
    data = np.frombuffer(fp.read(4 * n), dtype="<f4").astype(np.float64)
    if len(data) != n:
        raise ValueError("truncated waveform binary file")
    return Waveform(data, Fraction(rate))


# ---------------------------------------------------------------------------
# stock envelopes

def square_envelope(n_samples: int, amplitude: float = 1.0,
                    rate: Fraction = DAC_RATE) -> Waveform:
    return Waveform(np.full(n_samples, amplitude), rate)


def gaussian_envelope(n_samples: int, sigma_samples: float,
                      rate: Fraction = DAC_RATE) -> Waveform:
    n = np.arange(n_samples)
    mid = (n_samples - 1) / 2
    return Waveform(np.exp(-0.5 * ((n - mid) / sigma_samples) ** 2), rate)


def ramp_envelope(n_samples: int, rate: Fraction = DAC_RATE) -> Waveform:
    return Waveform(np.linspace(0.0, 1.0, n_samples), rate)
