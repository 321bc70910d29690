"""Mock physics of a 10-qubit flux-tunable ladder QPU.

Converts control settings (flux voltages, pulse amplitude/duration, probe
tones) into readout IQ responses for the two validation experiments:
flux-dependent resonator spectroscopy and the two-qubit interaction
chevron.  The maps are standard-physics stubs, not Hamiltonian
simulations: a periodic sqrt-cos flux arc for the qubit frequency, a
dispersive g^2/Delta resonator pull, a Lorentzian dip for the feedline
response, and a detuned-Rabi two-level formula for the 11<->02 chevron.
Decoherence is ignored.

All parameters live in a seeded, JSON-serializable table so every derived
quantity is reproducible.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

N_QUBITS = 10
MAX_TONES_PER_FEEDLINE = 8

#: Ladder adjacency: rails of five qubits each, rungs pairing them.
LADDER_EDGES = tuple(
    [(i, i + 1) for i in range(4)] +          # top rail q0..q4
    [(i, i + 1) for i in range(5, 9)] +       # bottom rail q5..q9
    [(i, i + 5) for i in range(5)]            # rungs
)


@dataclass
class QubitModel:
    f_max_hz: float
    anharm_hz: float
    v0_v: float               # sweet-spot bias
    v_period_v: float         # flux period in line volts
    g_rq_hz: float            # qubit-resonator coupling

    def __post_init__(self):
        if self.f_max_hz <= 0 or self.v_period_v <= 0:
            raise ValueError("f_max and v_period must be positive")


@dataclass
class ResonatorModel:
    f_bare_hz: float
    kappa_hz: float
    feedline: int

    def __post_init__(self):
        if self.kappa_hz <= 0:
            raise ValueError("kappa must be positive")


@dataclass
class CouplingModel:
    pair: tuple[int, int]
    g_hz: float                   # 11<->02 coupling
    slope_hz_per_v: float         # detuning per volt of flux-pulse amplitude
    a_res_v: float                # pulse amplitude hitting the resonance

    def __post_init__(self):
        self.pair = tuple(self.pair)
        if self.pair not in LADDER_EDGES and self.pair[::-1] not in LADDER_EDGES:
            raise ValueError(f"{self.pair} is not a ladder edge")
        if self.g_hz <= 0:
            raise ValueError("coupling g must be positive")


@dataclass
class QpuParams:
    qubits: list[QubitModel]
    resonators: list[ResonatorModel]
    couplings: list[CouplingModel]
    noise_sigma: float = 0.01
    readout_contrast: float = 1.0
    seed: int = 0

    def feedline_of(self, qubit: int) -> int:
        return self.resonators[qubit].feedline

    def coupling_for(self, pair) -> CouplingModel:
        want = tuple(sorted(pair))
        for c in self.couplings:
            if tuple(sorted(c.pair)) == want:
                return c
        raise KeyError(f"no coupling defined for pair {pair}")


def default_qpu(seed: int = 2023) -> QpuParams:
    """Seeded 10-qubit table.

    Frequencies alternate 4.2/4.8 GHz along each rail (rung partners always
    differ); bare resonators span 7.40-7.60 GHz in 50 MHz steps per
    feedline; sweet spots are drawn in [-0.4, 0.4] V and flux periods in
    [1.0, 3.0] V snapped to 50 mV so periodicity lands on standard bias
    grids.
    """
    rng = random.Random(seed)
    qubits, resonators = [], []
    for q in range(N_QUBITS):
        row, col = divmod(q, 5)
        f_max = 4.2e9 if (col + row) % 2 == 0 else 4.8e9
        v0 = round(rng.uniform(-0.4, 0.4), 4)
        v_period = round(rng.uniform(1.0, 3.0) / 0.05) * 0.05
        qubits.append(QubitModel(f_max, -200e6, v0, v_period, 50e6))
        resonators.append(ResonatorModel(7.40e9 + 0.05e9 * col, 1e6, row))
    couplings = [CouplingModel(edge, 10e6, 500e6, 0.25)
                 for edge in LADDER_EDGES]
    return QpuParams(qubits, resonators, couplings, seed=seed)


def save_qpu(params: QpuParams, fp):
    json.dump(asdict(params), fp, indent=2)
    fp.write("\n")


def load_qpu(fp) -> QpuParams:
    raw = json.load(fp)
    return QpuParams(
        qubits=[QubitModel(**q) for q in raw["qubits"]],
        resonators=[ResonatorModel(**r) for r in raw["resonators"]],
        couplings=[CouplingModel(**c) for c in raw["couplings"]],
        noise_sigma=raw.get("noise_sigma", 0.01),
        readout_contrast=raw.get("readout_contrast", 1.0),
        seed=raw.get("seed", 0),
    )


# ---------------------------------------------------------------------------
# static maps

def qubit_freq(q: QubitModel, v_flux: float) -> float:
    """Flux arc: f_max * sqrt(|cos(pi (V - V0) / V_period)|), periodic."""
    x = math.pi * (v_flux - q.v0_v) / q.v_period_v
    return q.f_max_hz * math.sqrt(abs(math.cos(x)))


def dressed_resonator_freq(r: ResonatorModel, q: QubitModel,
                           v_flux: float) -> float:
    """Dispersive pull by level repulsion: f_bare - g^2 / (f_q - f_bare).

    With the qubit below the resonator the resonator-like normal mode is
    pushed up, most strongly where the qubit is closest, so the dressed
    frequency is maximal exactly at the flux sweet spot.
    """
    detuning = qubit_freq(q, v_flux) - r.f_bare_hz
    if abs(detuning) < 10 * q.g_rq_hz:
        log.warning("dispersive approximation strained: |detuning| %.3g Hz "
                    "< 10 g_rq", abs(detuning))
    return r.f_bare_hz - q.g_rq_hz ** 2 / detuning


def s21_magnitude(f_probe_hz: float, f_res_hz: float, kappa_hz: float,
                  depth: float = 0.8) -> float:
    """Lorentzian transmission dip, 1 - depth on resonance."""
    if kappa_hz <= 0:
        raise ValueError("kappa must be positive")
    half = kappa_hz / 2
    return 1.0 - depth * half ** 2 / ((f_probe_hz - f_res_hz) ** 2 + half ** 2)


def chevron_p11(t_s: float, amp_v: float, c: CouplingModel) -> float:
    """Population left in |11> after a square flux pulse of duration t.

    Detuned two-level oscillation between |11> and |02>:
    Delta = slope * (amp - a_res), and the transferred population is
    (4g^2 / (4g^2 + Delta^2)) * sin^2(pi * sqrt(4g^2 + Delta^2) * t).
    """
    if t_s < 0:
        raise ValueError("duration must be >= 0")
    delta = c.slope_hz_per_v * (amp_v - c.a_res_v)
    omega_sq = 4 * c.g_hz ** 2 + delta ** 2
    p_transfer = (4 * c.g_hz ** 2 / omega_sq) \
        * math.sin(math.pi * math.sqrt(omega_sq) * t_s) ** 2
    return 1.0 - p_transfer


# ---------------------------------------------------------------------------
# readout stub

@dataclass
class ControlRecord:
    """Per-sweep-point summary of what the boards actually played.

    ``flux_v`` holds the combined (bias tee output) voltage per qubit,
    ``probe_hz`` the absolute readout tone per acquired qubit.  In chevron
    mode, ``chevron_pair``/``chevron_amp_v``/``chevron_dur_s`` describe the
    flux pulse and the listed channels respond with the |11> population.
    """

    readout_channels: list[int]
    flux_v: dict[int, float] = field(default_factory=dict)
    probe_hz: dict[int, float] = field(default_factory=dict)
    mode: str = "spectroscopy"
    chevron_pair: tuple[int, int] | None = None
    chevron_amp_v: float = 0.0
    chevron_dur_s: float = 0.0


def simulate_readout(qpu: QpuParams, record: ControlRecord, shots: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-shot IQ per acquired channel; complex array [shots, channels].

    Spectroscopy mode answers the Lorentzian feedline response at each
    qubit's dressed resonator frequency; chevron mode answers the
    state-population-weighted two-point response.  Additive complex
    Gaussian noise of width ``qpu.noise_sigma`` models shot noise.  Each
    channel depends only on its own qubit's controls (ideal crosstalk-free
    model).
    """
    chans = record.readout_channels
    per_line: dict[int, int] = {}
    for q in chans:
        line = qpu.feedline_of(q)
        per_line[line] = per_line.get(line, 0) + 1
        if per_line[line] > MAX_TONES_PER_FEEDLINE:
            raise ValueError(
                f"feedline {line} carries more than "
                f"{MAX_TONES_PER_FEEDLINE} readout tones")

    base = np.zeros(len(chans), dtype=np.complex128)
    for i, q in enumerate(chans):
        if record.mode == "chevron" and record.chevron_pair \
                and q in record.chevron_pair:
            c = qpu.coupling_for(record.chevron_pair)
            p11 = chevron_p11(record.chevron_dur_s, record.chevron_amp_v, c)
            base[i] = qpu.readout_contrast * p11
        else:
            v = record.flux_v.get(q, 0.0)
            f_dressed = dressed_resonator_freq(qpu.resonators[q],
                                               qpu.qubits[q], v)
            f_probe = record.probe_hz.get(q, qpu.resonators[q].f_bare_hz)
            base[i] = s21_magnitude(f_probe, f_dressed,
                                    qpu.resonators[q].kappa_hz)
    noise = rng.normal(0.0, qpu.noise_sigma, (shots, len(chans), 2))
    return base[None, :] + noise[..., 0] + 1j * noise[..., 1]
