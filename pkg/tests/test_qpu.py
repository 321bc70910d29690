import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boardsim.qpu import (LADDER_EDGES, ControlRecord, CouplingModel,
                          QpuParams, QubitModel, ResonatorModel, chevron_p11,
                          default_qpu, dressed_resonator_freq, load_qpu,
                          qubit_freq, s21_magnitude, save_qpu,
                          simulate_readout)


@pytest.fixture
def qpu():
    return default_qpu(seed=2023)


def test_default_table_shape(qpu):
    assert len(qpu.qubits) == 10 and len(qpu.resonators) == 10
    assert {q.f_max_hz for q in qpu.qubits} == {4.2e9, 4.8e9}
    # rung partners always differ in frequency
    for a, b in LADDER_EDGES[-5:]:
        assert qpu.qubits[a].f_max_hz != qpu.qubits[b].f_max_hz
    assert [r.feedline for r in qpu.resonators] == [0] * 5 + [1] * 5
    for q in qpu.qubits:
        assert -0.4 <= q.v0_v <= 0.4
        assert 1.0 <= q.v_period_v <= 3.0
        assert round(q.v_period_v / 0.05) * 0.05 == pytest.approx(q.v_period_v)


def test_params_json_round_trip(qpu):
    buf = io.StringIO()
    save_qpu(qpu, buf)
    buf.seek(0)
    again = load_qpu(buf)
    assert again == qpu


def test_qubit_freq_sweet_spot_and_periodicity(qpu):
    q = qpu.qubits[3]
    assert qubit_freq(q, q.v0_v) == q.f_max_hz
    assert qubit_freq(q, q.v0_v + q.v_period_v) == pytest.approx(q.f_max_hz)
    got = qubit_freq(q, q.v0_v + q.v_period_v / 6)
    assert got == pytest.approx(q.f_max_hz * math.sqrt(math.cos(math.pi / 6)))
    assert got == pytest.approx(q.f_max_hz * 0.930605, rel=1e-6)


@settings(max_examples=100)
@given(st.floats(-10, 10), st.integers(-3, 3))
def test_qubit_freq_periodic_property(v, k):
    q = QubitModel(4.5e9, -200e6, 0.1, 1.7, 50e6)
    assert qubit_freq(q, v + k * q.v_period_v) == pytest.approx(
        qubit_freq(q, v), rel=1e-9, abs=1e-3)


def test_dressed_shift_magnitude():
    # g^2/|Delta| with Delta = 2.7 GHz; pushed up, qubit below resonator
    q = QubitModel(4.8e9, -200e6, 0.0, 2.0, 50e6)
    r = ResonatorModel(7.5e9, 1e6, 0)
    shift = dressed_resonator_freq(r, q, 0.0) - r.f_bare_hz
    assert abs(shift) == pytest.approx(925925.9, rel=1e-4)
    assert shift > 0


def test_dressed_uncoupled_is_bare():
    q = QubitModel(4.8e9, -200e6, 0.0, 2.0, 0.0)
    r = ResonatorModel(7.5e9, 1e6, 0)
    assert dressed_resonator_freq(r, q, 0.33) == r.f_bare_hz


def test_dressed_argmax_at_sweet_spot(qpu):
    for q, r in zip(qpu.qubits, qpu.resonators):
        grid = np.linspace(q.v0_v - q.v_period_v / 2,
                           q.v0_v + q.v_period_v / 2, 801)
        dressed = [dressed_resonator_freq(r, q, v) for v in grid]
        assert abs(grid[int(np.argmax(dressed))] - q.v0_v) <= \
            grid[1] - grid[0]


def test_dressed_near_degeneracy_flagged(caplog):
    q = QubitModel(7.5e9 - 1e8, -200e6, 0.0, 2.0, 50e6)
    r = ResonatorModel(7.5e9, 1e6, 0)
    with caplog.at_level("WARNING"):
        dressed_resonator_freq(r, q, 0.0)
    assert any("dispersive" in rec.message for rec in caplog.records)


def test_s21_dip_shape():
    assert s21_magnitude(7.5e9, 7.5e9, 1e6) == pytest.approx(0.2)
    assert s21_magnitude(7.5e9 + 0.5e6, 7.5e9, 1e6) == pytest.approx(0.6)
    assert s21_magnitude(9e9, 7.5e9, 1e6) == pytest.approx(1.0, abs=1e-6)


def test_chevron_on_resonance_full_transfer():
    c = CouplingModel((2, 7), 10e6, 500e6, 0.25)
    assert chevron_p11(25e-9, 0.25, c) == pytest.approx(0.0, abs=1e-12)
    assert chevron_p11(0.0, 0.25, c) == 1.0
    # population period 1/(2g) = 50 ns
    assert chevron_p11(50e-9, 0.25, c) == pytest.approx(1.0, abs=1e-12)


def test_chevron_detuned_contrast_bound():
    c = CouplingModel((0, 5), 10e6, 500e6, 0.25)
    delta = 2 * c.g_hz * math.sqrt(3)
    amp = c.a_res_v + delta / c.slope_hz_per_v
    bound = 4 * c.g_hz ** 2 / (4 * c.g_hz ** 2 + delta ** 2)
    assert bound == pytest.approx(0.25)
    for t in np.linspace(0, 200e-9, 400):
        assert chevron_p11(t, amp, c) >= 1 - bound - 1e-12


@settings(max_examples=100)
@given(st.floats(0, 200e-9), st.floats(-0.2, 0.2))
def test_chevron_symmetry_about_resonance(t, dv):
    c = CouplingModel((1, 6), 10e6, 500e6, 0.25)
    assert chevron_p11(t, c.a_res_v + dv, c) == pytest.approx(
        chevron_p11(t, c.a_res_v - dv, c), rel=1e-9, abs=1e-12)


def test_readout_spectroscopy_composition(qpu):
    qpu.noise_sigma = 0.0
    rec = ControlRecord(readout_channels=[0],
                        flux_v={0: qpu.qubits[0].v0_v},
                        probe_hz={0: dressed_resonator_freq(
                            qpu.resonators[0], qpu.qubits[0],
                            qpu.qubits[0].v0_v)})
    iq = simulate_readout(qpu, rec, 1, np.random.default_rng(0))
    assert iq[0, 0] == pytest.approx(0.2)   # full dip


def test_readout_chevron_contrast(qpu):
    qpu.noise_sigma = 0.05
    c = qpu.coupling_for((2, 7))
    rng = np.random.default_rng(1)
    on = ControlRecord(readout_channels=[2], mode="chevron",
                       chevron_pair=(2, 7), chevron_amp_v=c.a_res_v,
                       chevron_dur_s=0.0)
    off = ControlRecord(readout_channels=[2], mode="chevron",
                        chevron_pair=(2, 7), chevron_amp_v=c.a_res_v,
                        chevron_dur_s=25e-9)
    hi = simulate_readout(qpu, on, 1000, rng).mean(axis=0)[0]
    lo = simulate_readout(qpu, off, 1000, rng).mean(axis=0)[0]
    assert abs(hi - lo) == pytest.approx(qpu.readout_contrast, abs=0.01)


def test_readout_channels_are_independent(qpu):
    # sweeping one qubit's flux leaves every other channel flat
    qpu.noise_sigma = 0.0
    chans = list(range(10))
    rng = np.random.default_rng(2)
    probe = {q: qpu.resonators[q].f_bare_hz - 0.9e6 for q in chans}
    base = simulate_readout(
        qpu, ControlRecord(chans, {q: 0.0 for q in chans}, probe), 1, rng)[0]
    moved = simulate_readout(
        qpu, ControlRecord(chans, {**{q: 0.0 for q in chans}, 3: 0.8},
                           probe), 1, rng)[0]
    for q in chans:
        if q == 3:
            assert moved[q] != base[q]
        else:
            assert moved[q] == base[q]


def test_readout_rejects_nine_tones_per_line(qpu):
    chans = [0, 1, 2, 3, 4, 0, 1, 2, 3]   # nine tones on feedline 0
    with pytest.raises(ValueError):
        simulate_readout(qpu, ControlRecord(chans), 1,
                         np.random.default_rng(0))


def test_coupling_rejects_non_edge():
    with pytest.raises(ValueError):
        CouplingModel((0, 7), 10e6, 500e6, 0.25)
