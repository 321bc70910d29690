import copy
import io
import time

import numpy as np
import pytest

from boardsim import orchestrator as orch
from boardsim.experiment import (Acquisition, BoardMap, ChannelBinding,
                                 Experiment, Pulse, SweepSpec,
                                 default_board_map, ns)
from boardsim.orchestrator import (CompileError, ExecutionContext,
                                   ExecutionDetail, OverlappingPulses,
                                   ShotCountMismatch, SyncCoverageError,
                                   SyncTimeout, TooManyTones, UnmappedChannel,
                                   aggregate, compile_experiment,
                                   compile_single_board, execute,
                                   execute_pipelined, verify_sync_coverage)
from boardsim.qpu import default_qpu
from boardsim.timebase import default_tree
from boardsim.tproc import EventKind, assemble


def quiet_qpu():
    q = default_qpu()
    q.noise_sigma = 0.0
    return q


def ctx_for(bmap, seed=0, **kw):
    return ExecutionContext(tree=default_tree(tuple(bmap.boards)),
                            qpu=quiet_qpu(), seed=seed, **kw)


def two_board_experiment(nshots=3):
    return Experiment(
        pulses=[Pulse("q0.flux", "flux", start_fs=0, duration_fs=ns(20),
                      amp=0.4),
                Pulse("q7.flux", "flux", start_fs=0, duration_fs=ns(20),
                      amp=0.4)],
        acquisitions=[Acquisition("q0.ro", start_fs=ns(40),
                                  window_fs=ns(100), probe_hz=7.40e9),
                      Acquisition("q7.ro", start_fs=ns(40),
                                  window_fs=ns(100), probe_hz=7.50e9)],
        nshots=nshots, sync_policy="PerShot", relax_fs=ns(1000))


def test_per_shot_sync_counts():
    bmap = default_board_map()
    bundle = compile_experiment(two_board_experiment(nshots=3), bmap)
    detail = ExecutionDetail({}, {}, {}, {})
    execute(bundle, ctx_for(bmap), detail)
    assert detail.sync_counts == {"A": 3, "B": 3}


def test_once_policy_single_sync():
    exp = two_board_experiment(nshots=4)
    exp.sync_policy = "Once"
    bmap = default_board_map()
    bundle = compile_experiment(exp, bmap)
    detail = ExecutionDetail({}, {}, {}, {})
    execute(bundle, ctx_for(bmap), detail)
    assert detail.sync_counts == {"A": 1, "B": 1}


def single_board_maps():
    """Same channel names once bound to a single board, once split."""
    def binding(board, kind, gen, **kw):
        return ChannelBinding(board, kind, gen, **kw)
    merged = BoardMap(["A"], {
        "x.flux": binding("A", "flux", 5, tile=1, qubit=0, dc_channel=0),
        "y.flux": binding("A", "flux", 6, tile=1, qubit=1, dc_channel=1),
        "x.ro": binding("A", "readout", 12, tile=3, feedline=0, slot=0,
                        qubit=0),
        "y.ro": binding("A", "readout", 12, tile=3, feedline=0, slot=1,
                        qubit=1),
    })
    split = BoardMap(["A", "B"], {
        "x.flux": binding("A", "flux", 5, tile=1, qubit=0, dc_channel=0),
        "y.flux": binding("B", "flux", 5, tile=1, qubit=1, dc_channel=0),
        "x.ro": binding("A", "readout", 12, tile=3, feedline=0, slot=0,
                        qubit=0),
        "y.ro": binding("B", "readout", 12, tile=3, feedline=1, slot=0,
                        qubit=1),
    })
    return merged, split


def small_experiment(seed_shape=0):
    rng = np.random.default_rng(seed_shape)
    sweeps = []
    if rng.random() < 0.7:
        sweeps.append(SweepSpec("amplitude", "x.flux", 0.1, 0.3,
                                0.1 * rng.integers(1, 3)))
    if rng.random() < 0.5:
        sweeps.append(SweepSpec("dc_bias", "*", -0.1, 0.1, 0.1))
    return Experiment(
        pulses=[Pulse("x.flux", "flux", start_fs=0,
                      duration_fs=ns(float(rng.integers(5, 40))), amp=0.3),
                Pulse("y.flux", "flux", start_fs=ns(50),
                      duration_fs=ns(float(rng.integers(5, 40))), amp=0.2)],
        acquisitions=[Acquisition("x.ro", ns(100), ns(80), 7.40e9),
                      Acquisition("y.ro", ns(100), ns(80), 7.45e9)],
        sweeps=sweeps, nshots=int(rng.integers(1, 4)),
        relax_fs=ns(500))


def test_monolithic_oracle_split_equality():
    merged, split = single_board_maps()
    for shape_seed in range(6):
        exp = small_experiment(shape_seed)
        qpu = quiet_qpu()
        qpu.noise_sigma = 0.01
        r1 = execute(compile_experiment(exp, merged),
                     ExecutionContext(tree=default_tree(("A",)), qpu=qpu,
                                      seed=7))
        r2 = execute(compile_experiment(exp, split),
                     ExecutionContext(tree=default_tree(("A", "B")), qpu=qpu,
                                      seed=7))
        assert np.array_equal(r1.data, r2.data)
        assert r1.channels == r2.channels
        assert [a.values for a in r1.axes] == [a.values for a in r2.axes]


def test_single_board_compile_paths_identical():
    merged, _ = single_board_maps()
    exp = small_experiment(1)
    b1 = compile_experiment(exp, merged)
    b2 = compile_single_board(exp, merged)
    assert b1.boards["A"].assembly == b2.boards["A"].assembly
    assert b1.boards["A"].configs == b2.boards["A"].configs
    assert b1.boards["A"].waveforms.keys() == b2.boards["A"].waveforms.keys()


def test_duration_sweep_grid():
    bmap = default_board_map()
    exp = Experiment(
        pulses=[Pulse("q7.flux", "flux", start_fs=0, duration_fs=ns(10),
                      amp=0.3)],
        acquisitions=[Acquisition("q7.ro", ns(200), ns(80), 7.50e9)],
        sweeps=[SweepSpec("duration", "q7.flux", ns(10), ns(20), ns(0.17))],
        relax_fs=ns(500))
    bundle = compile_experiment(exp, bmap)
    ax = bundle.axes[0]
    assert len(ax.samples) == 59
    assert ax.samples[0] == 59                    # 10.003 ns
    assert all(b - a == 1 for a, b in zip(ax.samples, ax.samples[1:]))
    assert ax.values[0] == pytest.approx(10.003, abs=1e-3)


def test_duration_step_below_sample_rejected():
    bmap = default_board_map()
    exp = Experiment(
        pulses=[Pulse("q7.flux", "flux", duration_fs=ns(10), amp=0.3)],
        acquisitions=[Acquisition("q7.ro", ns(200), ns(80), 7.50e9)],
        sweeps=[SweepSpec("duration", "q7.flux", ns(10), ns(20), ns(0.1))])
    with pytest.raises(CompileError):
        compile_experiment(exp, bmap)


def test_compile_error_paths():
    bmap = default_board_map()
    with pytest.raises(UnmappedChannel):
        compile_experiment(Experiment(
            pulses=[Pulse("nope.flux", "flux", duration_fs=ns(4))]), bmap)
    with pytest.raises(OverlappingPulses):
        compile_experiment(Experiment(
            pulses=[Pulse("q0.flux", "flux", start_fs=0,
                          duration_fs=ns(40)),
                    Pulse("q0.flux", "flux", start_fs=ns(10),
                          duration_fs=ns(40))]), bmap)
    # nine tones on one feedline
    channels = {}
    for k in range(9):
        channels[f"c{k}.ro"] = ChannelBinding("A", "readout", 12, tile=3,
                                              feedline=0, slot=k, qubit=0)
    wide = BoardMap(["A"], channels)
    exp = Experiment(acquisitions=[
        Acquisition(f"c{k}.ro", ns(10), ns(50), 7.4e9 + k * 1e6)
        for k in range(9)])
    with pytest.raises(TooManyTones):
        compile_experiment(exp, wide)


def test_sync_coverage_checker_rejects_stripped_program():
    prog = assemble("SET r3, 3\nshot:\n    TRIG 0, 0, @64\n"
                    "    WAITT @999\n    LOOPNZ r3, shot\n    END\n")
    with pytest.raises(SyncCoverageError):
        verify_sync_coverage(prog, "PerShot")


def test_sync_timeout_names_offending_board():
    bmap = default_board_map()
    bundle = compile_experiment(two_board_experiment(), bmap)
    # board B's program loses its SYNC (bypassing the compiler checks)
    bad = assemble("SET r1, 1\nEND\n")
    bundle.boards["B"].program = bad
    with pytest.raises(SyncTimeout) as e:
        execute(bundle, ctx_for(bmap))
    assert e.value.board == "B"


def test_execute_no_acquisitions_empty_resultset():
    bmap = default_board_map()
    exp = Experiment(pulses=[Pulse("q0.flux", "flux", duration_fs=ns(10),
                                   amp=0.2)],
                     nshots=2, relax_fs=ns(500))
    rs = execute(compile_experiment(exp, bmap), ctx_for(bmap))
    assert rs.data.shape == (1, 1, 2, 0)
    assert rs.channels == []


def test_spectroscopy_resultset_shape():
    bmap = default_board_map()
    acqs = [Acquisition(f"q{q}.ro", ns(100), ns(80),
                        7.40e9 + 0.05e9 * (q % 5)) for q in range(10)]
    exp = Experiment(
        acquisitions=acqs,
        sweeps=[SweepSpec("frequency", "*", -2e6, 2e6, 1e6),
                SweepSpec("dc_bias", "*", -0.2, 0.2, 0.2)],
        nshots=4, relax_fs=ns(500), averaged=True)
    rs = execute(compile_experiment(exp, bmap), ctx_for(bmap))
    assert rs.data.shape == (5, 3, 1, 10)
    assert rs.mode == "averaged"
    assert rs.channels == [a.channel for a in acqs]


def test_cross_board_schedule_fidelity():
    bmap = default_board_map()
    bundle = compile_experiment(two_board_experiment(nshots=2), bmap)
    ctx = ctx_for(bmap)
    detail = ExecutionDetail({}, {}, {}, {})
    execute(bundle, ctx, detail)
    for board in ("A", "B"):
        assert detail.resume_cycles["A"] == detail.resume_cycles[board]
    pulses_a = [e for e in detail.events["A"]
                if e.kind is EventKind.PULSE_START]
    pulses_b = [e for e in detail.events["B"]
                if e.kind is EventKind.PULSE_START]
    assert len(pulses_a) == len(pulses_b)
    for ea, eb in zip(pulses_a, pulses_b):
        assert ea.t_ticks == eb.t_ticks
        assert orch.event_time_fs(bundle, ctx, "A", ea) == \
            orch.event_time_fs(bundle, ctx, "B", eb)


def test_aggregate_declaration_order_and_modes():
    declared = ["b.ro", "a.ro", "c.ro"]
    axes = orch.build_axes(Experiment())
    rng = np.random.default_rng(0)
    arr_a = rng.normal(size=(1, 1, 4, 2)) + 0j
    arr_b = rng.normal(size=(1, 1, 4, 1)) + 0j
    per_board = {"A": arr_a, "B": arr_b}
    names = {"A": ["a.ro", "c.ro"], "B": ["b.ro"]}
    rs = aggregate(per_board, names, declared, axes)
    assert rs.channels == declared
    assert np.array_equal(rs.data[0, 0, :, 0], arr_b[0, 0, :, 0])
    assert np.array_equal(rs.data[0, 0, :, 1], arr_a[0, 0, :, 0])
    avg = aggregate(per_board, names, declared, axes, averaged=True)
    assert np.allclose(avg.data[0, 0, 0], rs.data[0, 0].mean(axis=0))


def test_aggregate_shot_mismatch():
    axes = orch.build_axes(Experiment())
    per_board = {"A": np.zeros((1, 1, 1000, 1), dtype=complex),
                 "B": np.zeros((1, 1, 999, 1), dtype=complex)}
    names = {"A": ["a"], "B": ["b"]}
    with pytest.raises(ShotCountMismatch) as e:
        aggregate(per_board, names, ["a", "b"], axes)
    assert "999" in str(e.value) and "1000" in str(e.value)


def test_resultset_csv_format():
    bmap = default_board_map()
    rs = execute(compile_experiment(two_board_experiment(nshots=2), bmap),
                 ctx_for(bmap))
    buf = io.StringIO()
    rs.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "axis1,axis2,shot,channel,i,q"
    assert len(lines) == 1 + 2 * 2   # shots x channels


def test_pipelined_matches_serial():
    merged, split = single_board_maps()
    jobs = [(small_experiment(s), split) for s in range(5)]
    ctx = ctx_for(split, seed=3)
    serial = [execute(compile_experiment(e, m), ctx) for e, m in jobs]
    piped = execute_pipelined(jobs, ctx)
    assert len(piped) == len(serial)
    for a, b in zip(serial, piped):
        assert np.array_equal(a.data, b.data)
        assert a.channels == b.channels


def test_pipelined_identical_batches_order():
    _, split = single_board_maps()
    jobs = [(small_experiment(2), split)] * 3
    results = execute_pipelined(jobs, ctx_for(split, seed=1))
    assert len(results) == 3
    assert np.array_equal(results[0].data, results[1].data)
    assert np.array_equal(results[0].data, results[2].data)


def test_pipeline_latency_formula():
    for d, e in ((0.03, 0.06), (0.06, 0.03)):
        n = 6
        t0 = time.perf_counter()
        execute_pipelined(
            list(range(n)), ExecutionContext(),
            compile_fn=lambda job: time.sleep(d) or job,
            execute_fn=lambda bundle: time.sleep(e) or bundle)
        total = time.perf_counter() - t0
        expect = d + max(d, e) * (n - 1) + e
        assert abs(total - expect) <= 0.2 * expect


def test_pipeline_error_attributed_to_batch():
    def compile_fn(job):
        if job == 2:
            raise ValueError("boom")
        return job
    with pytest.raises(RuntimeError) as e:
        execute_pipelined([0, 1, 2, 3], ExecutionContext(),
                          compile_fn=compile_fn,
                          execute_fn=lambda b: b)
    assert "batch 2" in str(e.value)
