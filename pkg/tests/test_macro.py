import numpy as np
import pytest

from cimsim.macro import (
    CimMacro,
    EventKind,
    GeometryError,
    MacroConfig,
    MacroTask,
    PipelineMode,
    PrecisionError,
    PrecisionMode,
    compute_tile,
    mode_switch_latency,
    peak_throughput,
)

CFG = MacroConfig()


def naive_matmul(inp, w):
    m, n = inp.shape
    n2, k = w.shape
    out = [[0] * k for _ in range(m)]
    for i in range(m):
        for j in range(n):
            for c in range(k):
                out[i][c] += int(inp[i][j]) * int(w[j][c])
    return np.array(out, dtype=np.int64)


def test_functional_equivalence_seeded_sweep():
    # 1000 random tiles, half dual-int4 and half int8, run in both pipeline
    # modes; outputs must be bit-identical to a naive triple loop.
    rng = np.random.default_rng(0)
    for case in range(1000):
        m = int(rng.integers(1, 8))
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 17))
        if case % 2 == 0:
            prec = PrecisionMode.DUAL_INT4
            w = rng.integers(-8, 8, size=(n, k), dtype=np.int64)
        else:
            prec = PrecisionMode.INT8
            w = rng.integers(-128, 128, size=(n, k), dtype=np.int64)
        inp = rng.integers(-128, 128, size=(m, n), dtype=np.int64)
        nxt = np.zeros_like(w) if case % 3 == 0 else None
        ref = naive_matmul(inp, w)
        for mode in PipelineMode:
            out, _ = compute_tile(CFG, mode, prec, inp, w, nxt)
            assert out.dtype == np.int64
            assert (out == ref).all(), (case, mode, prec)


def test_identity_input_returns_weights():
    w = np.arange(16, dtype=np.int64).reshape(4, 4) - 8
    eye = np.eye(4, dtype=np.int64)
    out, _ = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4, eye, w)
    assert (out == w).all()


# Frozen cycle counts for the reference schedule: a 10x10 INT8 tile is 100
# MAC row-steps, plus one latch cycle in either mode; a 30-row next tile is
# 30 write cycles.  Serialized appends them, RCW hides them under phase 2.
def test_reference_cycle_example():
    rng = np.random.default_rng(1)
    inp = rng.integers(-128, 128, size=(10, 10), dtype=np.int64)
    w = rng.integers(-128, 128, size=(10, 10), dtype=np.int64)
    nxt = rng.integers(-128, 128, size=(30, 8), dtype=np.int64)
    _, ser = compute_tile(CFG, PipelineMode.SERIALIZED, PrecisionMode.INT8, inp, w, nxt)
    _, rcw = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8, inp, w, nxt)
    assert (ser.phase1_cycles, ser.phase2_cycles, ser.update_cycles) == (1, 100, 30)
    assert ser.total_cycles == 131
    assert ser.update_cycles_exposed == 30 and ser.update_cycles_hidden == 0
    assert rcw.total_cycles == 101
    assert rcw.update_cycles_hidden == 30 and rcw.update_cycles_exposed == 0


def test_rcw_never_slower_and_strict_with_updates():
    rng = np.random.default_rng(2)
    for _ in range(200):
        m, n = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        k = int(rng.integers(1, 9))
        inp = rng.integers(-128, 128, size=(m, n), dtype=np.int64)
        w = rng.integers(-8, 8, size=(n, k), dtype=np.int64)
        nxt = None
        rows_next = int(rng.integers(0, 64))
        if rows_next:
            nxt = rng.integers(-8, 8, size=(rows_next, k), dtype=np.int64)
        _, ser = compute_tile(CFG, PipelineMode.SERIALIZED, PrecisionMode.DUAL_INT4, inp, w, nxt)
        _, rcw = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4, inp, w, nxt)
        if ser.update_cycles == 0:
            assert rcw.total_cycles == ser.total_cycles
        else:
            assert rcw.total_cycles < ser.total_cycles
        assert rcw.update_cycles_hidden <= rcw.phase2_cycles


def test_rcw_overflow_exposes_remainder():
    inp = np.ones((1, 2), dtype=np.int64)  # phase2 = 2 int8 row-steps
    w = np.ones((2, 4), dtype=np.int64)
    nxt = np.ones((40, 4), dtype=np.int64)  # update = 40 > phase2
    _, tr = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8, inp, w, nxt)
    assert tr.phase2_cycles == 2
    assert tr.update_cycles_hidden == 2
    assert tr.update_cycles_exposed == 38
    assert tr.total_cycles == 1 + 2 + 38


def test_trace_event_accounting():
    rng = np.random.default_rng(3)
    inp = rng.integers(-128, 128, size=(3, 5), dtype=np.int64)
    w = rng.integers(-8, 8, size=(5, 7), dtype=np.int64)
    nxt = rng.integers(-8, 8, size=(20, 7), dtype=np.int64)
    for mode in PipelineMode:
        _, tr = compute_tile(CFG, mode, PrecisionMode.DUAL_INT4, inp, w, nxt)
        banks = {e.bank for e in tr.events}
        assert banks == set(range(CFG.banks))
        for b in banks:
            mine = [e for e in tr.events if e.bank == b]
            # hidden updates overlap the MAC span; everything else tiles the
            # timeline exactly
            exclusive = [e for e in mine if e.kind is not EventKind.UPDATE_HIDDEN]
            assert sum(e.cycles for e in exclusive) == tr.total_cycles
            for e in mine:
                assert 0 <= e.cycle and e.cycle + e.cycles <= tr.total_cycles
            hidden = [e for e in mine if e.kind is EventKind.UPDATE_HIDDEN]
            mac = next(e for e in mine if e.kind is EventKind.MAC)
            for e in hidden:
                assert e.cycle >= mac.cycle
                assert e.cycle + e.cycles <= mac.cycle + mac.cycles


def test_dual_int4_halves_mac_steps():
    inp = np.ones((4, 8), dtype=np.int64)
    w = np.ones((8, 4), dtype=np.int64)
    _, tr8 = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8, inp, w)
    _, tr4 = compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4, inp, w)
    assert tr8.phase2_cycles == 32
    assert tr4.phase2_cycles == 16


def test_geometry_errors():
    inp = np.ones((2, 2), dtype=np.int64)
    with pytest.raises(GeometryError, match="rows"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4,
                     np.ones((2, 65), dtype=np.int64),
                     np.ones((65, 4), dtype=np.int64))
    with pytest.raises(GeometryError, match="columns"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4,
                     inp, np.ones((2, 257), dtype=np.int64))
    with pytest.raises(GeometryError, match="inner dims"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4,
                     inp, np.ones((3, 4), dtype=np.int64))
    # 64 x 256 at 8-bit is 16 KB, over the 8 KB per-macro capacity
    with pytest.raises(GeometryError, match="capacity"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8,
                     np.ones((1, 64), dtype=np.int64),
                     np.ones((64, 256), dtype=np.int64))


def test_precision_errors():
    inp = np.ones((2, 2), dtype=np.int64)
    w = np.full((2, 2), 9, dtype=np.int64)  # outside int4
    with pytest.raises(PrecisionError, match="4-bit"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.DUAL_INT4, inp, w)
    compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8, inp, w)  # fine at int8
    with pytest.raises(PrecisionError, match="8-bit"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8,
                     np.full((2, 2), 200, dtype=np.int64), w)
    with pytest.raises(PrecisionError, match="nonlinear"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.BINARY16, inp, w)
    with pytest.raises(PrecisionError, match="integer"):
        compute_tile(CFG, PipelineMode.RCW, PrecisionMode.INT8,
                     np.ones((2, 2)), w)


def test_peak_throughput_reference_points():
    assert peak_throughput(CFG, 32, PrecisionMode.DUAL_INT4, 100e6) == 3.2768e12
    assert peak_throughput(CFG, 32, PrecisionMode.INT8, 100e6) == 1.6384e12
    unit = MacroConfig(banks=1, macs_per_bank=1)
    assert peak_throughput(unit, 1, PrecisionMode.INT8, 1.0) == 2.0


def test_mode_switch_latency():
    assert mode_switch_latency(CFG, MacroTask.COMPUTE, MacroTask.COMPUTE,
                               PipelineMode.SERIALIZED) == 0
    assert mode_switch_latency(CFG, MacroTask.NONLINEAR, MacroTask.NONLINEAR,
                               PipelineMode.RCW) == 0
    assert mode_switch_latency(CFG, MacroTask.COMPUTE, MacroTask.NONLINEAR,
                               PipelineMode.SERIALIZED) == 64
    assert mode_switch_latency(CFG, MacroTask.COMPUTE, MacroTask.NONLINEAR,
                               PipelineMode.RCW) == 1


def test_stateful_macro_commits_updates():
    rng = np.random.default_rng(4)
    mac = CimMacro()
    w0 = rng.integers(-8, 8, size=(8, 16), dtype=np.int64)
    w1 = rng.integers(-8, 8, size=(8, 16), dtype=np.int64)
    inp = rng.integers(-128, 128, size=(2, 8), dtype=np.int64)
    mac.load_weights(w0)
    assert mac.total_cycles == 8  # cold load, one write cycle per row
    out0, _ = mac.step(inp, next_weights=w1)
    assert (out0 == naive_matmul(inp, w0)).all()
    out1, _ = mac.step(inp)
    assert (out1 == naive_matmul(inp, w1)).all()
    assert mac.update_elems == w0.size + w1.size
    with pytest.raises(GeometryError, match="no weights"):
        CimMacro().step(inp)


def test_macro_config_validation():
    with pytest.raises(GeometryError):
        MacroConfig(banks=0)
    with pytest.raises(GeometryError):
        MacroConfig(capacity_kb=0)
