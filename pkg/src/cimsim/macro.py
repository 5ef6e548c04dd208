"""Functional and cycle-level model of one digital SRAM CIM macro.

A macro is a grid of MAC banks fed by an adder tree.  Computing a tile has
two phases: phase 1 latches the active weight rows into the adder-tree
registers (one read step), phase 2 streams input rows through the latched
weights.  Because phase 2 computes from the latches rather than the array,
the next weight tile can be written into the array concurrently; that is
the read-compute/write (RCW) pipeline.  The serialized baseline performs
the same latch and compute but must finish all MACs before any write
starts, so update cycles are fully exposed.

Arithmetic is exact: accumulators are unbounded-width integers, so pipeline
mode never changes results.  Quantization happens at operand ingestion
(range checks), not inside the MAC path.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class GeometryError(ValueError):
    """Tile shape exceeds macro geometry or capacity."""


class PrecisionError(ValueError):
    """Operand values outside the declared precision range, or a precision
    mode unsupported by the requested datapath."""


class PipelineMode(Enum):
    SERIALIZED = "serialized"
    RCW = "rcw"


class PrecisionMode(Enum):
    DUAL_INT4 = "dual-int4"  # INT4 weights, INT8 activations, paired MACs
    INT8 = "int8"
    BINARY16 = "binary16"    # nonlinear datapath only; rejected for GEMM tiles

    @property
    def throughput_factor(self):
        return 2 if self is PrecisionMode.DUAL_INT4 else 1

    @property
    def weight_bits(self):
        return {"dual-int4": 4, "int8": 8, "binary16": 16}[self.value]

    @property
    def input_bits(self):
        return 16 if self is PrecisionMode.BINARY16 else 8


class MacroTask(Enum):
    COMPUTE = "compute"
    NONLINEAR = "nonlinear"


class EventKind(Enum):
    LATCH = "latch"
    MAC = "mac"
    UPDATE = "update"
    UPDATE_HIDDEN = "update_hidden"


@dataclass(frozen=True)
class MacroConfig:
    banks: int = 8
    macs_per_bank: int = 32
    rows: int = 64           # weight rows per bank (shared row index space)
    capacity_kb: float = 8.0  # storage per macro; 32 macros give 256 KB aggregate
    read_cycles_per_row: int = 1
    write_cycles_per_row: int = 1
    mac_cycles_per_row: int = 1

    def __post_init__(self):
        for name in ("banks", "macs_per_bank", "rows",
                     "read_cycles_per_row", "write_cycles_per_row",
                     "mac_cycles_per_row"):
            if getattr(self, name) < 1:
                raise GeometryError(f"{name} must be >= 1")
        if self.capacity_kb <= 0:
            raise GeometryError("capacity_kb must be positive")

    @property
    def mac_columns(self):
        return self.banks * self.macs_per_bank

    @property
    def capacity_bits(self):
        return int(self.capacity_kb * 1024 * 8)


@dataclass(frozen=True)
class TraceEvent:
    cycle: int   # start cycle
    bank: int
    kind: EventKind
    cycles: int  # duration


@dataclass(frozen=True)
class TileTrace:
    total_cycles: int
    phase1_cycles: int
    phase2_cycles: int
    update_cycles_hidden: int
    update_cycles_exposed: int
    events: tuple = field(default=(), repr=False)

    @property
    def update_cycles(self):
        return self.update_cycles_hidden + self.update_cycles_exposed


def _int_bounds(bits):
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def _check_range(arr, bits, label):
    lo, hi = _int_bounds(bits)
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise PrecisionError(
            f"{label} values outside signed {bits}-bit range [{lo}, {hi}]")


def _check_weight_shape(cfg: MacroConfig, prec: PrecisionMode, w, label):
    n, k = w.shape
    if n > cfg.rows:
        raise GeometryError(f"{label} rows {n} exceed macro rows {cfg.rows}")
    if k > cfg.mac_columns:
        raise GeometryError(
            f"{label} columns {k} exceed macro MAC columns {cfg.mac_columns}")
    if n * k * prec.weight_bits > cfg.capacity_bits:
        raise GeometryError(
            f"{label} tile of {n}x{k} at {prec.weight_bits}-bit exceeds "
            f"macro capacity {cfg.capacity_kb} KB")


def compute_tile(cfg: MacroConfig, mode: PipelineMode, prec: PrecisionMode,
                 input_tile, stored_weights, next_weights=None):
    """Run one tile through the macro: exact integer partial sums plus a
    cycle trace of the two-phase schedule.

    input_tile is (m, n), stored_weights (n, k); the result is their exact
    int64 product.  When next_weights is given its rows are written during
    (RCW) or after (SERIALIZED) phase 2, and the trace reports how many of
    those write cycles were hidden.
    """
    if prec is PrecisionMode.BINARY16:
        raise PrecisionError("BINARY16 is reserved for the nonlinear datapath; "
                             "GEMM tiles use DUAL_INT4 or INT8")
    inp = np.asarray(input_tile)
    w = np.asarray(stored_weights)
    if inp.ndim != 2 or w.ndim != 2:
        raise GeometryError("input_tile and stored_weights must be 2-D")
    if not (np.issubdtype(inp.dtype, np.integer) and np.issubdtype(w.dtype, np.integer)):
        raise PrecisionError("integer operands required")
    m, n = inp.shape
    n2, k = w.shape
    if n2 != n:
        raise GeometryError(f"inner dims disagree: input n={n}, weights n={n2}")
    _check_weight_shape(cfg, prec, w, "stored weight")
    _check_range(inp, prec.input_bits, "input")
    _check_range(w, prec.weight_bits, "weight")

    update_rows = 0
    if next_weights is not None:
        nw = np.asarray(next_weights)
        if nw.ndim != 2:
            raise GeometryError("next_weights must be 2-D")
        if not np.issubdtype(nw.dtype, np.integer):
            raise PrecisionError("integer operands required")
        _check_weight_shape(cfg, prec, nw, "next weight")
        _check_range(nw, prec.weight_bits, "next weight")
        update_rows = nw.shape[0]

    out = inp.astype(np.int64) @ w.astype(np.int64)

    phase1 = cfg.read_cycles_per_row  # latch the active row set
    row_steps = -(-n // prec.throughput_factor)  # ceil: dual mode pairs rows
    phase2 = m * row_steps * cfg.mac_cycles_per_row
    update = update_rows * cfg.write_cycles_per_row
    if mode is PipelineMode.RCW:
        hidden = min(update, phase2)
        exposed = update - hidden
    else:
        hidden = 0
        exposed = update
    total = phase1 + phase2 + exposed

    events = []
    for b in range(cfg.banks):
        events.append(TraceEvent(0, b, EventKind.LATCH, phase1))
        events.append(TraceEvent(phase1, b, EventKind.MAC, phase2))
        if hidden:
            events.append(TraceEvent(phase1, b, EventKind.UPDATE_HIDDEN, hidden))
        if exposed:
            events.append(TraceEvent(phase1 + phase2, b, EventKind.UPDATE, exposed))
    trace = TileTrace(total, phase1, phase2, hidden, exposed, tuple(events))
    return out, trace


def peak_throughput(cfg: MacroConfig, num_macros: int, prec: PrecisionMode,
                    freq_hz: float) -> float:
    """Ops/second at full utilization: every MAC unit retires one (or, in
    dual-INT4 mode, two) multiply-accumulates per cycle, 2 ops each."""
    return (num_macros * cfg.banks * cfg.macs_per_bank
            * 2 * prec.throughput_factor * freq_hz)


def mode_switch_latency(cfg: MacroConfig, from_task: MacroTask,
                        to_task: MacroTask, mode: PipelineMode) -> int:
    """Cycles to repurpose the macro between GEMM and nonlinear duty.

    Under RCW the incoming coefficient rows were written during the prior
    phase 2, so only the latch step remains; the serialized baseline must
    reload every affected row first.
    """
    if from_task is to_task:
        return 0
    if mode is PipelineMode.RCW:
        return cfg.read_cycles_per_row
    return cfg.rows * cfg.write_cycles_per_row


class CimMacro:
    """Single-owner stateful wrapper: holds the current weight tile and
    accumulates cycle/update tallies across compute_tile calls."""

    def __init__(self, cfg: MacroConfig = MacroConfig(),
                 mode: PipelineMode = PipelineMode.RCW,
                 prec: PrecisionMode = PrecisionMode.DUAL_INT4):
        self.cfg = cfg
        self.mode = mode
        self.prec = prec
        self.weights = None
        self.total_cycles = 0
        self.update_elems = 0

    def load_weights(self, weights):
        """Initial (cold) load; always serialized since nothing computes yet."""
        w = np.asarray(weights)
        _check_weight_shape(self.cfg, self.prec, w, "stored weight")
        _check_range(w, self.prec.weight_bits, "weight")
        self.weights = w.copy()
        self.total_cycles += w.shape[0] * self.cfg.write_cycles_per_row
        self.update_elems += w.size
        return self

    def step(self, input_tile, next_weights=None):
        if self.weights is None:
            raise GeometryError("no weights loaded")
        out, trace = compute_tile(self.cfg, self.mode, self.prec,
                                  input_tile, self.weights, next_weights)
        self.total_cycles += trace.total_cycles
        if next_weights is not None:
            nw = np.asarray(next_weights)
            self.weights = nw.copy()
            self.update_elems += nw.size
        return out, trace


if __name__ == "__main__":
    cfg = MacroConfig()
    tops = peak_throughput(cfg, num_macros=32, prec=PrecisionMode.DUAL_INT4,
                           freq_hz=100e6)
    print(f"peak dual-int4 @ 100 MHz, 32 macros: {tops:.4e} ops/s")
    assert tops == 3.2768e12

    rng = np.random.default_rng(0)
    inp = rng.integers(-128, 128, size=(4, 16), dtype=np.int64)
    w = rng.integers(-8, 8, size=(16, 32), dtype=np.int64)
    nxt = rng.integers(-8, 8, size=(16, 32), dtype=np.int64)
    out_s, tr_s = compute_tile(cfg, PipelineMode.SERIALIZED,
                               PrecisionMode.DUAL_INT4, inp, w, nxt)
    out_r, tr_r = compute_tile(cfg, PipelineMode.RCW,
                               PrecisionMode.DUAL_INT4, inp, w, nxt)
    assert (out_s == out_r).all()
    assert (out_s == inp @ w).all()
    print(f"serialized {tr_s.total_cycles} cy, rcw {tr_r.total_cycles} cy "
          f"(hidden {tr_r.update_cycles_hidden})")
    assert tr_r.total_cycles < tr_s.total_cycles
