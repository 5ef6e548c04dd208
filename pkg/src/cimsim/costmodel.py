"""Closed-form dataflow cost model for tiled GEMM on a CIM macro array.

Counts external DRAM traffic (input fetches, weight fetches, partial-sum
writebacks) and internal CIM weight-update writes for five tiling
stationarities of the matmul

    output[M, K] = input[M, N] @ weights[N, K]

given a tile (m, n, k) that divides (M, N, K) exactly.  All counts are in
elements; byte totals are derived by weighting each operand with its
precision.  A brute-force loop-nest oracle that replays the schedule with
explicit buffer residency is provided for validation; it must agree with
the closed forms element-exactly.

Conventions:
  * Partial-sum spill for the non-output-stationary dataflows is counted
    as writes only (refill reads are not charged).
  * The output-column-stationary dataflow retains one m-row input stripe
    across column passes (serpentine stripe order).  Charging the very
    first stripe load is controlled by ``include_first_load``; disabling
    it reproduces the literal textbook count, which omits that load.
"""

from dataclasses import dataclass
from enum import Enum

ORACLE_MAX_ELEMENTS = 2 ** 24  # guard for the brute-force oracle


class DomainError(ValueError):
    """Raised for out-of-domain arguments (non-positive dims, oversized oracle runs)."""


class TilingError(ValueError):
    """Raised when a tile does not divide the problem dims exactly."""


class DataflowKind(Enum):
    IS = "is"          # input-stationary
    WS = "ws"          # weight-stationary
    IS_OS = "is-os"    # input-stationary, output-stationary
    WS_OS = "ws-os"    # weight-stationary, output-stationary
    WS_OCS = "ws-ocs"  # weight-stationary, output-column-stationary

    @classmethod
    def parse(cls, text):
        for kind in cls:
            if text.lower().replace("_", "-") == kind.value:
                return kind
        raise DomainError(f"unknown dataflow {text!r}; expected one of "
                          + ", ".join(k.value for k in cls))


@dataclass(frozen=True)
class MatmulDims:
    M: int  # input rows
    N: int  # reduction depth (input cols == weight rows)
    K: int  # output cols (weight cols)

    def __post_init__(self):
        for axis in ("M", "N", "K"):
            if getattr(self, axis) < 1:
                raise DomainError(f"dim {axis} must be >= 1, got {getattr(self, axis)}")

    @property
    def macs(self):
        return self.M * self.N * self.K

    @property
    def ops(self):
        return 2 * self.macs  # multiply + accumulate


@dataclass(frozen=True)
class TileDims:
    m: int
    n: int
    k: int

    def __post_init__(self):
        for axis in ("m", "n", "k"):
            if getattr(self, axis) < 1:
                raise DomainError(f"tile {axis} must be >= 1, got {getattr(self, axis)}")

    def validate_against(self, dims: MatmulDims):
        for axis, tile, full in (("m", self.m, dims.M),
                                 ("n", self.n, dims.N),
                                 ("k", self.k, dims.K)):
            if full % tile != 0:
                raise TilingError(
                    f"tile {axis}={tile} does not divide {axis.upper()}={full}")

    def clamp(self, dims: MatmulDims) -> "TileDims":
        """Shrink tile axes that exceed the problem, then validate divisibility."""
        clamped = TileDims(min(self.m, dims.M), min(self.n, dims.N), min(self.k, dims.K))
        clamped.validate_against(dims)
        return clamped


@dataclass(frozen=True)
class AccessCounts:
    """Element counts for one scheduled GEMM (or a sum of them)."""
    input_elems: int
    weight_elems: int
    output_elems: int
    cim_update_elems: int

    def __add__(self, other):
        return AccessCounts(self.input_elems + other.input_elems,
                            self.weight_elems + other.weight_elems,
                            self.output_elems + other.output_elems,
                            self.cim_update_elems + other.cim_update_elems)

    def scaled(self, factor: int) -> "AccessCounts":
        return AccessCounts(self.input_elems * factor,
                            self.weight_elems * factor,
                            self.output_elems * factor,
                            self.cim_update_elems * factor)

    def dram_bytes(self, weight_bits=4, act_bits=8, weight_is_activation=False):
        """Total DRAM bytes: inputs/outputs at activation precision, weights at
        weight precision (or activation precision when the stationary operand
        is itself an activation, as in attention score/value matmuls)."""
        wbits = act_bits if weight_is_activation else weight_bits
        bits = (self.input_elems + self.output_elems) * act_bits + self.weight_elems * wbits
        if bits % 8:
            raise DomainError("operand bit total is not byte aligned")
        return bits // 8

    def as_dict(self):
        return {"input_elems": self.input_elems,
                "weight_elems": self.weight_elems,
                "output_elems": self.output_elems,
                "cim_update_elems": self.cim_update_elems}


ZERO_COUNTS = AccessCounts(0, 0, 0, 0)


def dram_access(dims: MatmulDims, tile: TileDims, dataflow: DataflowKind,
                include_first_load=True) -> AccessCounts:
    """Closed-form access counts for one GEMM under the given dataflow.

    The five stationarities differ in which operand is pinned on chip and
    which loop order the tile schedule uses:

      IS      pin input tile; weights restream per row stripe; partials spill
      WS      pin weight tile; inputs restream per column pass; partials spill
      IS_OS   pin input tile and a full m x K output stripe; outputs written once
      WS_OS   buffer a weight column on chip, but rewrite the macro per row
              stripe; outputs written once
      WS_OCS  pin each weight block exactly once; retain one input stripe
              across column passes; outputs written once
    """
    tile.validate_against(dims)
    M, N, K = dims.M, dims.N, dims.K
    m, n, k = tile.m, tile.n, tile.k

    if dataflow is DataflowKind.IS:
        return AccessCounts(M * N, (M // m) * N * K, (N // n) * M * K, (M // m) * N * K)
    if dataflow is DataflowKind.WS:
        return AccessCounts((K // k) * M * N, N * K, (N // n) * M * K, N * K)
    if dataflow is DataflowKind.IS_OS:
        return AccessCounts(M * N, (M // m) * N * K, M * K, (M // m) * N * K)
    if dataflow is DataflowKind.WS_OS:
        return AccessCounts((K // k) * M * N, N * K, M * K, (M // m) * N * K)
    if dataflow is DataflowKind.WS_OCS:
        input_elems = (K // k) * (M - m) * N
        if include_first_load:
            input_elems += m * N
        return AccessCounts(input_elems, N * K, M * K, N * K)
    raise DomainError(f"unhandled dataflow {dataflow}")


def cim_weight_updates(dims: MatmulDims, tile: TileDims, dataflow: DataflowKind) -> int:
    """Elements written into CIM macros over the whole GEMM."""
    return dram_access(dims, tile, dataflow).cim_update_elems


def loopnest_oracle(dims: MatmulDims, tile: TileDims, dataflow: DataflowKind,
                    include_first_load=True) -> AccessCounts:
    """Replay the tile schedule with explicit residency state and count traffic.

    Independent of the closed forms: every fetch, spill and CIM write is
    accumulated while walking the loop nest, with pinned tiles, buffered
    weight columns, the retained input stripe and a write-once map for
    output-stationary variants tracked as state.  Intended for validation;
    refuses problems above ORACLE_MAX_ELEMENTS.
    """
    tile.validate_against(dims)
    if dims.macs > ORACLE_MAX_ELEMENTS:
        raise DomainError(f"oracle limited to M*N*K <= {ORACLE_MAX_ELEMENTS}")
    M, N, K = dims.M, dims.N, dims.K
    m, n, k = tile.m, tile.n, tile.k
    P, J, Lb = M // m, N // n, K // k  # row stripes, reduction blocks, column blocks

    inp = wgt = out = cim = 0

    if dataflow is DataflowKind.IS:
        for _i in range(P):
            for _j in range(J):
                inp += m * n                      # pin input tile
                for _l in range(Lb):
                    wgt += n * k                  # restream weight block
                    cim += n * k                  # and write it into the macro
                    out += m * k                  # spill partial tile
    elif dataflow is DataflowKind.WS:
        for _l in range(Lb):
            for _j in range(J):
                wgt += n * k                      # pin weight block once
                cim += n * k
                for _i in range(P):
                    inp += m * n                  # restream inputs
                    out += m * k                  # spill partial tile
    elif dataflow is DataflowKind.IS_OS:
        written = set()
        for i in range(P):
            # one m x K output stripe stays resident while j advances
            for _j in range(J):
                inp += m * n
                for _l in range(Lb):
                    wgt += n * k
                    cim += n * k
            for l in range(Lb):
                assert (i, l) not in written
                written.add((i, l))
                out += m * k                      # single writeback per tile
    elif dataflow is DataflowKind.WS_OS:
        written = set()
        fetched_cols = set()
        for l in range(Lb):
            for i in range(P):
                for j in range(J):
                    if (j, l) not in fetched_cols:
                        wgt += n * k              # DRAM fetch once, then buffered
                        fetched_cols.add((j, l))
                    cim += n * k                  # macro rewritten every stripe
                    inp += m * n
                assert (i, l) not in written
                written.add((i, l))
                out += m * k
    elif dataflow is DataflowKind.WS_OCS:
        written = set()
        retained = -1 if include_first_load else 0
        for l in range(Lb):
            for _j in range(J):
                wgt += n * k                      # each weight block pinned once
                cim += n * k
            stripes = list(range(P)) if l % 2 == 0 else list(range(P - 1, -1, -1))
            for pos, i in enumerate(stripes):
                if not (pos == 0 and i == retained):
                    inp += m * N                  # stream stripe through all blocks
                assert (i, l) not in written
                written.add((i, l))
                out += m * k
            retained = stripes[-1]                # serpentine reuse across passes
    else:
        raise DomainError(f"unhandled dataflow {dataflow}")

    return AccessCounts(inp, wgt, out, cim)


@dataclass(frozen=True)
class ReductionRatios:
    """Per-operand and byte-weighted reductions, as 1 - optimized/baseline."""
    input_reduction: float
    weight_reduction: float
    output_reduction: float
    update_reduction: float
    total_byte_reduction: float


def reduction_ratio(baseline: AccessCounts, optimized: AccessCounts,
                    weight_bits=4, act_bits=8,
                    weight_is_activation=False) -> ReductionRatios:
    """Reductions of `optimized` relative to `baseline` per operand and in
    precision-weighted total bytes.  A zero baseline count has no defined
    ratio and raises."""
    pairs = {
        "input": (baseline.input_elems, optimized.input_elems),
        "weight": (baseline.weight_elems, optimized.weight_elems),
        "output": (baseline.output_elems, optimized.output_elems),
        "update": (baseline.cim_update_elems, optimized.cim_update_elems),
    }
    out = {}
    for name, (base, opt) in pairs.items():
        if base == 0:
            raise DomainError(f"baseline {name} count is zero; reduction undefined")
        out[name] = 1.0 - opt / base
    bbytes = baseline.dram_bytes(weight_bits, act_bits, weight_is_activation)
    obytes = optimized.dram_bytes(weight_bits, act_bits, weight_is_activation)
    if bbytes == 0:
        raise DomainError("baseline byte total is zero; reduction undefined")
    return ReductionRatios(out["input"], out["weight"], out["output"],
                           out["update"], 1.0 - obytes / bbytes)


if __name__ == "__main__":
    dims = MatmulDims(1024, 4096, 4096)
    tile = TileDims(128, 128, 128)
    print(f"{'dataflow':8s} {'input':>12s} {'weight':>12s} {'output':>12s} {'updates':>12s}")
    for kind in DataflowKind:
        c = dram_access(dims, tile, kind)
        print(f"{kind.value:8s} {c.input_elems:12d} {c.weight_elems:12d} "
              f"{c.output_elems:12d} {c.cim_update_elems:12d}")
    small = MatmulDims(8, 8, 8)
    stile = TileDims(2, 2, 2)
    for kind in DataflowKind:
        assert dram_access(small, stile, kind) == loopnest_oracle(small, stile, kind)
    print("oracle agreement on 8x8x8 spot check: ok")
