"""Chip-level scheduling of transformer phases onto the macro array.

Two-level model.  The per-tile engine in ``macro`` is cycle-exact for one
array; here a whole phase (thousands of GEMM instances plus the row
nonlinearities between them) is costed with group-level rooflines:

  * closed-form DRAM traffic and array-update element counts per GEMM
    group, from ``costmodel``;
  * compute cycles against the chip MAC rate for the operand precision
    (dual 4-bit weights ride both halves of a row, attention score/value
    matmuls run 8-bit and keep their operands on the activation path);
  * update cycles against the array write bandwidth, hidden behind MACs
    when the read-compute/write overlap is on, exposed otherwise;
  * softmax/rmsnorm cycles exposed in full without fusion, or overlapped
    with GEMM compute when fused evaluation drains partial sums directly.

The wall clock for a phase is the larger of the compute roofline and the
weight-streaming DRAM bound.  Decode is weight-bound: every matrix visits
the chip once per token, so the stream rate caps tokens per second no
matter how fast the arrays run.
"""

import math
from dataclasses import dataclass, field

from .costmodel import (
    AccessCounts,
    DataflowKind,
    DomainError,
    TileDims,
    ZERO_COUNTS,
    cim_weight_updates,
    dram_access,
)
from .macro import MacroConfig, PipelineMode, PrecisionMode, peak_throughput
from .nonlinear import (
    DEFAULT_CYCLE_PARAMS,
    GroupSpec,
    NonlinearCycleParams,
    NonlinearKind,
    nonlinear_latency,
)
from .workload import PhaseWorkload


class SchedulingError(ValueError):
    """A workload does not fit the configured chip resources."""


@dataclass(frozen=True)
class FeatureToggles:
    """Which latency-saving mechanisms the schedule may use."""
    ws_ocs: bool = True   # column-stripe weight reuse instead of ws-os
    rcw: bool = True      # overlap array updates with MAC phases
    fusion: bool = True   # fused nonlinear evaluation on partial sums

    @classmethod
    def none(cls):
        return cls(ws_ocs=False, rcw=False, fusion=False)

    def label(self):
        on = [n for n in ("ws_ocs", "rcw", "fusion") if getattr(self, n)]
        return "+".join(on) if on else "baseline"


@dataclass(frozen=True)
class DramConfig:
    """Off-chip memory channel model (LPDDR-class, two channels)."""
    channels: int = 2
    transfers_per_s: float = 6.4e9
    bytes_per_transfer: int = 8
    efficiency: float = 1.0

    def __post_init__(self):
        if self.channels < 1 or self.bytes_per_transfer < 1:
            raise DomainError("channels and bytes_per_transfer must be >= 1")
        if not 0.0 < self.efficiency <= 1.0:
            raise DomainError("efficiency must lie in (0, 1]")
        if self.transfers_per_s <= 0:
            raise DomainError("transfers_per_s must be positive")

    @property
    def bandwidth_bytes_per_s(self):
        return (self.channels * self.transfers_per_s
                * self.bytes_per_transfer * self.efficiency)


@dataclass(frozen=True)
class ClusterConfig:
    """Chip organization: clusters of cores, one macro per core, plus the
    per-core staging buffers a tile must fit."""
    clusters: int = 8
    cores_per_cluster: int = 4
    input_reuse_kb: float = 64.0
    partial_sum_kb: float = 64.0
    freq_mhz: float = 100.0
    macro: MacroConfig = field(default_factory=MacroConfig)

    def __post_init__(self):
        if self.clusters < 1 or self.cores_per_cluster < 1:
            raise DomainError("clusters and cores_per_cluster must be >= 1")
        if self.input_reuse_kb <= 0 or self.partial_sum_kb <= 0:
            raise DomainError("staging buffer sizes must be positive")
        if self.freq_mhz <= 0:
            raise DomainError("freq_mhz must be positive")

    @property
    def num_macros(self):
        return self.clusters * self.cores_per_cluster

    @property
    def freq_hz(self):
        return self.freq_mhz * 1e6

    def macs_per_cycle(self, prec: PrecisionMode) -> int:
        """Whole-chip MAC rate; dual 4-bit weights double it."""
        return self.num_macros * self.macro.mac_columns * prec.throughput_factor

    def update_elems_per_cycle(self, prec: PrecisionMode) -> int:
        """Array write bandwidth in weight elements per cycle.  The write
        port spans the same columns the MACs read, so the rate matches."""
        return self.macs_per_cycle(prec)

    def peak_ops(self, prec: PrecisionMode = PrecisionMode.DUAL_INT4) -> float:
        return peak_throughput(self.macro, self.num_macros, prec, self.freq_hz)


def check_tile_buffers(cluster: ClusterConfig, tile: TileDims):
    """A tile must stage its inputs (1 B each) in the reuse buffer and its
    32-bit partial sums in the accumulator buffer."""
    input_bytes = tile.m * tile.n
    if input_bytes > cluster.input_reuse_kb * 1024:
        raise SchedulingError(
            f"input tile {tile.m}x{tile.n} needs {input_bytes} B, "
            f"reuse buffer holds {cluster.input_reuse_kb} KB")
    partial_bytes = tile.m * tile.k * 4
    if partial_bytes > cluster.partial_sum_kb * 1024:
        raise SchedulingError(
            f"partial-sum tile {tile.m}x{tile.k} needs {partial_bytes} B, "
            f"accumulator buffer holds {cluster.partial_sum_kb} KB")


@dataclass(frozen=True)
class GemmCost:
    """Roofline cost of one GEMM group (all `count` instances together)."""
    name: str
    M: int
    N: int
    K: int
    count: int
    weight_is_activation: bool
    counts: AccessCounts
    dram_bytes: int
    compute_cycles: int
    update_cycles: int
    exposed_update_cycles: int
    seconds: float

    @property
    def total_cycles(self):
        return self.compute_cycles + self.exposed_update_cycles


@dataclass(frozen=True)
class ScheduleResult:
    """Per-GEMM costs for one phase under one dataflow/pipeline choice."""
    phase: str
    dataflow: DataflowKind
    pipeline: PipelineMode
    gemms: tuple

    @property
    def compute_cycles(self):
        return sum(g.compute_cycles for g in self.gemms)

    @property
    def update_cycles(self):
        return sum(g.update_cycles for g in self.gemms)

    @property
    def exposed_update_cycles(self):
        return sum(g.exposed_update_cycles for g in self.gemms)

    @property
    def total_cycles(self):
        return self.compute_cycles + self.exposed_update_cycles

    @property
    def weight_access(self):
        """Access counts summed over weight-bearing GEMMs (the weight
        stream proper; attention traffic is activation-path)."""
        total = ZERO_COUNTS
        for g in self.gemms:
            if not g.weight_is_activation:
                total = total + g.counts
        return total

    @property
    def dram_bytes_total(self):
        return sum(g.dram_bytes for g in self.gemms)


def _gemm_precision(weight_is_activation: bool) -> PrecisionMode:
    return PrecisionMode.INT8 if weight_is_activation else PrecisionMode.DUAL_INT4


def _schedule(workload: PhaseWorkload, cluster: ClusterConfig, tile: TileDims,
              dataflow: DataflowKind, pipeline: PipelineMode,
              include_first_load: bool) -> ScheduleResult:
    costs = []
    for g in workload.gemms:
        t = tile.clamp(g.dims)
        check_tile_buffers(cluster, t)
        per_instance = dram_access(g.dims, t, dataflow,
                                   include_first_load=include_first_load)
        counts = per_instance.scaled(g.count)
        dram_bytes = counts.dram_bytes(
            weight_is_activation=g.weight_is_activation)

        prec = _gemm_precision(g.weight_is_activation)
        compute = -(-g.total_macs // cluster.macs_per_cycle(prec))
        if g.weight_is_activation:
            # score/value operands travel the activation path; no array
            # write cost is charged against the weight update port
            update = 0
        else:
            elems = cim_weight_updates(g.dims, t, dataflow) * g.count
            rate = cluster.update_elems_per_cycle(PrecisionMode.DUAL_INT4)
            update = -(-elems // rate)
        if pipeline is PipelineMode.RCW:
            exposed = max(0, update - compute)
        else:
            exposed = update
        costs.append(GemmCost(
            name=g.name, M=g.dims.M, N=g.dims.N, K=g.dims.K, count=g.count,
            weight_is_activation=g.weight_is_activation, counts=counts,
            dram_bytes=dram_bytes, compute_cycles=compute,
            update_cycles=update, exposed_update_cycles=exposed,
            seconds=(compute + exposed) / cluster.freq_hz))
    return ScheduleResult(workload.name, dataflow, pipeline, tuple(costs))


def schedule_ws_ocs(workload: PhaseWorkload,
                    cluster: ClusterConfig = None,
                    tile: TileDims = TileDims(128, 128, 128),
                    pipeline: PipelineMode = PipelineMode.RCW,
                    include_first_load=True) -> ScheduleResult:
    """Cost a phase under column-stripe weight reuse with update overlap."""
    cluster = cluster or ClusterConfig()
    return _schedule(workload, cluster, tile, DataflowKind.WS_OCS,
                     pipeline, include_first_load)


def schedule_baseline(workload: PhaseWorkload,
                      dataflow: DataflowKind = DataflowKind.WS_OS,
                      cluster: ClusterConfig = None,
                      tile: TileDims = TileDims(128, 128, 128),
                      pipeline: PipelineMode = PipelineMode.SERIALIZED,
                      include_first_load=True) -> ScheduleResult:
    """Cost a phase under one of the reference dataflows."""
    if dataflow is DataflowKind.WS_OCS:
        raise SchedulingError("ws-ocs is not a baseline; use schedule_ws_ocs")
    cluster = cluster or ClusterConfig()
    return _schedule(workload, cluster, tile, dataflow,
                     pipeline, include_first_load)


def _nonlinear_totals(workload: PhaseWorkload, groups: GroupSpec,
                      params: NonlinearCycleParams):
    nl = workload.nonlinear
    baseline = fused = 0
    if nl.softmax_rows:
        lat = nonlinear_latency(nl.softmax_width, groups,
                                NonlinearKind.SOFTMAX, params)
        baseline += nl.softmax_rows * lat.baseline_cycles
        fused += nl.softmax_rows * lat.fused_cycles
    if nl.rmsnorm_rows:
        lat = nonlinear_latency(nl.rmsnorm_width, groups,
                                NonlinearKind.RMSNORM, params)
        baseline += nl.rmsnorm_rows * lat.baseline_cycles
        fused += nl.rmsnorm_rows * lat.fused_cycles
    return baseline, fused


@dataclass(frozen=True)
class LatencyReport:
    """End-to-end cost of one phase.

    ``dram_seconds`` is the weight-streaming bound (unique weight bytes over
    channel bandwidth); ``dram_bytes_total`` is the full closed-form traffic
    including activation-path attention operands, reported for access-count
    comparisons rather than the latency bound.
    """
    phase: str
    features: FeatureToggles
    dataflow: DataflowKind
    pipeline: PipelineMode
    compute_cycles: int
    update_cycles: int
    exposed_update_cycles: int
    nonlinear_baseline_cycles: int
    nonlinear_fused_cycles: int
    exposed_nonlinear_cycles: int
    total_cycles: int
    compute_seconds: float
    dram_seconds: float
    wall_seconds: float
    weight_stream_bytes: int
    dram_bytes_total: int
    weight_access: AccessCounts
    gemms: tuple

    def as_dict(self):
        return {
            "phase": self.phase,
            "features": self.features.label(),
            "dataflow": self.dataflow.value,
            "pipeline": self.pipeline.value,
            "compute_cycles": self.compute_cycles,
            "update_cycles": self.update_cycles,
            "exposed_update_cycles": self.exposed_update_cycles,
            "nonlinear_baseline_cycles": self.nonlinear_baseline_cycles,
            "nonlinear_fused_cycles": self.nonlinear_fused_cycles,
            "exposed_nonlinear_cycles": self.exposed_nonlinear_cycles,
            "total_cycles": self.total_cycles,
            "compute_seconds": self.compute_seconds,
            "dram_seconds": self.dram_seconds,
            "wall_seconds": self.wall_seconds,
            "weight_stream_bytes": self.weight_stream_bytes,
            "dram_bytes_total": self.dram_bytes_total,
            "weight_access": self.weight_access.as_dict(),
        }


def end_to_end(workload: PhaseWorkload,
               cluster: ClusterConfig = None,
               dram: DramConfig = None,
               features: FeatureToggles = FeatureToggles(),
               tile: TileDims = TileDims(128, 128, 128),
               groups: GroupSpec = GroupSpec(),
               cycle_params: NonlinearCycleParams = DEFAULT_CYCLE_PARAMS,
               include_first_load=True) -> LatencyReport:
    """Cost a phase with the selected feature set.

    Dataflow follows the ws_ocs toggle (column stripes on, ws-os off),
    pipeline follows rcw, and fusion decides whether nonlinear rows run as
    an exposed serial region or overlap the GEMM compute through partial
    accumulation."""
    cluster = cluster or ClusterConfig()
    dram = dram or DramConfig()
    dataflow = DataflowKind.WS_OCS if features.ws_ocs else DataflowKind.WS_OS
    pipeline = PipelineMode.RCW if features.rcw else PipelineMode.SERIALIZED
    sched = _schedule(workload, cluster, tile, dataflow, pipeline,
                      include_first_load)

    nl_base, nl_fused = _nonlinear_totals(workload, groups, cycle_params)
    if features.fusion:
        exposed_nl = max(0, nl_fused - sched.compute_cycles)
    else:
        exposed_nl = nl_base

    total = sched.total_cycles + exposed_nl
    compute_s = total / cluster.freq_hz
    stream_bytes = workload.weight_stream_bytes()
    dram_s = stream_bytes / dram.bandwidth_bytes_per_s
    return LatencyReport(
        phase=workload.name, features=features, dataflow=dataflow,
        pipeline=pipeline, compute_cycles=sched.compute_cycles,
        update_cycles=sched.update_cycles,
        exposed_update_cycles=sched.exposed_update_cycles,
        nonlinear_baseline_cycles=nl_base, nonlinear_fused_cycles=nl_fused,
        exposed_nonlinear_cycles=exposed_nl, total_cycles=total,
        compute_seconds=compute_s, dram_seconds=dram_s,
        wall_seconds=max(compute_s, dram_s),
        weight_stream_bytes=stream_bytes,
        dram_bytes_total=sched.dram_bytes_total,
        weight_access=sched.weight_access, gemms=sched.gemms)


@dataclass(frozen=True)
class CalibrationResult:
    """Cycle waterfall for the two pipeline mechanisms, dataflow held at
    column-stripe reuse throughout."""
    serialized_cycles: int     # updates exposed, nonlinear unfused
    overlapped_cycles: int     # updates hidden, nonlinear unfused
    fused_cycles: int          # updates hidden, nonlinear fused
    nonlinear_baseline_cycles: int
    nonlinear_fused_cycles: int

    @property
    def update_overlap_reduction(self):
        return 1.0 - self.overlapped_cycles / self.serialized_cycles

    @property
    def fusion_reduction(self):
        return 1.0 - self.fused_cycles / self.overlapped_cycles

    @property
    def combined_reduction(self):
        return 1.0 - self.fused_cycles / self.serialized_cycles

    @property
    def module_fusion_reduction(self):
        """Reduction of the nonlinear cycles alone, before overlap."""
        return 1.0 - self.nonlinear_fused_cycles / self.nonlinear_baseline_cycles


def calibration_sweep(workload: PhaseWorkload,
                      cluster: ClusterConfig = None,
                      tile: TileDims = TileDims(128, 128, 128),
                      groups: GroupSpec = GroupSpec(),
                      cycle_params: NonlinearCycleParams = DEFAULT_CYCLE_PARAMS
                      ) -> CalibrationResult:
    """Toggle update overlap, then fusion, and record total cycles at each
    step.  The two reductions compose multiplicatively by construction:
    1 - (1-r1)(1-r2) equals the combined reduction exactly."""
    cluster = cluster or ClusterConfig()

    def cycles(rcw, fusion):
        rep = end_to_end(workload, cluster,
                         features=FeatureToggles(ws_ocs=True, rcw=rcw,
                                                 fusion=fusion),
                         tile=tile, groups=groups, cycle_params=cycle_params)
        return rep.total_cycles

    nl_base, nl_fused = _nonlinear_totals(workload, groups, cycle_params)
    serialized = cycles(rcw=False, fusion=False)
    overlapped = cycles(rcw=True, fusion=False)
    fused = cycles(rcw=True, fusion=True)
    if serialized <= 0:
        raise SchedulingError("workload produced an empty schedule")
    return CalibrationResult(serialized, overlapped, fused, nl_base, nl_fused)


if __name__ == "__main__":
    from .workload import build_llama2_7b, decode_workload, prefill_workload

    cfg = build_llama2_7b()
    cluster = ClusterConfig()

    decode = decode_workload(cfg)
    cal = calibration_sweep(decode)
    print(f"decode cycles serialized/overlapped/fused: "
          f"{cal.serialized_cycles} / {cal.overlapped_cycles} / {cal.fused_cycles}")
    print(f"update overlap saves {cal.update_overlap_reduction:.3%}, "
          f"fusion saves {cal.fusion_reduction:.3%}, "
          f"combined {cal.combined_reduction:.3%}")

    dram = DramConfig(efficiency=0.87)
    rep = end_to_end(decode, cluster, dram)
    print(f"decode wall {rep.wall_seconds * 1e3:.3f} ms -> "
          f"{1.0 / rep.wall_seconds:.2f} tokens/s "
          f"(compute {rep.compute_seconds * 1e3:.3f} ms, "
          f"stream {rep.dram_seconds * 1e3:.3f} ms)")

    prefill = prefill_workload(cfg)
    rep = end_to_end(prefill, cluster, dram)
    print(f"prefill wall {rep.wall_seconds:.4f} s "
          f"({rep.wall_seconds / 1024 * 1e3:.3f} ms/token, "
          f"{rep.total_cycles} cycles)")

    ws = schedule_baseline(prefill, DataflowKind.WS)
    ocs = schedule_ws_ocs(prefill)
    saved = 1 - ocs.dram_bytes_total / ws.dram_bytes_total
    print(f"prefill DRAM: ws {ws.dram_bytes_total} B, "
          f"ws-ocs {ocs.dram_bytes_total} B ({saved:.3%} saved)")
