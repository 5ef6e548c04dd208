"""cimsim: cycle-approximate simulator and analytical cost model for a
digital compute-in-memory LLM accelerator with a read-compute/write
pipelined macro array."""

__version__ = "0.1.0"

from .costmodel import (
    AccessCounts,
    DataflowKind,
    DomainError,
    MatmulDims,
    TileDims,
    TilingError,
    cim_weight_updates,
    dram_access,
    loopnest_oracle,
    reduction_ratio,
)
from .macro import (
    CimMacro,
    GeometryError,
    MacroConfig,
    PipelineMode,
    PrecisionError,
    PrecisionMode,
    TileTrace,
    compute_tile,
    mode_switch_latency,
    peak_throughput,
)
from .nonlinear import (
    GroupSpec,
    LutTable,
    NonlinearKind,
    build_lut,
    group_rmsnorm,
    group_softmax,
    lut_max_error,
    nonlinear_latency,
)
from .scheduler import (
    CalibrationResult,
    ClusterConfig,
    DramConfig,
    FeatureToggles,
    LatencyReport,
    SchedulingError,
    calibration_sweep,
    end_to_end,
    schedule_baseline,
    schedule_ws_ocs,
)
from .workload import (
    GemmSpec,
    ModelConfig,
    PhaseWorkload,
    build_llama2_7b,
    decode_workload,
    parameter_count,
    prefill_workload,
)
