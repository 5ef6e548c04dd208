"""Transformer workload construction: per-phase GEMM lists and nonlinear
operator tallies for a decoder-only LLM.

Every linear layer and attention matmul is expressed as one GemmSpec with a
repeat count, in the convention output[M, K] = input[M, N] @ weights[N, K].
Prefill processes a full prompt (M = sequence length); decode generates one
token (M = 1) against a KV cache of a given depth.  Attention score and
value matmuls carry activations in the stationary-operand slot, which
matters for byte accounting and for the compute precision.
"""

from dataclasses import dataclass

from .costmodel import DomainError, MatmulDims


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 4096
    intermediate_size: int = 11008
    num_layers: int = 32
    num_heads: int = 32
    vocab_size: int = 32000

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise DomainError("hidden_size must be divisible by num_heads")
        for field in ("hidden_size", "intermediate_size", "num_layers",
                      "num_heads", "vocab_size"):
            if getattr(self, field) < 1:
                raise DomainError(f"{field} must be >= 1")

    @property
    def head_dim(self):
        return self.hidden_size // self.num_heads


def build_llama2_7b() -> ModelConfig:
    return ModelConfig()


@dataclass(frozen=True)
class GemmSpec:
    """One matmul shape plus how many times the phase executes it."""
    name: str
    dims: MatmulDims
    count: int = 1
    weight_is_activation: bool = False  # True for attention score/value matmuls

    @property
    def is_weight_bearing(self):
        return not self.weight_is_activation

    @property
    def total_macs(self):
        return self.count * self.dims.macs

    @property
    def total_weight_elems(self):
        return self.count * self.dims.N * self.dims.K


@dataclass(frozen=True)
class NonlinearOps:
    """Row counts for the elementwise/reduction operators of one phase."""
    softmax_rows: int
    softmax_width: int
    rmsnorm_rows: int
    rmsnorm_width: int


@dataclass(frozen=True)
class PhaseWorkload:
    name: str
    gemms: tuple
    nonlinear: NonlinearOps

    def total_macs(self):
        return sum(g.total_macs for g in self.gemms)

    def total_ops(self):
        return 2 * self.total_macs()

    def weight_bearing_macs(self):
        return sum(g.total_macs for g in self.gemms if g.is_weight_bearing)

    def attention_macs(self):
        return sum(g.total_macs for g in self.gemms if not g.is_weight_bearing)

    def weight_stream_elems(self):
        """Unique weight elements streamed from DRAM when every weight-bearing
        matrix visits the chip exactly once."""
        return sum(g.total_weight_elems for g in self.gemms if g.is_weight_bearing)

    def weight_stream_bytes(self, weight_bits=4):
        bits = self.weight_stream_elems() * weight_bits
        return bits // 8


def _layer_gemms(cfg: ModelConfig, m: int, kv: int):
    """GEMMs for all decoder layers plus the LM head, at batch rows m and
    attention context depth kv."""
    h, ff, L = cfg.hidden_size, cfg.intermediate_size, cfg.num_layers
    heads, dh = cfg.num_heads, cfg.head_dim
    return (
        GemmSpec("q_proj", MatmulDims(m, h, h), count=L),
        GemmSpec("k_proj", MatmulDims(m, h, h), count=L),
        GemmSpec("v_proj", MatmulDims(m, h, h), count=L),
        GemmSpec("attn_qk", MatmulDims(m, dh, kv), count=L * heads,
                 weight_is_activation=True),
        GemmSpec("attn_av", MatmulDims(m, kv, dh), count=L * heads,
                 weight_is_activation=True),
        GemmSpec("o_proj", MatmulDims(m, h, h), count=L),
        GemmSpec("gate_proj", MatmulDims(m, h, ff), count=L),
        GemmSpec("up_proj", MatmulDims(m, h, ff), count=L),
        GemmSpec("down_proj", MatmulDims(m, ff, h), count=L),
        GemmSpec("lm_head", MatmulDims(m, h, cfg.vocab_size), count=1),
    )


def prefill_workload(cfg: ModelConfig, seq_len=1024) -> PhaseWorkload:
    """Prompt ingestion: every position flows through every layer at once."""
    if seq_len < 1:
        raise DomainError("seq_len must be >= 1")
    nl = NonlinearOps(
        softmax_rows=cfg.num_layers * cfg.num_heads * seq_len,
        softmax_width=seq_len,
        rmsnorm_rows=(2 * cfg.num_layers + 1) * seq_len,
        rmsnorm_width=cfg.hidden_size,
    )
    return PhaseWorkload("prefill", _layer_gemms(cfg, seq_len, seq_len), nl)


def decode_workload(cfg: ModelConfig, kv_len=1024) -> PhaseWorkload:
    """Single-token generation against a KV cache of depth kv_len."""
    if kv_len < 1:
        raise DomainError("kv_len must be >= 1")
    nl = NonlinearOps(
        softmax_rows=cfg.num_layers * cfg.num_heads,
        softmax_width=kv_len,
        rmsnorm_rows=2 * cfg.num_layers + 1,
        rmsnorm_width=cfg.hidden_size,
    )
    return PhaseWorkload("decode", _layer_gemms(cfg, 1, kv_len), nl)


def parameter_count(cfg: ModelConfig) -> int:
    """All learnable parameters: embeddings, per-layer projections and norms,
    final norm, LM head."""
    h, ff = cfg.hidden_size, cfg.intermediate_size
    per_layer = 4 * h * h + 3 * h * ff + 2 * h  # qkvo + mlp + two rmsnorm gains
    return (cfg.vocab_size * h          # token embedding
            + cfg.num_layers * per_layer
            + h                          # final rmsnorm gain
            + h * cfg.vocab_size)        # lm head


if __name__ == "__main__":
    cfg = build_llama2_7b()
    print(f"params            {parameter_count(cfg):,}")
    pf = prefill_workload(cfg, 1024)
    dec = decode_workload(cfg, 1024)
    for wl in (pf, dec):
        print(f"{wl.name:8s} macs={wl.total_macs():,}  "
              f"weight stream={wl.weight_stream_bytes():,} B")
    assert dec.weight_stream_elems() == 6_607_077_376
    assert parameter_count(cfg) == 6_738_415_616
    print("frozen totals: ok")
