import pytest

from cimsim.costmodel import DomainError
from cimsim.workload import (
    ModelConfig,
    build_llama2_7b,
    decode_workload,
    parameter_count,
    prefill_workload,
)

# Frozen totals for the default 7B configuration.
EXPECTED = {
    "parameter_count": 6_738_415_616,
    "weight_stream_elems": 6_607_077_376,
    "weight_stream_bytes_int4": 3_303_538_688,
    "decode_macs_kv1024": 6_875_512_832,
    "decode_weight_macs": 6_607_077_376,
    "decode_attention_macs_kv1024": 268_435_456,
    "prefill_macs_1024": 7_040_525_139_968,
}


def test_parameter_count_frozen():
    assert parameter_count(build_llama2_7b()) == EXPECTED["parameter_count"]


def test_parameter_count_near_seven_billion():
    assert abs(parameter_count(build_llama2_7b()) - 6.7e9) / 6.7e9 < 0.01


def test_weight_stream_totals():
    dec = decode_workload(build_llama2_7b(), kv_len=1024)
    assert dec.weight_stream_elems() == EXPECTED["weight_stream_elems"]
    assert dec.weight_stream_bytes(weight_bits=4) == EXPECTED["weight_stream_bytes_int4"]
    # streaming the weights is per-token work and does not depend on kv depth
    assert decode_workload(build_llama2_7b(), kv_len=64).weight_stream_elems() == \
        dec.weight_stream_elems()


def test_decode_mac_split():
    dec = decode_workload(build_llama2_7b(), kv_len=1024)
    assert dec.weight_bearing_macs() == EXPECTED["decode_weight_macs"]
    assert dec.attention_macs() == EXPECTED["decode_attention_macs_kv1024"]
    assert dec.total_macs() == EXPECTED["decode_macs_kv1024"]
    assert dec.total_ops() == 2 * dec.total_macs()
    # with one query row, every weight-bearing MAC maps to one weight element
    assert dec.weight_bearing_macs() == dec.weight_stream_elems()


def test_prefill_macs_frozen():
    pf = prefill_workload(build_llama2_7b(), seq_len=1024)
    assert pf.total_macs() == EXPECTED["prefill_macs_1024"]
    # weight-bearing prefill work is exactly seq_len decode passes
    assert pf.weight_bearing_macs() == 1024 * EXPECTED["decode_weight_macs"]


def test_gemm_shapes_and_counts():
    cfg = build_llama2_7b()
    pf = prefill_workload(cfg, seq_len=1024)
    by_name = {g.name: g for g in pf.gemms}
    assert len(by_name) == len(pf.gemms)
    q = by_name["q_proj"].dims
    assert (q.M, q.N, q.K) == (1024, 4096, 4096)
    assert (by_name["gate_proj"].dims.N, by_name["gate_proj"].dims.K) == (4096, 11008)
    assert (by_name["down_proj"].dims.N, by_name["down_proj"].dims.K) == (11008, 4096)
    assert (by_name["lm_head"].dims.N, by_name["lm_head"].dims.K) == (4096, 32000)
    assert by_name["lm_head"].count == 1
    assert by_name["attn_qk"].count == 32 * 32
    assert (by_name["attn_qk"].dims.N, by_name["attn_qk"].dims.K) == (128, 1024)
    assert (by_name["attn_av"].dims.N, by_name["attn_av"].dims.K) == (1024, 128)
    assert by_name["attn_qk"].weight_is_activation
    assert by_name["attn_av"].weight_is_activation
    assert all(g.is_weight_bearing for g in pf.gemms
               if g.name not in ("attn_qk", "attn_av"))


def test_decode_uses_single_row():
    dec = decode_workload(build_llama2_7b(), kv_len=512)
    assert all(g.dims.M == 1 for g in dec.gemms)
    qk = next(g for g in dec.gemms if g.name == "attn_qk")
    av = next(g for g in dec.gemms if g.name == "attn_av")
    assert qk.dims.K == 512 and av.dims.N == 512


def test_nonlinear_row_tallies():
    cfg = build_llama2_7b()
    dec = decode_workload(cfg, kv_len=1024).nonlinear
    assert dec.softmax_rows == 32 * 32
    assert dec.softmax_width == 1024
    assert dec.rmsnorm_rows == 65
    assert dec.rmsnorm_width == 4096
    pf = prefill_workload(cfg, seq_len=1024).nonlinear
    assert pf.softmax_rows == 1024 * dec.softmax_rows
    assert pf.rmsnorm_rows == 1024 * dec.rmsnorm_rows


def test_config_validation():
    with pytest.raises(DomainError):
        ModelConfig(hidden_size=100, num_heads=32)
    with pytest.raises(DomainError):
        ModelConfig(num_layers=0)
    with pytest.raises(DomainError):
        prefill_workload(build_llama2_7b(), seq_len=0)
    with pytest.raises(DomainError):
        decode_workload(build_llama2_7b(), kv_len=-1)


def test_head_dim():
    assert build_llama2_7b().head_dim == 128
