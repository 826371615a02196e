from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpagraph import rng
from cpagraph import tensorcore as tc
from cpagraph.batcher import pad_batch, prepare
from cpagraph.cpaformer import (CapacityError, CPAFormer, GateKind, ModelConfig, Variant,
                                cpa_channel_norm_probe, cpa_head, faithful_graphormer_config,
                                gate_fn, match_capacity, num_params, large_config,
                                param_shapes)
from cpagraph.synthetic import random_corpus, star_graph
from cpagraph.tensorcore import Tensor


def _batch(k=3, n=6, seed=0, with_paths=False):
    graphs = random_corpus(n, rng.stream(seed, "model"), (1, 12))
    return graphs, pad_batch([prepare(g, k, with_paths) for g in graphs], k)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("path_bias", [False, True])
def test_closed_form_count_matches_instantiated(variant, path_bias):
    cfg = ModelConfig(layers=2, model_dim=12, heads=3, ffn_dim=20, variant=variant, path_edge_bias=path_bias)
    model = CPAFormer(cfg)
    assert num_params(cfg) == model.count() == sum(int(np.prod(s)) for s in param_shapes(cfg).values())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.sampled_from([4, 8, 12]), st.sampled_from([1, 2, 4]), st.integers(1, 40),
       st.sampled_from(list(Variant)))
def test_count_formula_property(layers, dim, heads, ffn, variant):
    cfg = ModelConfig(layers=layers, model_dim=dim, heads=heads, ffn_dim=ffn, variant=variant)
    assert num_params(cfg) == sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def test_linear_zero_gate_equals_softmax_bitwise():
    graphs, batch = _batch(n=20)
    base = ModelConfig(layers=2, model_dim=8, heads=2, ffn_dim=16, seed=5)
    soft = CPAFormer(replace(base, variant=Variant.SOFTMAX_ONLY))
    cpa = CPAFormer(replace(base, variant=Variant.CPA, gate=GateKind.LINEAR))
    for name, p in cpa.params.items():
        if ".gate" in name:
            p.data = np.zeros(p.shape)
        else:
            assert np.array_equal(p.data, soft.params[name].data)
    assert np.array_equal(cpa.forward(batch).data, soft.forward(batch).data)


def test_config_round_trip_and_validation():
    cfg = ModelConfig(variant="NORM_CPA", gate="TANH", k=None)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"layers": 2, "bogus": 1})
    with pytest.raises(ValueError):
        ModelConfig(model_dim=10, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(k=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)


def test_reference_configs():
    big = large_config()
    assert (big.layers, big.model_dim, big.heads, big.ffn_dim, big.k) == (12, 512, 8, 2048, 3)
    faithful = faithful_graphormer_config()
    assert faithful.k is None and faithful.spd_bins == 21 and faithful.path_edge_bias


def test_faithful_baseline_runs_with_path_bias():
    _, batch = _batch(k=None, with_paths=True)
    model = CPAFormer(faithful_graphormer_config(layers=1, model_dim=8, heads=2, ffn_dim=8))
    out = model.forward(batch)
    assert out.shape == (6, 8)
    _, plain = _batch(k=None)
    with pytest.raises(ValueError):
        model.forward(plain)


def test_bin_mismatch_is_rejected():
    _, batch = _batch(k=2)
    with pytest.raises(ValueError):
        CPAFormer(ModelConfig(k=3)).forward(batch)


def test_capacity_match_within_one_step():
    cpa = ModelConfig(layers=2, model_dim=16, heads=2, ffn_dim=32, variant=Variant.CPA)
    target = num_params(cpa)
    soft = replace(cpa, variant=Variant.SOFTMAX_ONLY)
    f = match_capacity(soft, target)
    slope = soft.layers * (2 * soft.model_dim + 1)
    assert abs(num_params(replace(soft, ffn_dim=f)) - target) <= slope / 2
    # counts move in steps of ``slope`` > 1, so one past a reachable count is unreachable
    with pytest.raises(CapacityError):
        match_capacity(soft, num_params(replace(soft, ffn_dim=f)) + 1, tolerance=0)


def test_gate_functions():
    x = Tensor(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_allclose(gate_fn(GateKind.SIGMOID, x).data, 1 / (1 + np.exp(-x.data)))
    np.testing.assert_allclose(gate_fn(GateKind.TANH, x).data, np.tanh(x.data))
    assert gate_fn(GateKind.LINEAR, x) is x


def test_cpa_head_hand_example():
    q = Tensor(np.array([1.0, 0.0]))
    values = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    logits = Tensor(np.array([0.0, 0.0]))
    gate = Tensor(np.eye(2))
    out = cpa_head(q, values, logits, gate, Variant.CPA, GateKind.LINEAR).data
    # mean [2, 3] plus gate [1, 0] times sum [4, 6]
    np.testing.assert_allclose(out, [6.0, 3.0])
    norm = cpa_head(q, values, logits, gate, Variant.NORM_CPA, GateKind.LINEAR).data
    np.testing.assert_allclose(norm, [4.0, 3.0])
    soft = cpa_head(q, values, logits, None, Variant.SOFTMAX_ONLY).data
    np.testing.assert_allclose(soft, [2.0, 3.0])


def test_probe_norms():
    batch = pad_batch([prepare(star_graph(a), 3) for a in (2, 5, 9)], 3)
    norms, sizes, degrees = cpa_channel_norm_probe(CPAFormer(ModelConfig(seed=1)), batch)
    assert norms.shape == sizes.shape == degrees.shape == (batch.n_nodes,)
    assert np.all(norms > 0)
    zeros, _, _ = cpa_channel_norm_probe(CPAFormer(ModelConfig(variant=Variant.SOFTMAX_ONLY)), batch)
    assert np.all(zeros == 0)


def test_dropout_only_in_training():
    _, batch = _batch()
    model = CPAFormer(ModelConfig(dropout=0.3, seed=2))
    a = model.forward(batch).data
    b = model.forward(batch).data
    assert np.array_equal(a, b)
    c = model.forward(batch, training=True, dropout_rng=np.random.default_rng(0)).data
    assert not np.array_equal(a, c)


def test_mask_token_replaces_rows():
    _, batch = _batch()
    model = CPAFormer(ModelConfig(seed=2))
    mask = np.zeros(batch.n_nodes, dtype=bool)
    mask[[0, 3]] = True
    tok = Tensor(np.full(model.config.model_dim, 7.0))
    h = model.embed(batch, mask, tok).data
    assert np.all(h[[0, 3]] == 7.0)
    np.testing.assert_array_equal(h[~mask], model.embed(batch).data[~mask])
    with pytest.raises(ValueError):
        model.embed(batch, mask, None)


def test_layer_norm_overflow_is_detected():
    _, batch = _batch()
    model = CPAFormer(ModelConfig(gate=GateKind.LINEAR, gate_init_scale=1e155, seed=0))
    with pytest.raises(tc.NumericError):
        model.forward(batch)
