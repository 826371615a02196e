import numpy as np
import pytest
from _refs import REFERENCE_VARIANTS, per_node_attention

from cpagraph import rng
from cpagraph.batcher import (audit, audit_corpus, batch_padding, bucket, make_batches, pad_batch,
                              prepare)
from cpagraph.cpaformer import CPAFormer, ModelConfig, Variant
from cpagraph.synthetic import random_corpus


def _graphs(n=20, seed=0):
    return random_corpus(n, rng.stream(seed, "batcher"), (1, 16))


def test_padding_formula_two_lists():
    lmax, frac = batch_padding([3, 5])
    assert lmax == 5
    assert frac == 0.2
    rep = audit([[3, 5]], width=4)
    assert rep.padding_percent == pytest.approx(20.0, abs=1e-12)
    assert rep.max_padded_length == 5


def test_no_padding_when_lengths_equal():
    assert batch_padding([4, 4, 4]) == (4, 0.0)


def test_pad_batch_structure():
    graphs = _graphs()
    inputs = [prepare(g, 3) for g in graphs]
    b = pad_batch(inputs, 3)
    assert b.n_nodes == sum(g.n for g in graphs)
    assert b.lmax == max(int(gi.supports.sizes().max()) for gi in inputs)
    np.testing.assert_array_equal(b.valid.sum(axis=1), b.support_size)
    # padded slots point at the node itself and stay inside its graph
    rows = np.arange(b.n_nodes)[:, None].repeat(b.lmax, axis=1)
    assert np.all(b.nbr[~b.valid] == rows[~b.valid])
    assert np.all(b.node_graph[b.nbr] == b.node_graph[:, None])
    # direct bonds carry a global edge id whose endpoints match the pair
    ii, ll = np.nonzero(b.pair_edge >= 0)
    for i, slot in zip(ii, ll):
        e = b.edges[b.pair_edge[i, slot]]
        assert {int(e[0]), int(e[1])} == {int(i), int(b.nbr[i, slot])}
        assert b.spd_bin[i, slot] == 1
    assert b.edges.shape[0] == sum(len(g.bonds) for g in graphs)


def test_block_cache_gives_identical_batches():
    graphs = _graphs(8)
    inputs = [prepare(g, 2) for g in graphs]
    first = pad_batch(inputs, 2)
    second = pad_batch(inputs, 2)
    fresh = pad_batch([prepare(g, 2) for g in graphs], 2)
    for name in ("nbr", "valid", "spd_bin", "bond_idx", "pair_edge", "categorical", "continuous"):
        np.testing.assert_array_equal(getattr(first, name), getattr(second, name))
        np.testing.assert_array_equal(getattr(first, name), getattr(fresh, name))


def test_bucket_assignment_monotone():
    keys = [1, 7, 4, 9, 12, 3, 8]
    groups = bucket(keys, 4)
    assert groups == {1: [0, 2, 5], 2: [1, 6], 3: [3, 4]}
    ids = sorted(groups)
    for lo_id, hi_id in zip(ids[:-1], ids[1:]):
        assert max(keys[p] for p in groups[lo_id]) < min(keys[p] for p in groups[hi_id])
    with pytest.raises(ValueError):
        bucket(keys, 0)


def test_make_batches_covers_every_graph_once():
    inputs = [prepare(g, 3) for g in _graphs(30)]
    batches = make_batches(inputs, 3, width=3, cap=4)
    ids = [i for b in batches for i in b.ids]
    assert sorted(ids) == sorted(gi.graph.id for gi in inputs)
    assert all(b.n_graphs <= 4 for b in batches)


def test_narrow_buckets_pad_less():
    inputs = [prepare(g, 3) for g in _graphs(60)]
    narrow = audit_corpus(inputs, width=1, cap=64)
    wide = audit_corpus(inputs, width=64, cap=64)
    assert narrow.padding_percent <= wide.padding_percent


@pytest.mark.parametrize("variant", REFERENCE_VARIANTS)
def test_padded_attention_matches_per_node_reference(variant):
    graphs = _graphs(20)
    model = CPAFormer(ModelConfig(layers=1, model_dim=8, heads=2, ffn_dim=8, k=2, variant=variant, seed=3))
    # random bias tables so the reference exercises every additive term
    gen = rng.stream(3, "tables")
    for name, p in model.params.items():
        if name.endswith(("spd", "keycent")) or ".bond." in name:
            p.data = gen.normal(size=p.shape)
    batch = pad_batch([prepare(g, 2) for g in graphs], 2)
    h = model.embed(batch)
    got = model.attention(0, h, batch).data
    ref = per_node_attention(model, graphs, h.data)
    assert np.max(np.abs(got - ref)) <= 1e-12


@pytest.mark.parametrize("variant", [v for v in Variant if v not in REFERENCE_VARIANTS])
def test_batching_does_not_change_graph_embeddings(variant):
    graphs = _graphs(10, seed=1)
    model = CPAFormer(ModelConfig(layers=2, model_dim=8, heads=2, ffn_dim=8, k=3, variant=variant, seed=1))
    together = model.forward(pad_batch([prepare(g, 3) for g in graphs], 3)).data
    alone = np.vstack([model.forward(pad_batch([prepare(g, 3)], 3)).data for g in graphs])
    assert np.max(np.abs(together - alone)) <= 1e-12
