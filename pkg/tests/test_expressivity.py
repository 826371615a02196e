import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpagraph import rng
from cpagraph.cpaformer import CPAFormer, ModelConfig, Variant
from cpagraph.expressivity import (Interner, Profile, WLInit, build_replication_pair, check_blindness,
                                   check_cpa_separation, composed_cpa, enumerate_domain,
                                   injectivity_trial, mean_collision, run_suite, wl_equivalent,
                                   wl_hard_pair_model_check, wl_histogram, wl_refine)
from cpagraph.graphio import parse_smiles
from cpagraph.synthetic import path_graph, star_graph


def test_replication_pair_conditions():
    pair = build_replication_pair([[1.0, 2.0], [3.0, -1.0]], 2, 5, Profile.RANDOM_C2, rng.stream(0, "r"))
    v1, a1 = pair.support(0)
    v2, a2 = pair.support(1)
    assert v1.shape[0] == 4 and v2.shape[0] == 10
    np.testing.assert_allclose(a1.sum(), 1.0)
    np.testing.assert_allclose(pair.value_masses(0), pair.value_masses(1), atol=1e-15)
    with pytest.raises(ValueError):
        build_replication_pair([[1.0]], 2, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_blind_to_replication(seed):
    gen = np.random.default_rng(seed)
    base = gen.normal(size=(int(gen.integers(1, 5)), 3))
    lam, lam2 = gen.choice(np.arange(1, 8), size=2, replace=False)
    pair = build_replication_pair(base, int(lam), int(lam2), Profile.RANDOM_C2, gen)
    (o1, o2), equal = check_blindness(pair)
    assert equal, np.max(np.abs(o1 - o2))


def test_violating_mass_condition_breaks_equality():
    pair = build_replication_pair([[1.0, 0.0], [0.0, 1.0]], 1, 2)
    skewed = np.array([0.7, 0.1, 0.1, 0.1])  # value masses 0.8 and 0.2
    _, equal = check_blindness(pair, masses=skewed)
    assert not equal


def test_cpa_separates_and_normalised_does_not():
    pair = build_replication_pair([[1.0, 2.0], [0.5, 0.25]], 1, 3)
    gate = np.array([0.5, 0.2])
    sep = check_cpa_separation(pair, gate)
    assert sep.distinct and not sep.inconclusive
    diff = np.abs(sep.outputs[0] - sep.outputs[1])
    np.testing.assert_allclose(diff[sep.witness], sep.bound, rtol=1e-12)
    norm = check_cpa_separation(pair, gate, normalized=True)
    assert np.max(np.abs(norm.outputs[0] - norm.outputs[1])) <= 1e-12


def test_zero_mean_base_is_inconclusive():
    pair = build_replication_pair([[1.0], [-1.0]], 1, 2)
    assert check_cpa_separation(pair, np.array([0.7])).inconclusive


def test_mean_collision():
    a, b = mean_collision([[1.0, 4.0], [3.0, 0.0]])
    np.testing.assert_allclose(a.mean(0), b.mean(0))
    assert b.shape[0] == 3


def test_composed_cpa_argument_checks():
    ident = lambda x: x  # noqa: E731
    with pytest.raises(ValueError):
        composed_cpa(np.ones(2), np.ones((1, 2)), 0.0, ident, ident, np.ones(2))
    with pytest.raises(ValueError):
        composed_cpa(np.ones(2), np.ones((1, 2)), 0.5, ident, ident, np.zeros(2))
    out = composed_cpa(np.ones(2), np.ones((2, 2)), 0.5, ident, ident, np.full(2, 0.5))
    np.testing.assert_allclose(out, [2.5, 2.5])


def test_domain_enumeration_size():
    # 4 centres times multisets of size <= 5 over 4 symbols: C(9, 4) = 126
    assert len(enumerate_domain(4, 5)) == 4 * 126


def test_injectivity_has_no_collisions():
    rep = injectivity_trial(1000)
    assert rep.collisions == 0
    assert rep.min_distance > 1e-9


def test_wl_refinement_basics():
    cmap = wl_refine(path_graph(5))
    assert len(set(cmap.colors.tolist())) == 3
    hist = wl_histogram(wl_refine(star_graph(4)))
    assert sorted(c for _, c in hist) == [1, 4]


def test_interner_is_order_independent():
    a, b = Interner(), Interner()
    assert a.intern_all(["x", "y", "x"]) == [0, 1, 0]
    assert b.intern_all(["y", "x"]) == [1, 0]


def test_wl_hard_pair_and_control():
    c6, c3c3 = parse_smiles("C1CCCCC1", "C6"), parse_smiles("C1CC1.C1CC1", "2C3")
    same, h1, h2 = wl_equivalent(c6, c3c3)
    assert same and h1 == h2
    split, _, _ = wl_equivalent(parse_smiles("CC(C)C"), parse_smiles("CCCC"))
    assert not split
    feats, _, _ = wl_equivalent(c6, c3c3, WLInit.FEATURES)
    assert feats


@pytest.mark.parametrize("variant", list(Variant))
def test_encoder_cannot_split_hard_pair_with_one_hop_support(variant):
    model = CPAFormer(ModelConfig(k=1, variant=variant, seed=2))
    (_, _), equal = wl_hard_pair_model_check(model, parse_smiles("C1CCCCC1"), parse_smiles("C1CC1.C1CC1"))
    assert equal


@pytest.mark.parametrize("suite", ["prop1", "prop2", "cor1", "wl"])
def test_suites_pass(suite):
    assert all(o.passed for o in run_suite(suite, trials=30))


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")
