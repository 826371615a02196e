import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr
from sklearn.linear_model import Ridge
from sklearn.metrics import average_precision_score, roc_auc_score

from cpagraph import rng
from cpagraph.evalstats import (MetricError, TaskKind, average_precision, fit_logistic, fit_ridge,
                                holm_adjust, mae, multilabel_ap, paired_bootstrap, partial_correlation,
                                resample_indices, rmse, roc_auc, scaffold_core, scaffold_key,
                                size_features, size_only_baseline, size_shift_split, spearman, stratum,
                                stratified_metric)
from cpagraph.graphio import parse_smiles, to_smiles
from cpagraph.synthetic import path_graph, random_corpus


def _binary_case(seed, n=40, ties=True):
    gen = np.random.default_rng(seed)
    y = gen.integers(0, 2, size=n).astype(float)
    y[:2] = [0, 1]
    s = gen.integers(0, 6, size=n).astype(float) if ties else gen.normal(size=n)
    return y, s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_auc_and_ap_match_sklearn(seed, ties):
    y, s = _binary_case(seed, ties=ties)
    assert roc_auc(y, s) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    assert average_precision(y, s) == pytest.approx(average_precision_score(y, s), abs=1e-12)


def test_regression_metrics():
    y, p = np.array([1.0, 2.0, 4.0]), np.array([1.0, 3.0, 2.0])
    assert rmse(y, p) == pytest.approx(np.sqrt(5 / 3))
    assert mae(y, p) == pytest.approx(1.0)
    gen = np.random.default_rng(0)
    a, b = gen.normal(size=30), gen.normal(size=30)
    assert spearman(a, b) == pytest.approx(spearmanr(a, b)[0], abs=1e-12)


def test_metric_errors():
    with pytest.raises(MetricError):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        rmse([1.0], [1.0])
    with pytest.raises(MetricError):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(MetricError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_multilabel_ap_skips_and_ignores_missing():
    Y = np.array([[1, 0, np.nan], [0, 0, 1], [1, 0, 0], [0, 0, np.nan]], dtype=float)
    S = np.array([[0.9, 0.1, 0.3], [0.2, 0.4, 0.8], [0.7, 0.5, 0.1], [0.1, 0.2, 0.9]])
    res = multilabel_ap(Y, S)
    assert res.used == 2 and res.skipped == 1
    ref = np.mean([average_precision_score(Y[:, 0], S[:, 0]), average_precision_score([1, 0], [0.8, 0.1])])
    assert res.value == pytest.approx(ref)


def test_strata_boundaries():
    assert [stratum(n) for n in (1, 29, 30, 49, 50, 200)] == ["small", "small", "mid", "mid", "large", "large"]
    res = stratified_metric([5, 6, 35], [1.0, 2.0, 3.0], [1.0, 2.5, 3.0])
    assert res["small"] == pytest.approx(np.sqrt(0.125)) and res["mid"] is None and res["large"] is None


def test_holm_hand_example():
    assert holm_adjust([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06], abs=1e-15)
    assert holm_adjust([0.5, 0.9]) == [1.0, 1.0]
    with pytest.raises(ValueError):
        holm_adjust([1.2])


def test_bootstrap_identical_systems():
    y, s = _binary_case(1)
    res = paired_bootstrap(s, s, y, "auc", resamples=500, seed=3)
    assert res.ci == (0.0, 0.0) and res.delta_mean == 0.0 and res.p_value == 1.0


def test_bootstrap_shared_index_trace():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    a = np.array([1.0, 2.0, 3.0, 5.0])
    b = np.array([1.5, 2.0, 2.0, 4.0])
    res = paired_bootstrap(a, b, y, "mae", resamples=6, seed=9)
    idx = resample_indices(4, 6, 9)
    np.testing.assert_array_equal(res.indices, idx)
    for r in range(6):
        ii = idx[r]
        expected = np.mean(np.abs(y[ii] - a[ii])) - np.mean(np.abs(y[ii] - b[ii]))
        assert res.deltas[r] == pytest.approx(expected, abs=1e-15)


def test_bootstrap_redraws_undefined_resamples():
    y = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    a = np.array([0.1, 0.9, 0.2, 0.8, 0.3])
    b = np.array([0.5, 0.4, 0.3, 0.6, 0.1])
    res = paired_bootstrap(a, b, y, "auc", resamples=200, seed=0)
    assert res.redraws > 0
    assert np.all(np.isfinite(res.deltas))
    assert 0.0 <= res.p_value <= 1.0


def test_partial_correlation_removes_confounder():
    gen = np.random.default_rng(0)
    z = gen.normal(size=400)
    x = z + 0.1 * gen.normal(size=400)
    y = z + 0.1 * gen.normal(size=400)
    assert abs(partial_correlation(x, y, z)) < 0.2
    assert partial_correlation(x + 0.5 * y, y, z) > 0.3
    with pytest.raises(ValueError):
        partial_correlation(x, y, np.ones(400))


def test_ridge_matches_sklearn():
    gen = np.random.default_rng(1)
    X = gen.normal(size=(50, 3)) * [1.0, 10.0, 0.1]
    y = X @ [1.0, 0.2, 3.0] + gen.normal(size=50)
    ours = fit_ridge(X, y, lam=2.0)
    Z = (X - X.mean(0)) / X.std(0)
    ref = Ridge(alpha=2.0).fit(Z, y)
    np.testing.assert_allclose(ours.coef, ref.coef_, atol=1e-10)
    np.testing.assert_allclose(ours.predict(X), ref.predict(Z), atol=1e-10)


def test_logistic_fit_and_baseline():
    gen = np.random.default_rng(2)
    X = gen.normal(size=(200, 2))
    y = (X[:, 0] + 0.3 * gen.normal(size=200) > 0).astype(float)
    model = fit_logistic(X, y)
    assert roc_auc(y, model.decision(X)) > 0.9
    base = size_only_baseline(X, y, TaskKind.BINARY, val=(X[:50], y[:50]))
    assert base.kind is TaskKind.BINARY
    with pytest.raises(ValueError):
        size_only_baseline(X[:3], y[:3], TaskKind.BINARY)


def test_size_features():
    np.testing.assert_allclose(size_features(path_graph(10), 3), [10, 5.8, 7])


def test_scaffold_core_and_keys():
    assert scaffold_core(parse_smiles("CCCC")) is None
    core = scaffold_core(parse_smiles("CC1CCC1CCO"))
    assert core.n == 4
    assert scaffold_key(parse_smiles("CCCC")) == "acyclic"
    assert scaffold_key(parse_smiles("C1CCC1CC")) == scaffold_key(parse_smiles("C1CCC1CCCCO"))
    assert scaffold_key(parse_smiles("C1CCC1")) != scaffold_key(parse_smiles("C1CCCC1"))


def test_size_shift_split():
    ring = "C1CCCCC1"
    graphs = [parse_smiles(ring + "C" * n, f"r{n}") for n in (2, 10, 50)]
    graphs += [parse_smiles("C1CCC1" + "C" * 2, "q")]
    split = size_shift_split(graphs)
    assert split.test == [2]
    assert split.train == [0, 1, 3]
    with pytest.raises(ValueError):
        size_shift_split(graphs[:2])


def test_scaffold_key_ignores_atom_order():
    for g in random_corpus(20, rng.stream(0, "keys"), (4, 14)):
        assert scaffold_key(parse_smiles(to_smiles(g))) == scaffold_key(g)
