import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabxplain import attribution as at
from tabxplain.data import synth_highdim
from tabxplain.errors import EmptySample, InvalidConfig, MismatchedFeatureSpaces, TooManyFeatures
from tabxplain.numeric.ops import softmax_np
from tabxplain.surrogate import fit_dt, fit_forest

from oracles import shapley_permutation_oracle


def linear_two_class(w, b=0.0):
    """Class-1 'probability' is a linear function of x (not clipped; Shapley only needs a real value)."""
    w = np.asarray(w, dtype=float)

    def f(X):
        s = np.asarray(X) @ w + b
        return np.column_stack([1 - s, s])
    return f


def random_model(k, seed):
    rng = np.random.default_rng(seed)
    W1 = rng.normal(size=(k, 6))
    W2 = rng.normal(size=(6, 3))
    return lambda X: softmax_np(np.tanh(np.asarray(X) @ W1) @ W2, axis=1)


def test_two_feature_linear_example():
    r = at.shapley_exact(linear_two_class([1.0, 2.0]), [1.0, 1.0], [[0.0, 0.0]], target_class=1)
    np.testing.assert_allclose(r.phi, [1.0, 2.0], atol=1e-15)
    assert r.base == 0.0 and r.value == 3.0


@settings(max_examples=25)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_exact_equals_permutation_oracle(k, seed, n_bg):
    rng = np.random.default_rng(seed)
    f = random_model(k, seed)
    x = rng.normal(size=k)
    bg = rng.normal(size=(n_bg, k))
    r = at.shapley_exact(f, x, bg)
    oracle = shapley_permutation_oracle(f, x, bg, r.target_class)
    np.testing.assert_allclose(r.phi, oracle, atol=1e-10)
    assert abs(r.efficiency_gap()) <= 1e-9


def test_null_player_and_symmetry_exact():
    def f(X):
        X = np.asarray(X)
        s = X[:, 0] * X[:, 1] + np.sin(X[:, 0] + X[:, 1])  # symmetric in 0/1, ignores 2
        return np.column_stack([s, -s])

    x = np.array([0.7, 0.7, 3.0])
    bg = np.array([[0.1, 0.1, -2.0], [-0.4, -0.4, 1.0]])
    r = at.shapley_exact(f, x, bg, target_class=0)
    assert r.phi[2] == 0.0
    assert r.phi[0] == r.phi[1]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_efficiency_holds_for_sampled(seed):
    rng = np.random.default_rng(seed)
    f = random_model(8, seed)
    r = at.shapley_sampled(f, rng.normal(size=8), rng.normal(size=(4, 8)), n_perms=7, seed=seed)
    assert abs(r.efficiency_gap()) <= 1e-9


def test_all_orderings_reproduce_exact():
    rng = np.random.default_rng(1)
    f = random_model(4, 1)
    x, bg = rng.normal(size=4), rng.normal(size=(3, 4))
    exact = at.shapley_exact(f, x, bg)
    full = at.shapley_sampled(f, x, bg, orderings=itertools.permutations(range(4)))
    np.testing.assert_allclose(full.phi, exact.phi, atol=1e-12)


def test_sampled_within_three_stderr():
    rng = np.random.default_rng(2)
    f = random_model(6, 2)
    x, bg = rng.normal(size=6), rng.normal(size=(4, 6))
    exact = at.shapley_exact(f, x, bg)
    est = at.shapley_sampled(f, x, bg, n_perms=10_000, seed=0)
    assert np.all(np.abs(est.phi - exact.phi) <= 3 * est.stderr + 1e-12)
    again = at.shapley_sampled(f, x, bg, n_perms=10_000, seed=0)
    assert again.phi.tobytes() == est.phi.tobytes()


def test_exact_limit_and_dispatch():
    f = linear_two_class(np.ones(13) / 13)
    with pytest.raises(TooManyFeatures):
        at.shapley_exact(f, np.zeros(13), np.ones((1, 13)))
    assert at.shapley(f, np.zeros(13), np.ones((1, 13)), n_perms=4).method == "sampled"
    g = linear_two_class(np.ones(12) / 12)
    assert at.shapley(g, np.zeros(12), np.ones((1, 12))).method == "exact"


def test_background_errors():
    f = linear_two_class([1.0, 1.0])
    with pytest.raises(EmptySample):
        at.shapley_exact(f, [1.0, 1.0], np.zeros((0, 2)))
    with pytest.raises(EmptySample):
        at.shapley_exact(f, [1.0, 1.0], np.zeros((2, 3)))


def test_global_shap_examples():
    f = random_model(3, 4)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 3))
    bg = rng.normal(size=(5, 3))
    g = at.global_shap(f, x, bg)
    np.testing.assert_array_equal(g.gfi, np.abs(g.local[0].phi))
    X = rng.normal(size=(4, 3))
    a = at.global_shap(f, X, bg)
    b = at.global_shap(f, np.vstack([X, X]), bg)
    np.testing.assert_allclose(a.gfi, b.gfi, rtol=1e-14)
    with pytest.raises(EmptySample):
        at.global_shap(f, np.zeros((0, 3)), bg)


def test_global_shap_favours_informative_features():
    d = synth_highdim(500, 8, 3, 3, seed=0, separation=2.5)
    m = fit_forest(d.features, d.labels, 3, "ERT", n_trees=20, seed=0)
    g = at.global_shap(m.predict_proba, d.features[:25], d.features[100:116])
    inf = list(d.informative)
    noise = [i for i in range(8) if i not in inf]
    assert g.gfi[inf].sum() > g.gfi[noise].sum()
    assert g.gfi[inf].min() > g.gfi[noise].max()


def test_stack_examples():
    np.testing.assert_allclose(at.stack_gfi([[1, 0], [0, 1], [1, 1]]), [2 / 3, 2 / 3])
    np.testing.assert_allclose(at.stack_gfi([[0, 0], [3, 1], [0, 2]]), [1, 1])
    v = np.array([0.2, 0.5, 0.1])
    np.testing.assert_allclose(at.stack_gfi([v, v, v]), v)
    with pytest.raises(MismatchedFeatureSpaces):
        at.stack_gfi([[1, 0], [1, 0, 0]])


def test_stacked_shap_over_surrogates():
    d = synth_highdim(120, 4, 2, 2, seed=3)
    models = {"dt": fit_dt(d.features, d.labels, 2, feature_indices=(0, 1, 2, 3)),
              "ert": fit_forest(d.features, d.labels, 2, "ERT", n_trees=5, feature_indices=(0, 1, 2, 3))}
    stacked, per = at.stacked_shap(models, d.features[:5], d.features[50:60])
    np.testing.assert_allclose(stacked, (per["dt"].gfi + per["ert"].gfi) / 2)
    other = {"dt": models["dt"], "x": fit_dt(d.features, d.labels, 2, feature_indices=(0, 1, 2, 5))}
    with pytest.raises(MismatchedFeatureSpaces):
        at.stacked_shap(other, d.features[:2], d.features[:3])


def test_permutation_importance_examples():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 2, 4000), rng.normal(size=4000), np.full(4000, 2.0)])
    Y = X[:, 0].astype(int)
    predict = lambda A: np.asarray(A)[:, 0].astype(int)
    means, stds = at.permutation_importance(predict, X, Y, repeats=5, seed=1)
    assert abs(means[0] - 0.5) <= 0.05
    assert means[1] == 0.0 and means[2] == 0.0 and stds[1] == 0.0
    again = at.permutation_importance(predict, X, Y, repeats=5, seed=1)
    assert again[0].tobytes() == means.tobytes()
    f1, _ = at.permutation_importance(predict, X, Y, metric="macro-F1", repeats=2)
    assert f1[0] > 0.3
    with pytest.raises(InvalidConfig):
        at.permutation_importance(predict, X, Y, metric="auc")
    with pytest.raises(InvalidConfig):
        at.permutation_importance(predict, X, Y, repeats=0)


def test_result_json():
    r = at.shapley_sampled(linear_two_class([1.0, 2.0]), [1.0, 1.0], [[0.0, 0.0]], n_perms=3, target_class=1)
    doc = r.to_json()
    assert doc["method"] == "sampled" and len(doc["stderr"]) == 2
    g = at.global_shap(linear_two_class([1.0, 2.0]), [[1.0, 1.0]], [[0.0, 0.0]])
    rows = g.to_json(["a", "b"])["features"]
    assert [r["name"] for r in rows] == ["b", "a"]
