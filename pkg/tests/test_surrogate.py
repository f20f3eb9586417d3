import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabxplain import surrogate as sg
from tabxplain.data import split, synth_highdim
from tabxplain.errors import EmptyNode, InvalidConfig, ShapeMismatch, ZeroVariance

from oracles import best_split_exhaustive, gini_direct, r_squared_direct


def test_gini_examples():
    assert sg.gini([5, 0, 0]) == 0.0
    assert sg.gini([0.5, 0.5]) == 0.5
    assert sg.gini([0.7, 0.2, 0.1]) == pytest.approx(0.46, abs=1e-15)
    with pytest.raises(EmptyNode):
        sg.gini([0, 0])


@given(st.lists(st.integers(0, 50), min_size=1, max_size=8).filter(lambda v: sum(v) > 0))
def test_gini_matches_direct_and_range(counts):
    g = sg.gini(counts)
    assert g == pytest.approx(gini_direct(counts), abs=1e-12)
    assert -1e-15 <= g <= 1 - 1 / len(counts) + 1e-12


def test_pure_and_depth_zero():
    X = np.random.default_rng(0).normal(size=(10, 2))
    t = sg.fit_tree(X, np.full(10, 1), 3)
    assert t.n_nodes == 1 and t.value[0].tolist() == [0, 1, 0]
    y = np.array([0] * 7 + [1] * 3)
    t = sg.fit_tree(X, y, 2, sg.TreeParams(max_depth=0))
    assert t.n_nodes == 1
    np.testing.assert_allclose(t.value[0], [0.7, 0.3])
    np.testing.assert_allclose(t.predict_proba(np.zeros((3, 2))), [[0.7, 0.3]] * 3)


def test_one_dimensional_threshold():
    x = np.array([-3.0, -1.5, -0.2, 0.4, 1.0, 2.0])[:, None]
    y = (x[:, 0] >= 0).astype(int)
    t = sg.fit_tree(x, y, 2)
    assert t.depth() == 1
    assert -0.2 < t.threshold[0] < 0.4


def test_boundary_goes_right():
    x = np.array([0.0, 1.0, 2.0, 3.0])[:, None]
    t = sg.fit_tree(x, np.array([0, 0, 1, 1]), 2)
    thr = t.threshold[0]
    assert thr == 1.5
    assert sg.predict(sg.SurrogateModel("DT", (t,), (0,), sg.TreeParams(), 1, 2), np.array([thr]))[0] == 1


def node_gain(t, node):
    l, r = t.left[node], t.right[node]
    n = t.n_samples[node]
    return t.impurity[node] - (t.n_samples[l] * t.impurity[l] + t.n_samples[r] * t.impurity[r]) / n


def check_against_oracle(t, X, y, n_classes, node=0, rows=None):
    rows = np.arange(len(y)) if rows is None else rows
    if t.is_leaf(node):
        return
    oracle = best_split_exhaustive(X[rows], y[rows], n_classes)
    assert oracle is not None
    assert node_gain(t, node) == pytest.approx(oracle[2], abs=1e-12)
    go_left = X[rows, t.feature[node]] < t.threshold[node]
    check_against_oracle(t, X, y, n_classes, t.left[node], rows[go_left])
    check_against_oracle(t, X, y, n_classes, t.right[node], rows[~go_left])


@settings(max_examples=150)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_split_equals_exhaustive_search(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, k)).astype(float)
    y = rng.integers(0, 3, size=n)
    t = sg.fit_tree(X, y, 3, sg.TreeParams(max_depth=2))
    check_against_oracle(t, X, y, 3)
    root = best_split_exhaustive(X, y, 3)
    if not t.is_leaf(0):
        # tie-break: lowest feature, then lowest threshold
        assert (t.feature[0], t.threshold[0]) == (root[0], root[1])


@given(st.integers(0, 2**32 - 1), st.sampled_from(["DT", "ERT"]))
@settings(max_examples=10)
def test_leaves_partition_space(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 3))
    y = rng.integers(0, 3, 80)
    m = sg.fit_surrogate(kind, X, y, 3, seed=seed, n_trees=3)
    pts = rng.normal(scale=2.0, size=(10_000, 3))
    for t in m.trees:
        leaves = t.apply(pts)
        assert np.all(t.feature[leaves] < 0)
        # each point satisfies the full path of exactly the leaf it reached
        counts = np.zeros(len(pts), dtype=int)
        for leaf in t.leaves:
            counts += path_mask(t, leaf, pts)
        assert np.all(counts == 1)


def path_mask(t, leaf, pts):
    parent = {}
    for node in range(t.n_nodes):
        if not t.is_leaf(node):
            parent[t.left[node]] = (node, True)
            parent[t.right[node]] = (node, False)
    mask = np.ones(len(pts), dtype=bool)
    node = leaf
    while node in parent:
        p, is_left = parent[node]
        side = pts[:, t.feature[p]] < t.threshold[p]
        mask &= side if is_left else ~side
        node = p
    return mask


def test_unlimited_dt_fits_distinct_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(120, 4))
    y = rng.integers(0, 4, 120)
    t = sg.fit_tree(X, y, 4)
    assert np.all(t.predict_proba(X).argmax(axis=1) == y)


def test_forest_determinism_and_threads():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 5))
    y = rng.integers(0, 3, 100)
    for kind in ("RF", "ERT"):
        a = sg.fit_forest(X, y, 3, kind, n_trees=8, seed=4)
        b = sg.fit_forest(X, y, 3, kind, n_trees=8, seed=4, threads=3)
        assert a.predict_proba(X).tobytes() == b.predict_proba(X).tobytes()
        assert a.seeds == tuple(sg.tree_seed(4, t) for t in range(8))
        c = sg.fit_forest(X, y, 3, kind, n_trees=8, seed=5)
        assert c.predict_proba(X).tobytes() != a.predict_proba(X).tobytes()


def test_single_tree_rf_is_bootstrap_tree():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 4))
    y = rng.integers(0, 2, 40)
    m = sg.fit_forest(X, y, 2, "RF", n_trees=1, seed=7)
    s = m.seeds[0]
    rows = np.random.default_rng([s, 0]).integers(0, 40, size=40)
    t = sg.fit_tree(X[rows], y[rows], 2, m.params, s)
    np.testing.assert_array_equal(m.trees[0].threshold, t.threshold)
    assert m.trees[0].n_samples[0] == 40


def test_identical_trees_average_to_one_tree():
    X = np.random.default_rng(0).normal(size=(30, 2))
    y = (X[:, 0] > 0).astype(int)
    t = sg.fit_tree(X, y, 2)
    one = sg.SurrogateModel("DT", (t,), (0,), sg.TreeParams(), 1, 2)
    many = sg.SurrogateModel("RF", (t, t, t), (0, 0, 0), sg.TreeParams(), 3, 2)
    np.testing.assert_allclose(many.predict_proba(X), one.predict_proba(X), rtol=1e-15)


def test_predict_shape_and_ties():
    t = sg.fit_tree(np.zeros((4, 2)), np.array([0, 1, 0, 1]), 2)
    m = sg.SurrogateModel("DT", (t,), (0,), sg.TreeParams(), 1, 2)
    cls, dist = sg.predict(m, np.array([5.0, -1.0]))
    assert cls == 0 and dist.tolist() == [0.5, 0.5]
    with pytest.raises(ShapeMismatch):
        sg.predict(m, np.zeros(3))


def test_forest_not_worse_than_tree_on_separable_data():
    gaps = []
    for seed in range(3):
        d = synth_highdim(600, 8, 4, 3, noise_sigma=0.5, seed=seed, separation=2.0)
        tr, te = split(d, 0.25, seed)
        dt = sg.fit_dt(tr.features, tr.labels, 3, seed=seed)
        rf = sg.fit_forest(tr.features, tr.labels, 3, "RF", n_trees=30, seed=seed)
        ert = sg.fit_forest(tr.features, tr.labels, 3, "ERT", n_trees=30, seed=seed)
        acc = lambda m: np.mean(m.predict(te.features) == te.labels)
        gaps.append(min(acc(rf), acc(ert)) - acc(dt))
    assert np.median(gaps) >= -0.02


def test_mdi_examples():
    X = np.random.default_rng(0).normal(size=(20, 3))
    leaf = sg.fit_tree(X, np.zeros(20, dtype=int), 2)
    np.testing.assert_allclose(sg.mdi_importance(sg.SurrogateModel("DT", (leaf,), (0,), sg.TreeParams(), 1, 2)),
                               [1 / 3] * 3)
    y = (X[:, 2] > 0).astype(int)
    stump = sg.fit_tree(X, y, 2, sg.TreeParams(max_depth=1))
    assert sg.mdi_importance(sg.SurrogateModel("DT", (stump,), (0,), sg.TreeParams(), 1, 2)).tolist() == [0, 0, 1]


def test_mdi_hand_built_tree():
    # root splits f0 on 8 rows [4,4] -> left [4,1] (split on f1 into [4,0], [0,1]), right [0,3]
    doc = {"feature": 0, "threshold": 0.0, "n": 8, "impurity": 0.5,
           "left": {"feature": 1, "threshold": 0.0, "n": 5, "impurity": 0.32,
                    "left": {"leaf": {"dist": [1.0, 0.0], "n": 4}},
                    "right": {"leaf": {"dist": [0.0, 1.0], "n": 1}}},
           "right": {"leaf": {"dist": [0.0, 1.0], "n": 3}}}
    t = sg.Tree.from_json(doc, 2)
    root = 1.0 * (0.5 - (5 * 0.32 + 3 * 0.0) / 8)
    left = 5 / 8 * (0.32 - 0.0)
    raw = sg.tree_mdi(t)
    np.testing.assert_allclose(raw, [root, left], rtol=1e-12)
    m = sg.SurrogateModel("DT", (t,), (0,), sg.TreeParams(), 1, 2)
    np.testing.assert_allclose(sg.mdi_importance(m), [root / (root + left), left / (root + left)])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_mdi_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 4))
    m = sg.fit_forest(X, rng.integers(0, 3, 50), 3, "ERT", n_trees=4, seed=seed)
    assert abs(sg.mdi_importance(m).sum() - 1) <= 1e-9


def test_r_squared_examples():
    b = np.array([1.0, 2.0, 3.0, 4.0])
    assert sg.r_squared(b, b).r_squared == 1.0
    assert sg.r_squared(np.full(4, b.mean()), b).r_squared == 0.0
    s = sg.r_squared([1, 2, 3, 5], b)
    assert s.r_squared == pytest.approx(0.8, abs=1e-12) and s.verdict == "replace"
    assert sg.r_squared([4, 3, 2, 1], b).verdict == "reject"
    with pytest.raises(ZeroVariance):
        sg.r_squared([1, 2], [3, 3])
    with pytest.raises(ShapeMismatch):
        sg.r_squared([1], [1])


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=40))
def test_r_squared_matches_direct(pairs):
    s, b = map(list, zip(*pairs))
    if np.var(b) < 1e-6:
        return
    got = sg.r_squared(s, b)
    assert got.r_squared == pytest.approx(r_squared_direct(s, b), abs=1e-12)
    assert got.r_squared <= 1.0
    assert got.r_squared == pytest.approx(1 - got.sse_surrogate / got.sse_blackbox, abs=1e-15)


def test_fidelity_inputs_modes():
    X = np.random.default_rng(0).normal(size=(30, 2))
    m = sg.fit_dt(X, (X[:, 0] > 0).astype(int), 2)
    P = np.column_stack([X[:, 0] <= 0, X[:, 0] > 0]).astype(float) * 0.8 + 0.1
    s, b = sg.fidelity_inputs(m, X, P, "label")
    assert np.array_equal(s, b)
    s, b = sg.fidelity_inputs(m, X, P, "proba")
    np.testing.assert_allclose(b, 0.9)
    np.testing.assert_allclose(s, 1.0)
    with pytest.raises(InvalidConfig):
        sg.fidelity_inputs(m, X, P, "odds")


def test_json_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 3))
    m = sg.fit_forest(X, rng.integers(0, 3, 60), 3, "ERT", n_trees=4, seed=1, feature_indices=(4, 7, 9))
    back = sg.SurrogateModel.from_json(m.to_json())
    assert back.predict_proba(X).tobytes() == m.predict_proba(X).tobytes()
    assert back.feature_indices == (4, 7, 9) and back.kind == "ERT"


def test_invalid_forest_configs():
    X = np.zeros((4, 2))
    with pytest.raises(InvalidConfig):
        sg.fit_forest(X, [0, 1, 0, 1], 2, "GBM")
    with pytest.raises(InvalidConfig):
        sg.fit_forest(X, [0, 1, 0, 1], 2, "RF", n_trees=0)
