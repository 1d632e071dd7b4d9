"""Single-tree growth, prediction, and structural invariants."""

import numpy as np
import pytest

import sobolforest as sf
from sobolforest.tree import leaf_boxes, predict_tree_rows, tree_from_json, tree_to_json


def _exhaustive_best_split(x, y):
    """Reference search: every midpoint of consecutive sorted values."""
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    total = ys.sum()
    m = x.size
    best = (-np.inf, None)
    for k in range(1, m):
        if xs[k - 1] == xs[k]:
            continue
        thr = (xs[k - 1] + xs[k]) / 2
        sl = ys[:k].sum()
        gain = sl**2 / k + (total - sl) ** 2 / (m - k) - total**2 / m
        if gain > best[0]:
            best = (gain, thr)
    return best


class TestFitTree:
    def test_four_point_split_matches_exhaustive_search(self):
        # reference search over the 3 midpoints picks 0.5
        x = np.array([0.1, 0.2, 0.8, 0.9])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        gain, thr = _exhaustive_best_split(x, y)
        assert thr == 0.5 and gain > 0
        data = sf.Dataset(x[:, None], y)
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=4, max_leaves=2, min_node_size=1, mtry=1, seed=1
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(1))
        assert tree.leaf_count == 2
        assert float(tree.threshold[0]) == thr
        left, right = int(tree.left[0]), int(tree.right[0])
        assert float(tree.value[left]) == 0.0
        assert float(tree.value[right]) == 1.0
        assert sf.predict_tree(tree, np.array([0.3])) == 0.0
        # a query exactly at the threshold routes left
        assert sf.predict_tree(tree, np.array([0.5])) == 0.0

    def test_single_row_subsample_gives_root_only_tree(self):
        data = sf.Dataset(np.arange(10, dtype=float)[:, None], np.arange(10, dtype=float))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=1, max_leaves=8, min_node_size=1, mtry=1, seed=3
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(3))
        assert tree.leaf_count == 1
        i = int(tree.in_bag[0])
        assert sf.predict_tree(tree, np.array([123.0])) == data.y[i]

    def test_constant_response_gives_root_only_tree(self):
        gen = np.random.default_rng(5)
        data = sf.Dataset(gen.normal(size=(30, 2)), np.full(30, 3.7))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=20, max_leaves=16, min_node_size=1, mtry=2, seed=5
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(5))
        assert tree.leaf_count == 1

    def test_constant_column_never_split(self):
        gen = np.random.default_rng(6)
        x = gen.normal(size=(60, 3))
        x[:, 1] = 2.5
        data = sf.Dataset(x, x[:, 0] + gen.normal(size=60))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=40, max_leaves=16, min_node_size=2, mtry=3, seed=6
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(6))
        assert 1 not in tree.used_features()

    def test_leaf_budget_respected(self):
        gen = np.random.default_rng(7)
        data = sf.Dataset(gen.normal(size=(200, 4)), gen.normal(size=200))
        for leaves in (1, 2, 5, 9):
            cfg = sf.ForestConfig(
                n_trees=1, subsample_size=150, max_leaves=leaves,
                min_node_size=1, mtry=2, seed=7,
            )
            tree = sf.fit_tree(data, cfg, sf.Rng(7))
            assert tree.leaf_count <= leaves


class TestTreeInvariants:
    @pytest.mark.parametrize("seed", range(6))
    def test_partition_tiles_space(self, seed):
        gen = np.random.default_rng(seed)
        data = sf.Dataset(gen.normal(size=(80, 3)), gen.normal(size=80))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=60, max_leaves=12, min_node_size=1, mtry=2,
            seed=seed,
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(seed))
        boxes = leaf_boxes(tree, p=3)
        probes = gen.normal(size=(1000, 3))
        for q in probes:
            hits = [
                v
                for v, (lo, hi) in boxes.items()
                if np.all(q > lo) and np.all(q <= hi)
            ]
            assert len(hits) == 1

    @pytest.mark.parametrize("seed", range(4))
    def test_leaf_prediction_is_exact_in_bag_mean(self, seed):
        gen = np.random.default_rng(100 + seed)
        data = sf.Dataset(gen.normal(size=(70, 2)), gen.normal(size=70))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=50, max_leaves=10, min_node_size=1, mtry=2,
            seed=seed,
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(seed))
        leaves = predict_tree_rows(tree, data.x[tree.in_bag])
        from sobolforest.tree import route

        nodes = route(tree, data.x[tree.in_bag])
        for v in np.unique(nodes):
            members = tree.in_bag[nodes == v]
            expected = sf.data.seq_mean(data.y[members])
            assert float(tree.value[v]) == expected
            assert members.size == tree.count[v]

    def test_refinement_is_monotone_in_leaf_budget(self):
        # deeper budgets only shrink the in-bag residual sum of squares
        gen = np.random.default_rng(11)
        data = sf.Dataset(gen.normal(size=(120, 3)), gen.normal(size=120))
        sses = []
        for leaves in range(1, 14):
            cfg = sf.ForestConfig(
                n_trees=1, subsample_size=90, max_leaves=leaves,
                min_node_size=1, mtry=3, seed=11,
            )
            tree = sf.fit_tree(data, cfg, sf.Rng(11))
            resid = data.y[tree.in_bag] - predict_tree_rows(tree, data.x[tree.in_bag])
            sses.append(float(resid @ resid))
        assert all(a >= b - 1e-9 for a, b in zip(sses, sses[1:]))

    @pytest.mark.parametrize("gamma", [0.0, 0.2, 0.4])
    def test_gamma_and_min_node_constraints_hold(self, gamma):
        gen = np.random.default_rng(13)
        data = sf.Dataset(gen.normal(size=(150, 3)), gen.normal(size=150))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=120, max_leaves=30, min_node_size=4,
            mtry=2, gamma=gamma, seed=13,
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(13))
        for v in range(tree.n_nodes):
            if tree.is_leaf(v):
                assert tree.count[v] >= 1
                continue
            l, r = int(tree.left[v]), int(tree.right[v])
            need = max(4, int(np.ceil(gamma * tree.count[v])))
            assert tree.count[l] >= need
            assert tree.count[r] >= need
            assert tree.count[v] == tree.count[l] + tree.count[r]

    def test_delta_one_forces_single_candidate(self):
        # with delta=1 and a dominant covariate available, trees still only
        # see one candidate per node, so other covariates get split on often
        gen = np.random.default_rng(17)
        x = gen.normal(size=(300, 4))
        y = 10.0 * x[:, 0]
        data = sf.Dataset(x, y)
        cfg = sf.ForestConfig(
            n_trees=20, subsample_size=200, max_leaves=8, min_node_size=5,
            mtry=4, delta=1.0, seed=17,
        )
        forest = sf.fit_forest(data, cfg)
        used = np.concatenate([t.feature[t.feature >= 0] for t in forest.trees])
        # mtry=4 with delta=0 would pick covariate 0 almost always
        assert np.mean(used != 0) > 0.4

    def test_in_bag_sorted_without_duplicates(self):
        gen = np.random.default_rng(19)
        data = sf.Dataset(gen.normal(size=(50, 2)), gen.normal(size=50))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=30, max_leaves=4, min_node_size=1, mtry=1,
            seed=19,
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(19))
        assert tree.in_bag.size == 30
        assert np.all(np.diff(tree.in_bag) > 0)


class TestTreeSerialization:
    def test_json_roundtrip_preserves_predictions(self):
        gen = np.random.default_rng(23)
        data = sf.Dataset(gen.normal(size=(60, 3)), gen.normal(size=60))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=45, max_leaves=9, min_node_size=1, mtry=2,
            seed=23,
        )
        tree = sf.fit_tree(data, cfg, sf.Rng(23))
        clone = tree_from_json(tree_to_json(tree))
        probes = gen.normal(size=(100, 3))
        np.testing.assert_array_equal(
            predict_tree_rows(tree, probes), predict_tree_rows(clone, probes)
        )
