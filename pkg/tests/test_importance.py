"""Permutation-importance estimators: exact invariants, single-tree
reference computations, and the block identity."""

import numpy as np
import pytest

import sobolforest as sf
from sobolforest.importance import importance_report
from sobolforest.tree import predict_tree_rows


def _forest_with_constant_column(seed=0, n=60, m=10):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, 3))
    x[:, 1] = 4.0
    y = x[:, 0] + 0.5 * gen.normal(size=n)
    data = sf.Dataset(x, y)
    cfg = sf.ForestConfig(
        n_trees=m, subsample_size=40, max_leaves=8, min_node_size=1, mtry=3, seed=seed
    )
    return sf.fit_forest(data, cfg), data


class TestExactZeros:
    def test_constant_column_all_methods_zero(self):
        forest, data = _forest_with_constant_column()
        rng = sf.Rng(1)
        assert sf.bc_mda(forest, data, 1, rng.child(0)) == 0.0
        assert sf.ik_mda(forest, data, 1, rng.child(1)) == 0.0
        assert sf.sobol_mda(forest, data, 1) == 0.0
        assert sf.sobol_mda_lundberg(forest, data, 1) == 0.0
        gen = np.random.default_rng(5)
        x = gen.normal(size=(40, 3))
        x[:, 1] = 4.0
        test = sf.Dataset(x, x[:, 0])
        assert sf.tt_mda(forest, test, 1, rng.child(2)) == 0.0

    def test_identity_permutation_gives_zero(self):
        forest, data = _forest_with_constant_column(seed=3)
        gen = np.random.default_rng(7)
        test = sf.Dataset(gen.normal(size=(30, 3)), gen.normal(size=30))
        v = sf.tt_mda(forest, test, 0, sf.Rng(0), _permutation=np.arange(30))
        assert v == 0.0


class TestBcMda:
    def test_single_tree_matches_hand_loop(self):
        gen = np.random.default_rng(11)
        data = sf.Dataset(gen.normal(size=(50, 2)), gen.normal(size=50))
        cfg = sf.ForestConfig(
            n_trees=1, subsample_size=30, max_leaves=6, min_node_size=1, mtry=2,
            seed=11,
        )
        forest = sf.fit_forest(data, cfg)
        rng = sf.Rng(4)
        j = 0
        got = sf.bc_mda(forest, data, j, rng)
        # reference: same stream contract, explicit loop
        tree = forest.trees[0]
        rows = forest.oob_rows(0)
        perm = rng.child(0).generator().permutation(rows.size)
        xp = data.x[rows].copy()
        xp[:, j] = data.x[rows[perm], j]
        pred_p = predict_tree_rows(tree, xp)
        pred_0 = predict_tree_rows(tree, data.x[rows])
        y = data.y[rows]
        manual = float(np.mean((y - pred_p) ** 2 - (y - pred_0) ** 2))
        assert got == pytest.approx(manual, rel=1e-14)

    def test_normalized_guard_on_untouched_column(self):
        forest, data = _forest_with_constant_column(seed=13)
        with pytest.warns(RuntimeWarning, match="zero across-tree deviation"):
            v = sf.bc_mda(forest, data, 1, sf.Rng(0), normalized=True)
        assert v == 0.0

    def test_requires_two_oob_rows(self):
        gen = np.random.default_rng(17)
        data = sf.Dataset(gen.normal(size=(20, 2)), gen.normal(size=20))
        cfg = sf.ForestConfig(
            n_trees=2, subsample_size=19, max_leaves=4, min_node_size=1, mtry=1,
            seed=17,
        )
        forest = sf.fit_forest(data, cfg)
        with pytest.raises(sf.ConfigError, match="out-of-bag"):
            sf.bc_mda(forest, data, 0, sf.Rng(0))


class TestIkMda:
    @pytest.mark.parametrize("j", [0, 1, 2])
    def test_block_size_one_equals_bc_bit_exact(self, j):
        forest, data = _forest_with_constant_column(seed=19, m=14)
        rng = sf.Rng(23)
        assert sf.ik_mda(forest, data, j, rng, block_size=1) == sf.bc_mda(
            forest, data, j, rng
        )

    def test_full_block_matches_brute_force(self):
        forest, data = _forest_with_constant_column(seed=29, m=8)
        rng = sf.Rng(31)
        j = 0
        got = sf.ik_mda(forest, data, j, rng)
        # reference: rebuild permuted OOB forest estimates row by row
        n = data.n
        preds_p = {}
        preds_0 = {}
        for ell, tree in enumerate(forest.trees):
            rows = forest.oob_rows(ell)
            if np.any(tree.feature == j):
                perm = rng.child(ell).generator().permutation(rows.size)
                xp = data.x[rows].copy()
                xp[:, j] = data.x[rows[perm], j]
                pp = predict_tree_rows(tree, xp)
            else:
                pp = predict_tree_rows(tree, data.x[rows])
            p0 = predict_tree_rows(tree, data.x[rows])
            for k, i in enumerate(rows):
                preds_p.setdefault(i, []).append(pp[k])
                preds_0.setdefault(i, []).append(p0[k])
        diffs = []
        for i in range(n):
            if i not in preds_p:
                continue
            mp = np.mean(preds_p[i])
            m0 = np.mean(preds_0[i])
            diffs.append((data.y[i] - mp) ** 2 - (data.y[i] - m0) ** 2)
        manual = float(np.sum(diffs) / len(diffs))
        assert got == pytest.approx(manual, rel=1e-12)

    def test_block_of_all_in_bag_rejected(self):
        gen = np.random.default_rng(37)
        data = sf.Dataset(gen.normal(size=(20, 2)), gen.normal(size=20))
        cfg = sf.ForestConfig(
            n_trees=2, subsample_size=18, max_leaves=4, min_node_size=1, mtry=1,
            seed=37,
        )
        forest = sf.fit_forest(data, cfg)
        # hand the forest trees whose in-bag covers every row within a block
        import dataclasses

        t0 = dataclasses.replace(forest.trees[0], in_bag=np.arange(20))
        broken = sf.Forest(trees=[t0, forest.trees[1]], config=forest.config,
                           n_train=20)
        broken.config = dataclasses.replace(broken.config, subsample_size=18)
        with pytest.raises(sf.ConfigError, match="in-bag for the whole block"):
            sf.ik_mda(broken, data, 0, sf.Rng(0), block_size=1)


class TestSignFreedom:
    def test_noise_covariates_take_both_signs(self):
        gen = np.random.default_rng(41)
        x = gen.normal(size=(150, 4))
        y = x[:, 0] + 0.3 * gen.normal(size=150)
        data = sf.Dataset(x, y)
        cfg = sf.ForestConfig(
            n_trees=40, subsample_size=90, max_leaves=20, min_node_size=2, mtry=4,
            seed=41,
        )
        forest = sf.fit_forest(data, cfg)
        vals = []
        for rep in range(12):
            rng = sf.Rng(rep)
            vals.extend(sf.bc_mda(forest, data, j, rng.child(j)) for j in (1, 2, 3))
        vals = np.array(vals)
        assert (vals > 0).any() and (vals < 0).any()


class TestReportLayer:
    def test_report_shapes_and_std(self):
        forest, data = _forest_with_constant_column(seed=43)
        rep = importance_report(
            forest, data, "bc", sf.Rng(5), repetitions=4,
            feature_names=data.names(),
        )
        assert rep.values.shape == (3,)
        assert rep.per_rep_values.shape == (4, 3)
        assert rep.std().shape == (3,)
        assert rep.values[1] == 0.0
        assert rep.std()[1] == 0.0

    def test_unknown_method_rejected(self):
        forest, data = _forest_with_constant_column(seed=47)
        with pytest.raises(sf.ConfigError, match="unknown importance method"):
            importance_report(forest, data, "nope", sf.Rng(0))

    def test_csv_emission(self, tmp_path):
        forest, data = _forest_with_constant_column(seed=53)
        rep = importance_report(forest, data, "sobol", sf.Rng(0), repetitions=2)
        path = tmp_path / "imp.csv"
        rep.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "feature,value,std"
        assert len(lines) == 4


class TestIndependentCovariatesTarget:
    @pytest.mark.slow
    def test_test_sample_estimator_hits_doubled_sobol_scale(self):
        # independent covariates: the test-sample permutation estimator
        # targets 2 Var[Y] ST
        spec = sf.independent_linear_spec([2.0, 1.0], noise_ratio=0.1)
        dec = sf.analytic_linear([2.0, 1.0], np.eye(2), noise_ratio=0.1)
        data = sf.sample_gaussian(spec, 2000, sf.Rng(71))
        test = sf.sample_gaussian(spec, 2000, sf.Rng(72))
        forest = sf.fit_forest(data, sf.ForestConfig(n_trees=100, seed=71))
        rng = sf.Rng(73)
        got = np.array([
            np.mean([sf.tt_mda(forest, test, j, rng.child(5 * j + r)) for r in range(5)])
            for j in range(2)
        ])
        want = 2 * dec.var_y * dec.st
        assert np.all(np.abs(got - want) / want < 0.2)


class TestAdditiveCorrelatedAgreement:
    @pytest.mark.slow
    def test_tree_and_forest_level_estimates_converge_together(self):
        # additive model with correlated pair: both normalized estimators
        # approach the marginal total Sobol index, hence each other
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        spec = sf.GaussianSpec(
            cov=cov, kind="linear", params={"coefs": np.array([1.0, 1.0])},
            noise_ratio=0.1,
        )
        data = sf.sample_gaussian(spec, 3000, sf.Rng(61))
        cfg = sf.ForestConfig(n_trees=150, seed=61)
        forest = sf.fit_forest(data, cfg)
        vy = sf.sample_variance(data.y)
        rng = sf.Rng(62)
        for j in range(2):
            bc_n = sf.bc_mda(forest, data, j, rng.child(j)) / (2 * vy)
            ik_n = sf.ik_mda(forest, data, j, rng.child(10 + j)) / vy
            assert abs(bc_n - ik_n) < 0.05
