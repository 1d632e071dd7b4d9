"""Shared test helpers.

`oracle_projected` is an independent reference for projection with one
covariate ignored: it enumerates per-level node memberships geometrically
(path constraints on the remaining covariates) and applies the same
deepest-all-terminal / fall-back-while-empty rule, with cell means
accumulated sequentially in ascending row order. It never touches the
level-synchronous machinery under test.
"""

from __future__ import annotations

import numpy as np
import pytest

import sobolforest as sf

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)


def oracle_projected(tree, data, j, queries):
    """Brute-force projected predictions: (values, level_used)."""
    x, y = data.x, data.y
    cons = {0: []}
    stack = [0]
    while stack:
        v = stack.pop()
        if tree.is_leaf(v):
            continue
        f, t = int(tree.feature[v]), float(tree.threshold[v])
        l, r = int(tree.left[v]), int(tree.right[v])
        skip = f == j
        cons[l] = cons[v] + ([] if skip else [(f, t, "L")])
        cons[r] = cons[v] + ([] if skip else [(f, t, "R")])
        stack.extend((l, r))

    def qualifies(v, row):
        for f, t, side in cons[v]:
            if side == "L" and not (x[row, f] <= t):
                return False
            if side == "R" and not (x[row, f] > t):
                return False
        return True

    maxd = int(tree.depth.max())

    def membership(row, k):
        out = []
        for v in range(tree.n_nodes):
            d = int(tree.depth[v])
            if tree.is_leaf(v):
                if d <= k and qualifies(v, row):
                    out.append(v)
            elif d == k and qualifies(v, row):
                out.append(v)
        return tuple(sorted(out))

    vals, levels = [], []
    for q in queries:
        kstar = next(
            k
            for k in range(maxd + 1)
            if all(tree.is_leaf(v) for v in membership(q, k))
        )
        k = kstar
        while True:
            mem = membership(q, k)
            cell = [i for i in tree.in_bag if membership(i, k) == mem]
            if cell:
                s = 0.0
                for i in cell:
                    s += float(y[i])
                vals.append(s / len(cell))
                levels.append(k)
                break
            k -= 1
    return np.array(vals), np.array(levels, dtype=np.int64)


def random_small_instance(seed, n_lo=8, n_hi=50, p_hi=3, max_leaves_hi=8,
                          sparse_bag=False):
    """A fitted single tree plus data and its out-of-bag query rows."""
    gen = np.random.default_rng(seed)
    n = int(gen.integers(n_lo, n_hi + 1))
    p = int(gen.integers(1, p_hi + 1))
    x = gen.normal(size=(n, p))
    y = gen.normal(size=n) + x @ gen.normal(size=p) + 2 * np.sin(3 * x[:, 0])
    data = sf.Dataset(x, y)
    if sparse_bag:
        a = int(gen.integers(6, max(7, n // 3)))
    else:
        a = max(2, int(0.7 * n))
    cfg = sf.ForestConfig(
        n_trees=1,
        subsample_size=a,
        max_leaves=int(gen.integers(2, max_leaves_hi + 1)),
        min_node_size=1,
        mtry=p,
        seed=int(gen.integers(2**31)),
    )
    tree = sf.fit_tree(data, cfg, sf.Rng(cfg.seed))
    mask = np.ones(n, dtype=bool)
    mask[tree.in_bag] = False
    queries = np.flatnonzero(mask)
    return tree, data, queries


def build_tree(feature, threshold, left, right, value, count, depth, in_bag):
    """Hand-built tree from plain lists."""
    return sf.Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        count=np.asarray(count, dtype=np.int64),
        depth=np.asarray(depth, dtype=np.int32),
        in_bag=np.asarray(in_bag, dtype=np.int64),
    )


@pytest.fixture
def tiny_data():
    gen = np.random.default_rng(0)
    x = gen.normal(size=(40, 3))
    y = x[:, 0] + 0.2 * gen.normal(size=40)
    return sf.Dataset(x, y)
