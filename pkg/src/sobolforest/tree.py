"""Randomized CART regression trees grown best-first on a subsample drawn
without replacement.

Split search is exhaustive over midpoint thresholds of the drawn candidate
covariates. Thresholds sit at the midpoint between consecutive sorted in-bag
values, so predictions do not depend on how ties in query points fall.
Tie-breaking is deterministic everywhere: equal-gain splits prefer the lowest
covariate index, then the lowest threshold, and the best-first queue prefers
the earliest-created node, so a (data, config, stream) triple always yields
the same tree.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, ForestConfig, Rng, seq_mean

# Relative slack on the admissibility test "variance reduction > 0"; guards
# against accepting splits whose gain is pure float rounding noise.
_GAIN_RTOL = 1e-12


@dataclass(frozen=True)
class Tree:
    """A fitted tree as parallel node arrays; node 0 is the root.

    feature[v] is -1 for leaves; left/right hold child ids; value[v] is the
    mean in-bag response in node v (the prediction, for leaves); count[v] the
    number of in-bag rows in v; depth[v] the root distance. in_bag is the
    sorted subsample index set.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    depth: np.ndarray
    in_bag: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaf_count(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def is_leaf(self, v: int) -> bool:
        return self.feature[v] < 0

    def used_features(self) -> np.ndarray:
        """Sorted distinct covariate indices appearing in splits."""
        f = self.feature[self.feature >= 0]
        return np.unique(f)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
            "depth": self.depth.tolist(),
            "in_bag": self.in_bag.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(
            feature=np.asarray(obj["feature"], dtype=np.int32),
            threshold=np.asarray(obj["threshold"], dtype=np.float64),
            left=np.asarray(obj["left"], dtype=np.int32),
            right=np.asarray(obj["right"], dtype=np.int32),
            value=np.asarray(obj["value"], dtype=np.float64),
            count=np.asarray(obj["count"], dtype=np.int64),
            depth=np.asarray(obj["depth"], dtype=np.int32),
            in_bag=np.asarray(obj["in_bag"], dtype=np.int64),
        )


def _best_split(x, y, rows, feats, min_child):
    """Best (gain, feature, threshold) on `rows` over candidate `feats`.

    Gain is the decrease in total within-node sum of squares. Returns None
    when no admissible split exists: every split must leave min_child rows on
    each side and reduce the sum of squares by a genuinely positive amount.
    `feats` must be sorted ascending so that argmax tie-breaking lands on the
    lowest covariate index.
    """
    m = rows.size
    if m < 2 * min_child:
        return None
    yv = y[rows]
    yc = yv - yv.mean()
    sse = float(yc @ yc)
    if sse <= 0.0:
        return None
    xv = x[np.ix_(rows, feats)]
    order = np.argsort(xv, axis=0, kind="stable")
    xs = np.take_along_axis(xv, order, axis=0)
    ys = yc[order]
    csum = np.cumsum(ys, axis=0)
    k = np.arange(1, m)
    left_sum = csum[:-1]
    total = csum[-1]
    gain = (
        left_sum**2 / k[:, None]
        + (total[None, :] - left_sum) ** 2 / (m - k)[:, None]
        - (total**2 / m)[None, :]
    )
    valid = (
        (xs[1:] > xs[:-1])
        & (k[:, None] >= min_child)
        & ((m - k)[:, None] >= min_child)
    )
    gain = np.where(valid, gain, -np.inf)
    best_per_feat = gain.max(axis=0)
    fi = int(np.argmax(best_per_feat))
    best = float(best_per_feat[fi])
    if not best > _GAIN_RTOL * sse:
        return None
    ki = int(np.argmax(gain[:, fi]))
    threshold = 0.5 * (xs[ki, fi] + xs[ki + 1, fi])
    return best, int(feats[fi]), float(threshold)


class _GrowingNode:
    __slots__ = ("rows", "depth", "split")

    def __init__(self, rows, depth):
        self.rows = rows
        self.depth = depth
        self.split = None


def fit_tree(data: Dataset, config: ForestConfig, rng: Rng) -> Tree:
    """Grow one randomized CART on a without-replacement subsample.

    Best-first expansion: the leaf whose best split removes the most total
    sum of squares is split first, until the leaf budget is exhausted or no
    leaf admits a split. At each node, with probability delta a single
    candidate covariate is drawn, otherwise mtry distinct candidates.
    A root-only tree is a valid outcome.
    """
    cfg = config.resolved(data.n, data.p)
    x, y, p = data.x, data.y, data.p
    gen = rng.generator()
    in_bag = np.sort(gen.choice(data.n, size=cfg.subsample_size, replace=False))

    nodes: list[_GrowingNode] = []
    heap: list[tuple[float, int]] = []

    def evaluate(rows, depth) -> int:
        node = _GrowingNode(rows, depth)
        nid = len(nodes)
        nodes.append(node)
        min_child = max(
            cfg.min_node_size, int(np.ceil(cfg.gamma * rows.size)), 1
        )
        if rows.size < 2 * min_child:
            return nid
        n_cand = cfg.mtry
        if cfg.delta > 0.0 and gen.random() < cfg.delta:
            n_cand = 1
        feats = np.sort(gen.choice(p, size=n_cand, replace=False))
        found = _best_split(x, y, rows, feats, min_child)
        if found is not None:
            node.split = found
            heapq.heappush(heap, (-found[0], nid))
        return nid

    children: dict[int, tuple[int, int]] = {}
    evaluate(in_bag, 0)
    leaf_count = 1
    while heap and leaf_count < cfg.max_leaves:
        _, nid = heapq.heappop(heap)
        node = nodes[nid]
        _, feat, thr = node.split
        go_left = x[node.rows, feat] <= thr
        left_id = evaluate(node.rows[go_left], node.depth + 1)
        right_id = evaluate(node.rows[~go_left], node.depth + 1)
        children[nid] = (left_id, right_id)
        leaf_count += 1

    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int32)
    threshold = np.full(n, np.nan, dtype=np.float64)
    left = np.full(n, -1, dtype=np.int32)
    right = np.full(n, -1, dtype=np.int32)
    value = np.empty(n, dtype=np.float64)
    count = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int32)
    for nid, node in enumerate(nodes):
        value[nid] = seq_mean(y[node.rows])
        count[nid] = node.rows.size
        depth[nid] = node.depth
        if nid in children:
            feature[nid] = node.split[1]
            threshold[nid] = node.split[2]
            left[nid], right[nid] = children[nid]
    return Tree(feature, threshold, left, right, value, count, depth, in_bag)


def route(tree: Tree, x_rows: np.ndarray) -> np.ndarray:
    """Leaf node id for each row of `x_rows`; x <= threshold routes left."""
    X = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(tree.feature[node] >= 0)
    while active.size:
        nd = node[active]
        f = tree.feature[nd]
        go_left = X[active, f] <= tree.threshold[nd]
        node[active] = np.where(go_left, tree.left[nd], tree.right[nd])
        active = active[tree.feature[node[active]] >= 0]
    return node


def predict_tree(tree: Tree, x: np.ndarray) -> float:
    """Prediction of the unique leaf whose cell contains x."""
    return float(tree.value[route(tree, np.asarray(x, dtype=np.float64)[None, :])[0]])


def predict_tree_rows(tree: Tree, x_rows: np.ndarray) -> np.ndarray:
    return tree.value[route(tree, x_rows)]


def leaf_boxes(tree: Tree, p: int, lo: float = -np.inf, hi: float = np.inf):
    """Axis-aligned (lower, upper) bounds of every leaf cell.

    Cells are half-open on the left: a leaf contains x iff
    lower < x[f] <= upper coordinate-wise (with infinite outer bounds).
    """
    lows = {0: np.full(p, lo)}
    highs = {0: np.full(p, hi)}
    out = {}
    stack = [0]
    while stack:
        v = stack.pop()
        if tree.is_leaf(v):
            out[v] = (lows[v], highs[v])
            continue
        f, t = int(tree.feature[v]), float(tree.threshold[v])
        l, r = int(tree.left[v]), int(tree.right[v])
        lows[l], highs[l] = lows[v].copy(), highs[v].copy()
        lows[r], highs[r] = lows[v].copy(), highs[v].copy()
        highs[l][f] = min(highs[l][f], t)
        lows[r][f] = max(lows[r][f], t)
        stack.extend((l, r))
    return out


def tree_to_json(tree: Tree) -> str:
    return json.dumps(tree.to_json())


def tree_from_json(text: str) -> Tree:
    return Tree.from_json(json.loads(text))
