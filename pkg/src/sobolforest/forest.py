"""Ensembles of randomized CART trees with out-of-bag machinery.

Each tree trains on an independent without-replacement subsample, so every
tree leaves out exactly n - subsample_size observations. For observation i the
set of trees whose subsample misses i plays the role of a forest trained
without i; the out-of-bag estimate averages exactly those trees.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigError, Dataset, ForestConfig, Rng
from .tree import Tree, fit_tree, predict_tree_rows


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    n_train: int
    # lazily built caches; keyed per tree index
    _oob_rows: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def oob_rows(self, ell: int) -> np.ndarray:
        """Sorted training rows left out of tree ell's subsample."""
        if self._oob_rows is None:
            self._oob_rows = []
            full = np.arange(self.n_train)
            for t in self.trees:
                mask = np.ones(self.n_train, dtype=bool)
                mask[t.in_bag] = False
                self._oob_rows.append(full[mask])
        return self._oob_rows[ell]

    def oob_tree_set(self, i: int) -> np.ndarray:
        """Indices of trees for which observation i is out of bag."""
        return np.array(
            [ell for ell, t in enumerate(self.trees) if not _in_sorted(t.in_bag, i)],
            dtype=np.int64,
        )

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "n_train": self.n_train,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Forest":
        return cls(
            trees=[Tree.from_json(t) for t in obj["trees"]],
            config=ForestConfig.from_json(obj["config"]),
            n_train=int(obj["n_train"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Forest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _in_sorted(sorted_arr: np.ndarray, v: int) -> bool:
    k = np.searchsorted(sorted_arr, v)
    return k < sorted_arr.size and sorted_arr[k] == v


def fit_forest(
    data: Dataset,
    config: ForestConfig,
    rng: Rng | None = None,
    threads: int | None = None,
) -> Forest:
    """Train n_trees trees on independent subsamples via index-addressed
    streams; results do not depend on `threads`."""
    cfg = config.resolved(data.n, data.p)
    base = rng if rng is not None else Rng(cfg.seed)
    streams = base.split(cfg.n_trees)
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(
                pool.map(lambda s: fit_tree(data, cfg, s), streams)
            )
    else:
        trees = [fit_tree(data, cfg, s) for s in streams]
    return Forest(trees=trees, config=cfg, n_train=data.n)


def predict_forest(forest: Forest, x: np.ndarray) -> float:
    """Arithmetic mean of the tree predictions at a single point x."""
    return float(predict_forest_rows(forest, np.asarray(x, dtype=np.float64)[None, :])[0])


def predict_forest_rows(forest: Forest, x_rows: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for t in forest.trees:
        acc += predict_tree_rows(t, X)
    return acc / forest.n_trees


def oob_predictions(forest: Forest, data: Dataset):
    """Per-observation out-of-bag forest estimate.

    Returns (values, defined): values[i] averages the predictions at X_i of
    exactly the trees whose subsample misses i; defined[i] is False when no
    such tree exists (values[i] is then 0 and must not be used).
    """
    n = data.n
    sums = np.zeros(n, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for ell, t in enumerate(forest.trees):
        rows = forest.oob_rows(ell)
        sums[rows] += predict_tree_rows(t, data.x[rows])
        counts[rows] += 1
    defined = counts > 0
    values = np.zeros(n, dtype=np.float64)
    values[defined] = sums[defined] / counts[defined]
    return values, defined


def oob_predict(forest: Forest, data: Dataset, i: int):
    """(value, defined) out-of-bag estimate for a single observation."""
    trees = forest.oob_tree_set(i)
    if trees.size == 0:
        return 0.0, False
    xi = data.x[i][None, :]
    preds = [float(predict_tree_rows(forest.trees[ell], xi)[0]) for ell in trees]
    return float(np.sum(preds) / len(preds)), True


def oob_error(forest: Forest, data: Dataset):
    """Mean squared out-of-bag error and the count of defined points."""
    values, defined = oob_predictions(forest, data)
    n_def = int(defined.sum())
    if n_def == 0:
        raise ConfigError("no observation is out of bag for any tree")
    err = float(np.sum((data.y[defined] - values[defined]) ** 2) / n_def)
    return err, n_def


def holdout_error(forest: Forest, test: Dataset) -> float:
    """Mean squared error of the forest on an independent sample."""
    pred = predict_forest_rows(forest, test.x)
    return float(np.mean((test.y - pred) ** 2))
