"""Permutation importance: the three classical mean-decrease-accuracy
estimators.

tt_mda permutes a covariate in an independent test sample and measures the
forest-level error increase. bc_mda permutes each tree's out-of-bag rows
(independently per tree) and averages the per-tree error increases. ik_mda
aggregates the per-tree permuted predictions into an out-of-bag forest
estimate before computing the error increase; with one tree per block it
collapses to bc_mda exactly.

Permutation streams are index-addressed per (covariate, tree), so bc_mda and
ik_mda given the same stream see identical permutations, and parallel
evaluation over covariates cannot change results.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import ConfigError, Dataset, Rng, sample_variance
from .forest import Forest, predict_forest_rows
from .tree import predict_tree_rows


@dataclass
class ImportanceReport:
    """Per-covariate importance values for one method.

    `values` are means across `repetitions` runs of the permutation layer
    (fresh streams each run); `per_rep_values` is the repetitions x p matrix
    behind them. `normalizer` records the variance divisor applied to the
    emitted values (1.0 when raw).
    """

    method: str
    values: np.ndarray
    normalizer: float = 1.0
    repetitions: int = 1
    per_rep_values: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.isfinite(self.values).all():
            raise ValueError("importance values must be finite")

    def std(self) -> np.ndarray:
        if self.per_rep_values is None or self.per_rep_values.shape[0] < 2:
            return np.zeros_like(self.values)
        return np.std(self.per_rep_values, axis=0, ddof=1)

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{k + 1}" for k in range(self.values.size))

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "normalizer": self.normalizer,
            "repetitions": self.repetitions,
            "features": list(self.names()),
            "values": self.values.tolist(),
            "std": self.std().tolist(),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "value", "std"])
            for name, v, s in zip(self.names(), self.values, self.std()):
                w.writerow([name, repr(float(v)), repr(float(s))])


# ---------------------------------------------------------------------------
# shared per-tree machinery


def _tree_oob_pred(forest: Forest, data: Dataset):
    """Cached original out-of-bag predictions, one array per tree."""
    cache = getattr(forest, "_oob_pred_cache", None)
    if cache is None or cache[0] is not data:
        preds = [
            predict_tree_rows(t, data.x[forest.oob_rows(ell)])
            for ell, t in enumerate(forest.trees)
        ]
        cache = (data, preds)
        forest._oob_pred_cache = cache
    return cache[1]


def _permuted_tree_pred(tree, x, rows, j, gen):
    """Tree predictions on `rows` after permuting column j among them."""
    perm = gen.permutation(rows.size)
    xp = x[rows].copy()
    xp[:, j] = x[rows[perm], j]
    return predict_tree_rows(tree, xp)


def _uses(tree, j) -> bool:
    return bool(np.any(tree.feature == j))


def _check_oob_size(forest: Forest):
    n_oob = forest.n_train - forest.config.subsample_size
    if n_oob < 2:
        raise ConfigError(
            "permutation importance needs at least 2 out-of-bag rows per tree "
            f"(subsample_size <= n - 2); got {n_oob}"
        )


# ---------------------------------------------------------------------------
# estimators


def tt_mda(
    forest: Forest,
    test: Dataset,
    j: int,
    rng: Rng,
    _permutation: np.ndarray | None = None,
) -> float:
    """Forest-level error increase on an independent test sample when column
    j is permuted across test rows (one uniform permutation).

    `_permutation` overrides the drawn permutation; it exists for tests.
    """
    if test.n < 2:
        raise ConfigError("test sample needs at least 2 rows")
    perm = _permutation
    if perm is None:
        perm = rng.generator().permutation(test.n)
    xp = test.x.copy()
    xp[:, j] = test.x[perm, j]
    base = predict_forest_rows(forest, test.x)
    permuted = predict_forest_rows(forest, xp)
    err_perm = (test.y - permuted) ** 2
    err_base = (test.y - base) ** 2
    return float(np.sum(err_perm - err_base) / test.n)


def _per_tree_diffs(forest: Forest, data: Dataset, j: int, rng: Rng):
    """Per-tree arrays of (permuted error - original error) over OOB rows.

    Trees that never split on j keep predictions unchanged under the
    permutation, so their rows contribute exactly 0 and the permutation draw
    is skipped.
    """
    base_preds = _tree_oob_pred(forest, data)
    out = []
    for ell, tree in enumerate(forest.trees):
        rows = forest.oob_rows(ell)
        if not _uses(tree, j):
            out.append(np.zeros(rows.size, dtype=np.float64))
            continue
        gen = rng.child(ell).generator()
        pred_perm = _permuted_tree_pred(tree, data.x, rows, j, gen)
        y = data.y[rows]
        out.append((y - pred_perm) ** 2 - (y - base_preds[ell]) ** 2)
    return out


def bc_mda(
    forest: Forest, data: Dataset, j: int, rng: Rng, normalized: bool = False
) -> float:
    """Tree-level out-of-bag permutation importance.

    With `normalized`, the mean of per-tree error differences is divided by
    their across-tree standard deviation. A zero standard deviation (e.g. a
    covariate no tree touches) would blow up, so the raw value is returned
    with a warning in that case.
    """
    _check_oob_size(forest)
    diffs = _per_tree_diffs(forest, data, j, rng)
    tree_means = np.array([np.sum(d) / d.size for d in diffs])
    value = float(np.sum(tree_means) / tree_means.size)
    if normalized:
        sd = float(np.std(tree_means, ddof=1)) if tree_means.size > 1 else 0.0
        if sd == 0.0:
            warnings.warn(
                f"covariate {j}: zero across-tree deviation, "
                "returning unnormalized importance",
                RuntimeWarning,
                stacklevel=2,
            )
            return value
        return value / sd
    return value


def ik_mda(
    forest: Forest,
    data: Dataset,
    j: int,
    rng: Rng,
    block_size: int | None = None,
) -> float:
    """Forest-level out-of-bag permutation importance, by blocks of trees.

    Trees are cut into consecutive blocks of `block_size` (default: all trees
    in one block). Within a block the permuted per-tree predictions are
    averaged into an out-of-bag forest estimate before errors are taken;
    block results are averaged. block_size=1 reproduces bc_mda bit for bit
    under the same stream.
    """
    _check_oob_size(forest)
    M = forest.n_trees
    b = M if block_size is None else int(block_size)
    if b < 1:
        raise ConfigError("block_size must be >= 1")
    base_preds = _tree_oob_pred(forest, data)
    n = data.n
    block_values = []
    for start in range(0, M, b):
        trees = range(start, min(start + b, M))
        sum_perm = np.zeros(n, dtype=np.float64)
        sum_base = np.zeros(n, dtype=np.float64)
        counts = np.zeros(n, dtype=np.int64)
        for ell in trees:
            tree = forest.trees[ell]
            rows = forest.oob_rows(ell)
            if _uses(tree, j):
                gen = rng.child(ell).generator()
                pred_perm = _permuted_tree_pred(tree, data.x, rows, j, gen)
            else:
                pred_perm = base_preds[ell]
            sum_perm[rows] += pred_perm
            sum_base[rows] += base_preds[ell]
            counts[rows] += 1
        defined = counts > 0
        n_def = int(defined.sum())
        if n_def == 0:
            raise ConfigError(
                f"block starting at tree {start}: every observation is "
                "in-bag for the whole block"
            )
        m_perm = sum_perm[defined] / counts[defined]
        m_base = sum_base[defined] / counts[defined]
        y = data.y[defined]
        d = (y - m_perm) ** 2 - (y - m_base) ** 2
        block_values.append(np.sum(d) / n_def)
    block_values = np.array(block_values)
    return float(np.sum(block_values) / block_values.size)


# ---------------------------------------------------------------------------
# report layer


def importance_report(
    forest: Forest,
    data: Dataset,
    method: str,
    rng: Rng,
    repetitions: int = 1,
    test: Dataset | None = None,
    block_size: int | None = None,
    normalizer: float = 1.0,
    feature_names: tuple[str, ...] | None = None,
) -> ImportanceReport:
    """Run one estimator for every covariate across repetitions of the
    permutation layer (fresh streams per repetition) and emit the report.

    Methods without internal randomness (sobol, lundberg, retrain) are
    evaluated once and replicated.
    """
    from . import analytic, projected  # local import to avoid cycles

    p = data.p
    rows = []
    if method in ("sobol", "lundberg"):
        fn = projected.sobol_mda_all if method == "sobol" else projected.sobol_mda_lundberg_all
        vals = fn(forest, data)
        rows = [vals] * repetitions
    elif method == "retrain":
        vals = analytic.retrain_sobol_all(data, forest.config, rng=rng.child(0))
        rows = [vals] * repetitions
    else:
        for r in range(repetitions):
            rep_rng = rng.child(r)
            vals = np.empty(p, dtype=np.float64)
            for j in range(p):
                jr = rep_rng.child(j)
                if method == "bc":
                    vals[j] = bc_mda(forest, data, j, jr)
                elif method == "bc_normalized":
                    vals[j] = bc_mda(forest, data, j, jr, normalized=True)
                elif method == "ik":
                    vals[j] = ik_mda(forest, data, j, jr, block_size=block_size)
                elif method == "tt":
                    if test is None:
                        raise ConfigError("tt importance needs a test dataset")
                    vals[j] = tt_mda(forest, test, j, jr)
                else:
                    raise ConfigError(f"unknown importance method: {method!r}")
            rows.append(vals)
    mat = np.vstack(rows) / normalizer
    return ImportanceReport(
        method=method,
        values=mat.mean(axis=0),
        normalizer=normalizer,
        repetitions=repetitions,
        per_rep_values=mat,
        feature_names=feature_names,
    )


def comparison_normalizer(method: str, data: Dataset) -> float:
    """Divisor putting an estimator on the total-Sobol-index scale:
    2 * Var[Y] for the tree-level and test-sample estimators, Var[Y] for the
    forest-level one, nothing for the already-normalized projection methods.
    """
    vy = sample_variance(data.y)
    if method in ("bc", "tt"):
        return 2.0 * vy
    if method == "ik":
        return vy
    return 1.0


def reports_to_json(reports: list[ImportanceReport]) -> str:
    return json.dumps({"methods": [r.to_json() for r in reports]}, indent=2)


def reports_to_csv(reports: list[ImportanceReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "feature", "value", "std"])
        for r in reports:
            for name, v, s in zip(r.names(), r.values, r.std()):
                w.writerow([r.method, name, repr(float(v)), repr(float(s))])
