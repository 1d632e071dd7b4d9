"""Recursive feature elimination with repeated k-fold cross-validated error
tracking.

Each step runs the full CV loop: per (repeat, fold), a forest is fit on the
training folds, its error measured on the held fold, and the chosen
importance computed on that same training-fold forest. Held-fold rows never
touch training or importance inside their unit. Importances are averaged over
all units and the argmin covariate is dropped (ties to the lowest original
index). Out-of-bag error is deliberately not used for the error curve: inside
this loop it is optimistically biased, so the curve comes from the held
folds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigError, Dataset, ForestConfig, Rng, sample_variance
from .forest import fit_forest, predict_forest_rows

_VALID_METHODS = ("bc", "ik", "sobol", "retrain")


@dataclass
class RfeTrace:
    """Elimination order (first-removed first, original covariate indices)
    and the per-step CV error curve, one entry per model size p, p-1, ..."""

    elimination_order: list[int]
    n_features: list[int]
    cv_mse_mean: list[float]
    cv_mse_std: list[float]
    cv_ev_mean: list[float]
    cv_ev_std: list[float]
    importance_method: str
    folds: int
    repeats: int
    feature_names: tuple[str, ...] = ()
    removed_per_step: list[list[int]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "step",
                    "removed_feature",
                    "n_features",
                    "cv_mse_mean",
                    "cv_mse_std",
                    "cv_ev_mean",
                    "cv_ev_std",
                ]
            )
            k = 0
            for step, removed in enumerate(self.removed_per_step):
                for r in removed:
                    name = (
                        self.feature_names[r] if self.feature_names else str(r)
                    )
                    w.writerow(
                        [
                            step,
                            name,
                            self.n_features[step],
                            repr(self.cv_mse_mean[step]),
                            repr(self.cv_mse_std[step]),
                            repr(self.cv_ev_mean[step]),
                            repr(self.cv_ev_std[step]),
                        ]
                    )
                    k += 1

    def to_json(self) -> dict:
        return {
            "importance_method": self.importance_method,
            "folds": self.folds,
            "repeats": self.repeats,
            "elimination_order": self.elimination_order,
            "n_features": self.n_features,
            "cv_mse_mean": self.cv_mse_mean,
            "cv_mse_std": self.cv_mse_std,
            "cv_ev_mean": self.cv_ev_mean,
            "cv_ev_std": self.cv_ev_std,
        }


def _fold_bounds(n: int, k: int):
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    ends = np.cumsum(sizes)
    starts = ends - sizes
    return starts, ends


def _unit_importance(method, forest, sub, rng, importance_fn):
    from . import analytic, importance, projected

    if importance_fn is not None:
        return np.asarray(importance_fn(forest, sub, rng), dtype=np.float64)
    if method == "bc":
        return np.array(
            [importance.bc_mda(forest, sub, j, rng.child(j)) for j in range(sub.p)]
        )
    if method == "ik":
        return np.array(
            [importance.ik_mda(forest, sub, j, rng.child(j)) for j in range(sub.p)]
        )
    if method == "sobol":
        return projected.sobol_mda_all(forest, sub)
    if method == "retrain":
        return analytic.retrain_sobol_all(sub, forest.config, rng=rng.child(0))
    raise ConfigError(f"unknown importance method: {method!r}")


def rfe(
    data: Dataset,
    config: ForestConfig,
    method: str,
    folds: int,
    repeats: int,
    rng: Rng,
    batch_fraction: float = 0.0,
    importance_fn=None,
    audit=None,
) -> RfeTrace:
    """Discard the least important covariates one by one.

    `batch_fraction` > 0 removes ceil(batch_fraction * current p) covariates
    per step instead of one (an engineering concession for wide data; off by
    default). `importance_fn(forest, sub_data, rng)` overrides the named
    method; `audit(info)` is called once per (step, repeat, fold) with the
    rows used, for hygiene checks.
    """
    if method not in _VALID_METHODS and importance_fn is None:
        raise ConfigError(
            f"unknown importance method: {method!r}; valid: {_VALID_METHODS}"
        )
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if data.n // folds < 2:
        raise ConfigError("folds leave fewer than 2 rows per fold")
    if not 0.0 <= batch_fraction < 1.0:
        raise ConfigError("batch_fraction must be in [0, 1)")

    names = data.names()
    active = list(range(data.p))
    order: list[int] = []
    removed_per_step: list[list[int]] = []
    n_feat, mse_mean, mse_std, ev_mean, ev_std = [], [], [], [], []
    vy = sample_variance(data.y)
    step = 0
    while active:
        sub = data.subset(cols=np.array(active, dtype=np.intp))
        cfg = config
        if cfg.mtry is not None and cfg.mtry > sub.p:
            from dataclasses import replace

            cfg = replace(cfg, mtry=sub.p)
        step_rng = rng.child(step)
        unit_mses = []
        imp_sum = np.zeros(sub.p, dtype=np.float64)
        n_units = 0
        n_drop = 1
        if batch_fraction > 0.0:
            n_drop = min(len(active), int(np.ceil(batch_fraction * len(active))))
        # the final step removes everything left, no ranking needed
        need_importance = len(active) > n_drop
        for rep in range(repeats):
            rep_rng = step_rng.child(rep)
            perm = rep_rng.child(folds).generator().permutation(data.n)
            starts, ends = _fold_bounds(data.n, folds)
            for f in range(folds):
                held = np.sort(perm[starts[f] : ends[f]])
                train = np.sort(
                    np.concatenate([perm[: starts[f]], perm[ends[f] :]])
                )
                tr = sub.subset(rows=train)
                forest = fit_forest(tr, cfg, rng=rep_rng.child(f).child(0))
                pred = predict_forest_rows(forest, sub.x[held])
                mse = float(np.mean((sub.y[held] - pred) ** 2))
                unit_mses.append(mse)
                if need_importance:
                    imp_sum += _unit_importance(
                        method, forest, tr, rep_rng.child(f).child(1), importance_fn
                    )
                n_units += 1
                if audit is not None:
                    audit(
                        {
                            "step": step,
                            "repeat": rep,
                            "fold": f,
                            "train_rows": train,
                            "held_rows": held,
                            "forest_n_rows": forest.n_train,
                        }
                    )
        imp_mean = imp_sum / n_units
        mses = np.array(unit_mses)
        n_feat.append(len(active))
        mse_mean.append(float(mses.mean()))
        mse_std.append(float(mses.std(ddof=1)) if mses.size > 1 else 0.0)
        ev_mean.append(1.0 - mse_mean[-1] / vy)
        ev_std.append(mse_std[-1] / vy)

        # argmin with ties to the lowest original index; numpy argsort is
        # stable and `active` is kept ascending
        drop_local = np.argsort(imp_mean, kind="stable")[:n_drop]
        dropped = sorted(active[k] for k in drop_local)
        removed_per_step.append(dropped)
        order.extend(dropped)
        for d in dropped:
            active.remove(d)
        step += 1

    return RfeTrace(
        elimination_order=order,
        n_features=n_feat,
        cv_mse_mean=mse_mean,
        cv_mse_std=mse_std,
        cv_ev_mean=ev_mean,
        cv_ev_std=ev_std,
        importance_method=method,
        folds=folds,
        repeats=repeats,
        feature_names=names,
        removed_per_step=removed_per_step,
    )
