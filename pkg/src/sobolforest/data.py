"""Core containers: datasets, forest configuration, and splittable RNG streams.

Covariates are numeric-only. Inputs are used as-is: CART splits are
scale-equivariant, so no rescaling to the unit cube is performed even though
the asymptotic theory behind the importance estimators is usually phrased on
[0, 1]^p.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets or unreadable data files."""


class ConfigError(ValueError):
    """Raised for invalid forest or experiment configuration."""


@dataclass(frozen=True)
class Dataset:
    """An n x p covariate matrix and a length-n response vector.

    Immutable after construction and safe for concurrent reads.
    """

    x: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if x.ndim != 2:
            raise DataError(f"x must be 2-dimensional, got shape {x.shape}")
        if y.ndim != 1:
            raise DataError(f"y must be 1-dimensional, got shape {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise DataError(
                f"x and y row counts differ: {x.shape[0]} vs {y.shape[0]}"
            )
        if x.shape[0] < 2:
            raise DataError("a dataset needs at least 2 rows")
        if x.shape[1] < 1:
            raise DataError("a dataset needs at least 1 covariate")
        if not np.isfinite(x).all():
            raise DataError("x contains NaN or Inf entries")
        if not np.isfinite(y).all():
            raise DataError("y contains NaN or Inf entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != x.shape[1]:
                raise DataError(
                    f"{len(names)} feature names for {x.shape[1]} covariates"
                )
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{k + 1}" for k in range(self.p))

    def subset(self, rows=None, cols=None) -> "Dataset":
        """A new Dataset restricted to the given row/column index arrays."""
        x, y = self.x, self.y
        if rows is not None:
            rows = np.asarray(rows)
            x, y = x[rows], y[rows]
        names = self.names()
        if cols is not None:
            cols = np.asarray(cols)
            x = x[:, cols]
            names = tuple(names[c] for c in cols)
        return Dataset(x, y, names)

    def drop_covariate(self, j: int) -> "Dataset":
        keep = [k for k in range(self.p) if k != j]
        return self.subset(cols=np.array(keep, dtype=np.intp))


def load_csv(path, target) -> Dataset:
    """Read an RFC-4180-style CSV (header required, '.' decimals) into a Dataset.

    `target` selects the response column, either by header name or by a
    0-based positional index. Every cell must parse as a finite real.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if isinstance(target, int) or (
            isinstance(target, str) and target.lstrip("-").isdigit() and target not in header
        ):
            t = int(target)
            if not 0 <= t < len(header):
                raise DataError(
                    f"target index {t} out of range for {len(header)} columns"
                )
        else:
            if target not in header:
                raise DataError(f"target column {target!r} not found in header")
            t = header.index(target)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}"
                )
            vals = []
            for col, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {header[col]!r} is not a number: {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise DataError(
                        f"{path}:{lineno}: column {header[col]!r} is not finite: {cell!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    mat = np.asarray(rows, dtype=np.float64)
    keep = [k for k in range(len(header)) if k != t]
    return Dataset(
        mat[:, keep], mat[:, t], tuple(header[k] for k in keep)
    )


def write_csv(data: Dataset, path, target_name: str = "y") -> None:
    """Write a Dataset back to CSV with the response as the last column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.names()) + [target_name])
        for i in range(data.n):
            writer.writerow(
                [repr(float(v)) for v in data.x[i]] + [repr(float(data.y[i]))]
            )


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters of the ensemble.

    `subsample_size`, `max_leaves` and `mtry` may be left as None and are then
    resolved against the training data: subsample_size = ceil(0.632 n),
    max_leaves = subsample_size (leaf budget effectively off), and
    mtry = max(ceil(p / 3), 1).

    `gamma` forces every child of a split to hold at least ceil(gamma * parent
    count) in-bag observations; `delta` is the per-node probability of drawing
    a single split candidate instead of mtry. Both default to 0 (off).
    """

    n_trees: int = 300
    subsample_size: int | None = None
    max_leaves: int | None = None
    min_node_size: int = 5
    mtry: int | None = None
    gamma: float = 0.0
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ConfigError("subsample_size must be >= 1")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ConfigError("max_leaves must be >= 1")
        if self.min_node_size < 1:
            raise ConfigError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigError("mtry must be >= 1")
        if not 0.0 <= self.gamma < 0.5:
            raise ConfigError("gamma must be in [0, 0.5)")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError("delta must be in [0, 1]")

    def resolved(self, n: int, p: int) -> "ForestConfig":
        """Concrete config for a dataset of n rows and p covariates."""
        a_n = self.subsample_size
        if a_n is None:
            a_n = int(np.ceil(0.632 * n))
        if a_n > n:
            raise ConfigError(f"subsample_size {a_n} exceeds n = {n}")
        mtry = self.mtry
        if mtry is None:
            mtry = max(int(np.ceil(p / 3)), 1)
        if mtry > p:
            raise ConfigError(f"mtry {mtry} exceeds p = {p}")
        leaves = self.max_leaves if self.max_leaves is not None else a_n
        return replace(
            self, subsample_size=a_n, max_leaves=leaves, mtry=mtry
        )

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "subsample_size": self.subsample_size,
            "max_leaves": self.max_leaves,
            "min_node_size": self.min_node_size,
            "mtry": self.mtry,
            "gamma": self.gamma,
            "delta": self.delta,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ForestConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ForestConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Rng:
    """Deterministic, index-addressed random stream.

    A stream is identified by (seed, path). `child(i)` and `split(k)` derive
    sub-streams purely from the index, so stream i of a k-way split does not
    depend on k, and per-task parallelism cannot change results. A stream is
    single-owner: do not share one generator across threads.
    """

    seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.path + (int(index),))

    def split(self, k: int) -> list["Rng"]:
        if k < 1:
            raise ConfigError("split needs k >= 1")
        return [self.child(i) for i in range(k)]

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.default_rng(ss)


def split_rng(rng: Rng, k: int) -> list[Rng]:
    return rng.split(k)


def sample_variance(y: np.ndarray) -> float:
    """(n-1)-denominator sample variance of the response."""
    return float(np.var(np.asarray(y, dtype=np.float64), ddof=1))


def seq_sum(values: np.ndarray) -> float:
    """Sum of `values` accumulated strictly left to right.

    Cell outputs are defined as (sequential sum of in-bag responses in
    ascending row order) / count everywhere, so that independently coded
    reference implementations can reproduce predictions bit for bit.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(
        np.bincount(np.zeros(a.size, dtype=np.intp), weights=a, minlength=1)[0]
    )


def seq_mean(values: np.ndarray) -> float:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise ValueError("mean of empty cell")
    return seq_sum(a) / a.size
