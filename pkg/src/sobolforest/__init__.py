"""Regression random forests with total-Sobol variable importance.

Trains subsampled CART ensembles and estimates, for every covariate, the
share of explained response variance lost when it leaves the model: via the
projected-partition importance (sobol_mda), the classical permutation
importances (tt_mda, bc_mda, ik_mda), a weighted-traversal baseline, and a
brute-force retrain baseline. Gaussian simulators and closed-form oracles
reproduce the synthetic benchmarks; `rfe` drives variable selection.
"""

from .analytic import (
    AnalyticDecomposition,
    analytic_example1,
    analytic_linear,
    retrain_sobol,
    retrain_sobol_all,
)
from .data import (
    ConfigError,
    DataError,
    Dataset,
    ForestConfig,
    Rng,
    load_csv,
    sample_variance,
    split_rng,
    write_csv,
)
from .forest import (
    Forest,
    fit_forest,
    oob_error,
    oob_predict,
    oob_predictions,
    predict_forest,
    predict_forest_rows,
    holdout_error,
)
from .gaussian import (
    GaussianSpec,
    example1_spec,
    example2_spec,
    independent_linear_spec,
    sample_gaussian,
)
from .importance import (
    ImportanceReport,
    bc_mda,
    ik_mda,
    importance_report,
    tt_mda,
)
from .projected import (
    TreeRouting,
    lundberg_predict,
    lundberg_rows,
    projected_tree_predict,
    sobol_mda,
    sobol_mda_all,
    sobol_mda_lundberg,
    sobol_mda_lundberg_all,
)
from .selection import RfeTrace, rfe
from .tree import Tree, fit_tree, predict_tree, predict_tree_rows

__version__ = "0.1.0"

__all__ = [
    "AnalyticDecomposition",
    "ConfigError",
    "DataError",
    "Dataset",
    "Forest",
    "ForestConfig",
    "GaussianSpec",
    "ImportanceReport",
    "RfeTrace",
    "Rng",
    "Tree",
    "TreeRouting",
    "analytic_example1",
    "analytic_linear",
    "bc_mda",
    "example1_spec",
    "example2_spec",
    "fit_forest",
    "fit_tree",
    "ik_mda",
    "importance_report",
    "independent_linear_spec",
    "load_csv",
    "lundberg_predict",
    "lundberg_rows",
    "oob_error",
    "oob_predict",
    "oob_predictions",
    "predict_forest",
    "predict_forest_rows",
    "predict_tree",
    "predict_tree_rows",
    "projected_tree_predict",
    "retrain_sobol",
    "retrain_sobol_all",
    "rfe",
    "sample_gaussian",
    "sample_variance",
    "sobol_mda",
    "sobol_mda_all",
    "sobol_mda_lundberg",
    "sobol_mda_lundberg_all",
    "split_rng",
    "holdout_error",
    "tt_mda",
    "write_csv",
]
