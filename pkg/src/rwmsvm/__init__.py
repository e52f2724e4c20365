"""Semi-supervised SVM training with mixture-model similarity kernels.

The toolkit fits Gaussian mixtures to partially labeled data, derives
structure-aware distance measures from them (mixture-weighted and
responsibility weighted Mahalanobis), builds kernel matrices, trains C-SVMs
via SMO on those matrices, selects hyperparameters with an exhaustive grid or
a two-stage line-search heuristic, and benchmarks kernels with Friedman and
Nemenyi rank statistics.
"""

from .data import (ColumnSchema, Dataset, FoldPlan, Sample, UNLABELED,
                   load_dataset, select_labeled_subset, stratified_kfold,
                   zscore_normalize)
from .gmm import (GaussianComponent, MixtureModel, VIHyperParams, fit_em,
                  fit_vi, log_density, mixture_from_parameters,
                  representativity, responsibilities)
from .similarity import categorical_delta, gmm_distance, mahalanobis, rwm_similarity
from .kernel import (GramMatrix, KernelSpec, build_gram, cross_gram,
                     kernel_eval, psd_check)
from .svm import (BinarySvm, SvmModel, count_support_vectors, predict,
                  predict_batch, smo_train_binary, train_multiclass)
from .tuning import Grid, TuneScore, grid_search, keerthi_lin_search
from .evaluation import (EvalReport, ExperimentConfig, friedman_ranks,
                         nemenyi_cd, run_experiment, wins)

__version__ = "0.1.0"

__all__ = [
    "ColumnSchema", "Dataset", "FoldPlan", "Sample", "UNLABELED",
    "load_dataset", "select_labeled_subset", "stratified_kfold",
    "zscore_normalize",
    "GaussianComponent", "MixtureModel", "VIHyperParams", "fit_em", "fit_vi",
    "log_density", "mixture_from_parameters", "representativity",
    "responsibilities",
    "categorical_delta", "gmm_distance", "mahalanobis", "rwm_similarity",
    "GramMatrix", "KernelSpec", "build_gram", "cross_gram", "kernel_eval",
    "psd_check",
    "BinarySvm", "SvmModel", "count_support_vectors", "predict",
    "predict_batch", "smo_train_binary", "train_multiclass",
    "Grid", "TuneScore", "grid_search", "keerthi_lin_search",
    "EvalReport", "ExperimentConfig", "friedman_ranks", "nemenyi_cd",
    "run_experiment", "wins",
]
