"""Fairness-aware gradient descent via multiplier-driven group reweighting."""
from ._backend import HAVE_COMPILED
from .data import (Dataset, DataError, StandardizeStats, SyntheticSpec, biased_benchmark,
                   gen_synthetic, load_csv, split, split_train_val, standardize)
from .fairness import (AP, EODDS, FairnessNotion, GroupErrorEstimates, GroupPartition, Notion,
                       build_constants, direct_fairness, eopp, fairness_levels, group_error_rates,
                       merge_running, partition)
from .model import (ModelSpec, NonFiniteLossError, Parameters, clip_gradient, init_params, predict,
                    weighted_loss_grad)
from .report import FairnessReport, evaluate
from .trainer import (MultiplierState, TrainConfig, TrainResult, constant_baseline, group_weights,
                      select_model, train, update_multipliers_eps, update_multipliers_exact)

__version__ = "0.1.0"

__all__ = [
    "AP",
    "biased_benchmark",
    "build_constants",
    "clip_gradient",
    "constant_baseline",
    "DataError",
    "Dataset",
    "direct_fairness",
    "EODDS",
    "eopp",
    "evaluate",
    "fairness_levels",
    "FairnessNotion",
    "FairnessReport",
    "gen_synthetic",
    "group_error_rates",
    "group_weights",
    "GroupErrorEstimates",
    "GroupPartition",
    "HAVE_COMPILED",
    "init_params",
    "load_csv",
    "merge_running",
    "ModelSpec",
    "MultiplierState",
    "NonFiniteLossError",
    "Notion",
    "Parameters",
    "partition",
    "predict",
    "select_model",
    "split",
    "split_train_val",
    "standardize",
    "StandardizeStats",
    "SyntheticSpec",
    "train",
    "TrainConfig",
    "TrainResult",
    "update_multipliers_eps",
    "update_multipliers_exact",
    "weighted_loss_grad",
]
