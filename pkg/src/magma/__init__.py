"""
MAGMA: multi-task GP with a common mean process

Training (EM with restarts), prediction and model serialization
"""

from src.magma.model import (
    HyperPosterior,
    IndividualHyperparameters,
    MagmaParameters,
    TrainedModel,
    model_from_json
)
from src.magma.prediction import (
    TrajectoryPrediction,
    credible_interval,
    extend_hyper_posterior,
    fit_new_individual_hps,
    mean_process_curve,
    predict_in_sample,
    predict_trajectory,
    resolve_individual_params
)
from src.magma.training import (
    EMConfig,
    e_step,
    em_train,
    m_step,
    train_with_restarts,
    working_grid
)

__all__ = [
    "HyperPosterior",
    "IndividualHyperparameters",
    "MagmaParameters",
    "TrainedModel",
    "model_from_json",
    "TrajectoryPrediction",
    "credible_interval",
    "extend_hyper_posterior",
    "fit_new_individual_hps",
    "mean_process_curve",
    "predict_in_sample",
    "predict_trajectory",
    "resolve_individual_params",
    "EMConfig",
    "e_step",
    "em_train",
    "m_step",
    "train_with_restarts",
    "working_grid"
]
