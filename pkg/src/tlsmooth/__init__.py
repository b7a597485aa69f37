"""Temporal label smoothing for early event prediction on step data.

The package turns binary event tracks into time-to-event targets,
smooths those targets as a function of distance to the event, trains a
small recurrent model with exact handwritten gradients, and scores the
result with alarm-oriented metrics. ``tlsmooth.harness`` adds a
synthetic cohort generator, a deterministic experiment runner and the
CLI.
"""

from .errors import (GenerationError, InvalidInputError, NumericFailureError,
                     TlsmoothError, UndefinedLossError, UndefinedMetricError)
from .labels import (HorizonGrid, LabelTrack, Stay, event_starts, hard_labels,
                     horizon_labels, time_to_event)
from .metrics import (EvalReport, ScoredSet, ScoredStay, auprc, auroc,
                      binned_rates, evaluate, event_recall, pooled_set,
                      pr_curve, recall_at_precision, roc_curve)
from .model import (ForwardTrace, ModelSpec, ParamStore, forward,
                    forward_batch, gradient, gradient_batch)
from .objectives import (ClassBalance, FocalSpec, Objective, bce, focal,
                         focal_smoothed, ls_targets, mhp_loss, weighted_bce)
from .smoothing import (SmoothingSpec, TargetTrack, q_concave, q_exp,
                        q_linear, q_shift, q_sigmoid, q_step, smooth_targets)
from .training import (Adam, StayData, TrainConfig, TrainResult,
                       load_checkpoint, pad_batch, pooled_loss,
                       save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "ClassBalance", "EvalReport", "FocalSpec", "ForwardTrace",
    "GenerationError", "HorizonGrid", "InvalidInputError", "LabelTrack",
    "ModelSpec", "NumericFailureError", "Objective", "ParamStore",
    "ScoredSet", "ScoredStay", "SmoothingSpec", "Stay", "StayData",
    "TargetTrack", "TlsmoothError", "TrainConfig", "TrainResult",
    "UndefinedLossError", "UndefinedMetricError", "auprc", "auroc", "bce",
    "binned_rates", "evaluate", "event_recall", "event_starts", "focal",
    "focal_smoothed", "forward", "forward_batch", "gradient",
    "gradient_batch", "hard_labels", "horizon_labels", "load_checkpoint",
    "ls_targets", "mhp_loss", "pad_batch", "pooled_loss", "pooled_set",
    "pr_curve",
    "q_concave", "q_exp", "q_linear", "q_shift", "q_sigmoid", "q_step",
    "recall_at_precision", "roc_curve", "save_checkpoint", "smooth_targets",
    "time_to_event", "train", "weighted_bce",
]
