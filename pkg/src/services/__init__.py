"""服务层模块 - 训练、评估、消融"""

from .ablation import EXPERIMENTS, Experiment, ablate, write_ablation
from .evaluator import (
    EVAL_SEED_OFFSET,
    ExpertAgent,
    PolicyAgent,
    evaluate,
    evaluate_checkpoint,
    inspect_weights,
    rollout,
    write_report,
)
from .trainer import (
    OverfitResult,
    TrainResult,
    Trainer,
    build_freeze_mask,
    overfit_window,
    stage1_loss,
    stage2_loss,
    train,
    train_two_stage,
)

__all__ = [
    "EVAL_SEED_OFFSET",
    "EXPERIMENTS",
    "Experiment",
    "ExpertAgent",
    "OverfitResult",
    "PolicyAgent",
    "TrainResult",
    "Trainer",
    "ablate",
    "build_freeze_mask",
    "evaluate",
    "evaluate_checkpoint",
    "inspect_weights",
    "overfit_window",
    "rollout",
    "stage1_loss",
    "stage2_loss",
    "train",
    "train_two_stage",
    "write_ablation",
    "write_report",
]
