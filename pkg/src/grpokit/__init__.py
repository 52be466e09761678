"""Desk-scale GRPO training for a linear-softmax policy with verifiable rewards."""

from grpokit.evaluation import (
    ConfusionMatrix,
    MetricsReport,
    confusion,
    evaluate_policy,
    expected_reward,
    per_class_f1,
)
from grpokit.grpo import (
    GrpoConfig,
    GRPOTrainer,
    SampleGroup,
    TrainingDivergedError,
    TrainLog,
    clipped_surrogate,
    grpo_objective,
    normalize_advantages,
    train_grpo,
)
from grpokit.policy import PolicyParams, QueryContext, load_policy, save_policy
from grpokit.rewards import (
    BoundingBox,
    RewardWeights,
    TimeInterval,
    box_iou,
    combined_reward,
    exact_match,
    format_reward,
    temporal_iou,
)
from grpokit.sft import Demonstration, SftConfig, SFTTrainer, demonstrations_from, sft_loss, sft_train
from grpokit.tasks import (
    DifficultyFilter,
    TaskSample,
    difficulty_filter,
    gen_activity,
    gen_box,
    gen_match,
    gen_temporal,
    read_dataset,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "box_iou",
    "clipped_surrogate",
    "combined_reward",
    "confusion",
    "ConfusionMatrix",
    "Demonstration",
    "demonstrations_from",
    "difficulty_filter",
    "DifficultyFilter",
    "evaluate_policy",
    "exact_match",
    "expected_reward",
    "format_reward",
    "gen_activity",
    "gen_box",
    "gen_match",
    "gen_temporal",
    "grpo_objective",
    "GrpoConfig",
    "GRPOTrainer",
    "load_policy",
    "MetricsReport",
    "normalize_advantages",
    "per_class_f1",
    "PolicyParams",
    "QueryContext",
    "read_dataset",
    "RewardWeights",
    "SampleGroup",
    "save_policy",
    "sft_loss",
    "sft_train",
    "SftConfig",
    "SFTTrainer",
    "TaskSample",
    "temporal_iou",
    "TimeInterval",
    "train_grpo",
    "TrainingDivergedError",
    "TrainLog",
    "write_dataset",
]
