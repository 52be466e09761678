"""Deterministic reward kernels for grounding, exact-match and format checks."""

from __future__ import annotations

import re
from dataclasses import dataclass

ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
_ANSWER_RE = re.compile(re.escape(ANSWER_OPEN) + r"(.*?)" + re.escape(ANSWER_CLOSE), re.DOTALL)
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class TimeInterval:
    start: float
    end: float

    @property
    def length(self) -> float:
        return max(0.0, self.end - self.start)

    @property
    def degenerate(self) -> bool:
        return not self.end > self.start


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def degenerate(self) -> bool:
        return not (self.x_max > self.x_min and self.y_max > self.y_min)

    @property
    def area(self) -> float:
        if self.degenerate:
            return 0.0
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class RewardWeights:
    lambda_acc: float = 0.9
    lambda_fmt: float = 0.1

    def __post_init__(self):
        if self.lambda_acc < 0 or self.lambda_fmt < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: float
    r_fmt: int
    r_total: float


def temporal_iou(pred: TimeInterval, gt: TimeInterval) -> float:
    """1D intersection-over-union of two time segments.

    Degenerate predictions (``end <= start``) score 0. A degenerate
    ground truth raises ``ValueError``.
    """
    if gt.degenerate:
        raise ValueError(f"degenerate ground-truth interval {gt}")
    if pred.degenerate:
        return 0.0
    inter = max(0.0, min(pred.end, gt.end) - max(pred.start, gt.start))
    union = (pred.end - pred.start) + (gt.end - gt.start) - inter
    return inter / union


def box_iou(pred: BoundingBox, gt: BoundingBox) -> float:
    """2D intersection-over-union of two axis-aligned boxes."""
    if gt.degenerate:
        raise ValueError(f"degenerate ground-truth box {gt}")
    if pred.degenerate:
        return 0.0
    iw = min(pred.x_max, gt.x_max) - max(pred.x_min, gt.x_min)
    ih = min(pred.y_max, gt.y_max) - max(pred.y_min, gt.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (pred.area + gt.area - inter)


def normalize_answer(text: str) -> str:
    return _WS_RE.sub(" ", text.strip()).casefold()


def exact_match(pred: str, gt: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gt))


def extract_answer(raw_output: str) -> str | None:
    """Return the payload of the single answer block, or None if malformed."""
    if raw_output.count(ANSWER_OPEN) != 1 or raw_output.count(ANSWER_CLOSE) != 1:
        return None
    m = _ANSWER_RE.search(raw_output)
    if m is None or not m.group(1).strip():
        return None
    return m.group(1)


def format_reward(raw_output: str) -> int:
    return int(extract_answer(raw_output) is not None)


def combined_reward(r_acc: float, r_fmt: int, weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    if not 0.0 <= r_acc <= 1.0:
        raise ValueError(f"r_acc must lie in [0, 1], got {r_acc}")
    if r_fmt not in (0, 1):
        raise ValueError(f"r_fmt must be 0 or 1, got {r_fmt}")
    total = weights.lambda_acc * r_acc + weights.lambda_fmt * r_fmt
    return RewardBreakdown(r_acc=float(r_acc), r_fmt=int(r_fmt), r_total=total)
