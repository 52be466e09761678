"""Per-class precision/recall/F1 and per-task reward evaluation of a policy."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from grpokit._io import atomic_write_csv, atomic_write_text
from grpokit._random import derive_rng
from grpokit._validation import check_samples
from grpokit.policy import PolicyParams, probabilities, sample_group
from grpokit.rewards import RewardWeights
from grpokit.tasks import TaskSample, reward_table


@dataclass
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # counts[true, predicted]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path: str | os.PathLike) -> None:
        rows = ([c] + [int(v) for v in row] for c, row in zip(self.classes, self.counts))
        atomic_write_csv(path, ("true\\pred",) + tuple(self.classes), rows)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def confusion(preds: Sequence[str], gts: Sequence[str], classes: Sequence[str]) -> ConfusionMatrix:
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} labels")
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(preds, gts):
        if p not in pos or t not in pos:
            raise ValueError(f"label outside the class set: {t!r} -> {p!r}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(classes, counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class_f1(cm: ConfusionMatrix) -> dict[str, ClassMetrics]:
    """One-vs-rest precision, recall and F1 per class; any 0/0 counts as 0."""
    c = cm.counts
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    out = {}
    for k, name in enumerate(cm.classes):
        p = _ratio(tp[k], tp[k] + fp[k])
        r = _ratio(tp[k], tp[k] + fn[k])
        out[name] = ClassMetrics(p, r, _ratio(2 * p * r, p + r), int(tp[k] + fn[k]))
    return out


def macro_f1(metrics: dict[str, ClassMetrics]) -> float:
    return float(np.mean([m.f1 for m in metrics.values()])) if metrics else 0.0


def greedy_indices(params: PolicyParams, samples: Sequence[TaskSample]) -> np.ndarray:
    return np.array([int(np.argmax(probabilities(params, s.context()))) for s in samples])


def greedy_reward(params: PolicyParams, samples: Sequence[TaskSample],
                  weights: RewardWeights = RewardWeights()) -> float:
    idx = greedy_indices(params, samples)
    return float(np.mean([reward_table(s, weights)[i] for s, i in zip(samples, idx)]))


def expected_reward(params: PolicyParams, samples: Sequence[TaskSample],
                    weights: RewardWeights = RewardWeights()) -> float:
    """Mean over samples of the exact policy expectation of the total reward."""
    samples = check_samples(samples)
    return float(np.mean([probabilities(params, s.context()) @ reward_table(s, weights) for s in samples]))


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics] = field(default_factory=dict)
    mean_reward: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    confusion: ConfusionMatrix | None = None

    @property
    def macro_f1(self) -> float:
        return macro_f1(self.per_class)

    def to_dict(self) -> dict:
        return {
            "mean_reward": dict(sorted(self.mean_reward.items())),
            "counts": dict(sorted(self.counts.items())),
            "per_class": {
                k: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for k, m in self.per_class.items()
            },
            "macro_f1": self.macro_f1 if self.per_class else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"{'task':<12}{'n':>6}{'mean reward':>14}"]
        for k in sorted(self.mean_reward):
            lines.append(f"{k:<12}{self.counts[k]:>6}{self.mean_reward[k]:>14.4f}")
        if self.per_class:
            lines += ["", f"{'class':<20}{'precision':>10}{'recall':>10}{'F1':>10}{'support':>9}"]
            for k, m in self.per_class.items():
                lines.append(f"{k:<20}{m.precision:>10.4f}{m.recall:>10.4f}{m.f1:>10.4f}{m.support:>9}")
            lines.append(f"{'macro':<20}{'':>10}{'':>10}{self.macro_f1:>10.4f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike, stem: str = "metrics") -> None:
        atomic_write_text(os.path.join(out_dir, f"{stem}.json"), self.to_json())
        atomic_write_text(os.path.join(out_dir, f"{stem}.txt"), self.to_table())
        if self.confusion is not None:
            self.confusion.write_csv(os.path.join(out_dir, f"{stem}_confusion.csv"))


def evaluate_policy(params: PolicyParams, eval_samples: Sequence[TaskSample], decode: str = "argmax",
                    seed: int = 0, weights: RewardWeights = RewardWeights()) -> MetricsReport:
    """Decode one output per sample and aggregate rewards and activity F1."""
    samples = check_samples(eval_samples)
    if decode == "argmax":
        chosen = greedy_indices(params, samples)
    elif decode == "sample":
        chosen = np.array([
            int(sample_group(params, s.context(), 1, derive_rng(seed, "eval", s.sample_id))[0])
            for s in samples
        ])
    else:
        raise ValueError(f"decode must be 'argmax' or 'sample', got {decode!r}")

    rewards: dict[str, list[float]] = {}
    preds, gts, classes = [], [], None
    for s, i in zip(samples, chosen):
        rewards.setdefault(s.task_kind, []).append(float(reward_table(s, weights)[i]))
        if s.task_kind == "activity":
            classes = classes or s.grid.labels
            preds.append(s.candidates[i].payload)
            gts.append(s.ground_truth)

    report = MetricsReport(
        mean_reward={k: float(np.mean(v)) for k, v in rewards.items()},
        counts={k: len(v) for k, v in rewards.items()},
    )
    if classes is not None:
        report.confusion = confusion(preds, gts, classes)
        report.per_class = per_class_f1(report.confusion)
    return report
