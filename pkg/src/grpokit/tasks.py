"""Synthetic grounding / matching / activity tasks, dataset files and the difficulty filter."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from grpokit._io import atomic_write_csv, atomic_write_text
from grpokit._random import derive_rng
from grpokit._validation import check_band, check_positive_int, check_samples
from grpokit.policy import PolicyParams, QueryContext, sample_group
from grpokit.rewards import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    BoundingBox,
    RewardBreakdown,
    RewardWeights,
    TimeInterval,
    box_iou,
    combined_reward,
    exact_match,
    format_reward,
    temporal_iou,
)

TASK_KINDS = ("temporal", "box", "match", "activity")
GRID_VERSION = 1
ACTIVITY_CLASSES = ("Watch TV", "Reading", "Play on the Phone", "Play Esports", "Workout")

Payload = Union[TimeInterval, BoundingBox, str]


@dataclass(frozen=True)
class Candidate:
    payload: Payload
    well_formed: bool = True

    def text(self) -> str:
        p = self.payload
        if isinstance(p, TimeInterval):
            return f"{p.start:g}-{p.end:g}"
        if isinstance(p, BoundingBox):
            return f"{p.x_min:g},{p.y_min:g},{p.x_max:g},{p.y_max:g}"
        return p

    def render(self) -> str:
        """Raw model output for this candidate; malformed ones omit the answer tags."""
        if self.well_formed:
            return f"{ANSWER_OPEN}{self.text()}{ANSWER_CLOSE}"
        return self.text()


def _with_format_variants(payloads: list, format_variants: bool) -> tuple[Candidate, ...]:
    cands = [Candidate(p, True) for p in payloads]
    if format_variants:
        cands += [Candidate(p, False) for p in payloads]
    return tuple(cands)


@dataclass(frozen=True)
class TemporalGrid:
    """Intervals between ``n_points`` evenly spaced instants ``k * step``."""

    n_points: int = 10
    step: float = 1.0
    format_variants: bool = True

    kind = "temporal"

    @property
    def duration(self) -> float:
        return (self.n_points - 1) * self.step

    def intervals(self) -> list[TimeInterval]:
        return [
            TimeInterval(i * self.step, j * self.step)
            for i in range(self.n_points)
            for j in range(i + 1, self.n_points)
        ]

    def truths(self) -> list[TimeInterval]:
        return self.intervals()

    def candidates(self) -> tuple[Candidate, ...]:
        return _with_format_variants(self.intervals(), self.format_variants)

    @property
    def n_features(self) -> int:
        return 3

    def encode(self, truth: TimeInterval, rng: np.random.Generator, noise: float) -> np.ndarray:
        u = rng.uniform(-noise, noise, 2) if noise > 0 else np.zeros(2)
        return np.array([truth.start / self.duration + u[0], truth.end / self.duration + u[1], 1.0])

    def to_dict(self) -> dict:
        return {"type": self.kind, "n_points": self.n_points, "step": self.step,
                "format_variants": self.format_variants}


@dataclass(frozen=True)
class BoxGrid:
    """``cells x cells`` positions of a fixed-size square box, plus one degenerate box.

    Top-left corners are evenly spaced on ``[0, 1 - size]`` so the boxes
    stay inside the unit square and neighbouring positions overlap.
    """

    cells: int = 5
    size: float = 0.4
    format_variants: bool = True

    kind = "box"

    def __post_init__(self):
        if not 0 < self.size <= 1:
            raise ValueError("box size must lie in (0, 1]")

    def boxes(self) -> list[BoundingBox]:
        pitch = (1.0 - self.size) / (self.cells - 1) if self.cells > 1 else 0.0
        return [
            BoundingBox(i * pitch, j * pitch, i * pitch + self.size, j * pitch + self.size)
            for j in range(self.cells)
            for i in range(self.cells)
        ]

    def truths(self) -> list[BoundingBox]:
        return self.boxes()

    def candidates(self) -> tuple[Candidate, ...]:
        return _with_format_variants(self.boxes() + [BoundingBox(0.0, 0.0, 0.0, 0.0)], self.format_variants)

    @property
    def n_features(self) -> int:
        return 3

    def encode(self, truth: BoundingBox, rng: np.random.Generator, noise: float) -> np.ndarray:
        u = rng.uniform(-noise, noise, 2) if noise > 0 else np.zeros(2)
        cx = (truth.x_min + truth.x_max) / 2
        cy = (truth.y_min + truth.y_max) / 2
        return np.array([cx + u[0], cy + u[1], 1.0])

    def to_dict(self) -> dict:
        return {"type": self.kind, "cells": self.cells, "size": self.size,
                "format_variants": self.format_variants}


@dataclass(frozen=True)
class LabelGrid:
    """Enumerated answer strings (``match``) or class names (``activity``)."""

    kind: str
    labels: tuple[str, ...]
    format_variants: bool = False

    def __post_init__(self):
        if self.kind not in ("match", "activity"):
            raise ValueError(f"label grids serve match/activity tasks, not {self.kind!r}")
        object.__setattr__(self, "labels", tuple(self.labels))

    def truths(self) -> list[str]:
        return list(self.labels)

    def candidates(self) -> tuple[Candidate, ...]:
        return _with_format_variants(list(self.labels), self.format_variants)

    @property
    def n_features(self) -> int:
        return len(self.labels) + 1

    def encode(self, truth: str, rng: np.random.Generator, noise: float) -> np.ndarray:
        x = np.zeros(self.n_features)
        x[-1] = 1.0
        if truth in self.labels:
            x[self.labels.index(truth)] = 1.0
        if noise > 0:
            x[:-1] += rng.uniform(-noise, noise, len(self.labels))
        return x

    def to_dict(self) -> dict:
        return {"type": self.kind, "labels": list(self.labels), "format_variants": self.format_variants}


Grid = Union[TemporalGrid, BoxGrid, LabelGrid]


def grid_from_dict(d: dict) -> Grid:
    d = dict(d)
    kind = d.pop("type")
    d.pop("version", None)
    if kind == "temporal":
        return TemporalGrid(**d)
    if kind == "box":
        return BoxGrid(**d)
    return LabelGrid(kind=kind, labels=tuple(d.pop("labels")), **d)


@dataclass(frozen=True)
class TaskSample:
    sample_id: str
    task_kind: str
    features: tuple[float, ...]
    ground_truth: Payload
    grid: Grid

    def context(self) -> QueryContext:
        return QueryContext(self.task_kind, np.array(self.features, dtype=np.float64))

    @property
    def candidates(self) -> tuple[Candidate, ...]:
        return self.grid.candidates()


def score_candidate(candidate: Candidate, truth: Payload, weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    p = candidate.payload
    if isinstance(truth, TimeInterval):
        r_acc = temporal_iou(p, truth)
    elif isinstance(truth, BoundingBox):
        r_acc = box_iou(p, truth)
    else:
        r_acc = exact_match(p, truth)
    return combined_reward(r_acc, format_reward(candidate.render()), weights)


@lru_cache(maxsize=65536)
def _reward_table(grid: Grid, truth: Payload, weights: RewardWeights) -> tuple[np.ndarray, np.ndarray]:
    scores = [score_candidate(c, truth, weights) for c in grid.candidates()]
    total = np.array([s.r_total for s in scores])
    acc = np.array([s.r_acc for s in scores])
    total.flags.writeable = False
    acc.flags.writeable = False
    return total, acc


def reward_table(sample: TaskSample, weights: RewardWeights = RewardWeights()) -> np.ndarray:
    """Total reward of every candidate for ``sample``."""
    return _reward_table(sample.grid, sample.ground_truth, weights)[0]


def accuracy_table(sample: TaskSample) -> np.ndarray:
    return _reward_table(sample.grid, sample.ground_truth, RewardWeights())[1]


def oracle_index(sample: TaskSample, weights: RewardWeights = RewardWeights()) -> int:
    """Index of the best-scoring candidate (the well-formed ground truth when on-grid)."""
    return int(np.argmax(reward_table(sample, weights)))


def policy_shapes(samples: Sequence[TaskSample]) -> dict[str, tuple[int, int]]:
    """``{task_kind: (K, d)}`` implied by a dataset; raises on inconsistent samples."""
    shapes: dict[str, tuple[int, int]] = {}
    for s in samples:
        shape = (len(s.candidates), len(s.features))
        if shapes.setdefault(s.task_kind, shape) != shape:
            raise ValueError(f"sample {s.sample_id} has shape {shape}, expected {shapes[s.task_kind]}")
    return shapes


def generate(grid: Grid, n: int, seed: int, noise: float) -> list[TaskSample]:
    """``n`` samples with ground truths drawn uniformly from ``grid`` and noisy encodings."""
    check_positive_int(n, "n", allow_zero=True)
    if noise < 0:
        raise ValueError("noise must be non-negative")
    kind = grid.kind
    truths = grid.truths()
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(truths), size=n)
    out = []
    for i, k in enumerate(picks):
        truth = truths[k]
        x = grid.encode(truth, rng, noise)
        out.append(TaskSample(f"{kind}-{i:05d}", kind, tuple(float(v) for v in x), truth, grid))
    return out


def gen_temporal(n: int, seed: int, noise: float = 0.05, grid: TemporalGrid | None = None) -> list[TaskSample]:
    grid = grid or TemporalGrid()
    return generate(grid, n, seed, noise)


def gen_box(n: int, seed: int, noise: float = 0.05, grid: BoxGrid | None = None) -> list[TaskSample]:
    grid = grid or BoxGrid()
    return generate(grid, n, seed, noise)


def gen_match(n: int, seed: int, K: int = 4, noise: float = 0.3) -> list[TaskSample]:
    check_positive_int(K, "K")
    grid = LabelGrid("match", tuple(str(i) for i in range(K)))
    return generate(grid, n, seed, noise)


def gen_activity(n: int, seed: int, classes: Sequence[str] = ACTIVITY_CLASSES, noise: float = 0.3) -> list[TaskSample]:
    grid = LabelGrid("activity", tuple(classes))
    return generate(grid, n, seed, noise)


# -- persistence ----------------------------------------------------------

def _truth_to_json(t: Payload):
    if isinstance(t, TimeInterval):
        return [t.start, t.end]
    if isinstance(t, BoundingBox):
        return [t.x_min, t.y_min, t.x_max, t.y_max]
    return t


def _truth_from_json(kind: str, v) -> Payload:
    if kind == "temporal":
        return TimeInterval(*map(float, v))
    if kind == "box":
        return BoundingBox(*map(float, v))
    return str(v)


def sample_to_record(s: TaskSample) -> dict:
    return {
        "id": s.sample_id,
        "kind": s.task_kind,
        "features": list(s.features),
        "truth": _truth_to_json(s.ground_truth),
        "grid": {**s.grid.to_dict(), "version": GRID_VERSION},
    }


def sample_from_record(rec: dict) -> TaskSample:
    if rec["grid"].get("version") != GRID_VERSION:
        raise ValueError(f"record {rec.get('id')}: unsupported grid version {rec['grid'].get('version')}")
    kind = rec["kind"]
    if kind not in TASK_KINDS:
        raise ValueError(f"record {rec.get('id')}: unknown task kind {kind!r}")
    return TaskSample(
        rec["id"], kind, tuple(float(v) for v in rec["features"]),
        _truth_from_json(kind, rec["truth"]), grid_from_dict(rec["grid"]),
    )


def write_dataset(samples: Sequence[TaskSample], path: str | os.PathLike) -> None:
    """One JSON object per line."""
    lines = [json.dumps(sample_to_record(s), sort_keys=True) for s in samples]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_dataset(path: str | os.PathLike) -> list[TaskSample]:
    with open(path) as fh:
        return [sample_from_record(json.loads(line)) for line in fh if line.strip()]


# -- difficulty filter ----------------------------------------------------

@dataclass(frozen=True)
class DifficultyReport:
    sample_id: str
    mean_reward: float
    kept: bool


def probe_mean_reward(sample: TaskSample, policy: PolicyParams, G: int, seed: int,
                      score: str = "accuracy", weights: RewardWeights = RewardWeights()) -> float:
    rng = derive_rng(seed, "probe", sample.sample_id)
    idx = sample_group(policy, sample.context(), G, rng)
    table = accuracy_table(sample) if score == "accuracy" else reward_table(sample, weights)
    return float(np.mean(table[idx]))


class DifficultyFilter(TransformerMixin, BaseEstimator):
    """Drop samples the probe policy always solves or never solves.

    ``fit`` draws ``group_size`` rollouts per sample from ``probe_policy``
    and keeps a sample iff ``lo < mean score < hi``. ``score`` selects the
    banded quantity: ``"accuracy"`` (the task accuracy reward) or
    ``"total"`` (accuracy and format, weighted).
    """

    def __init__(self, probe_policy=None, group_size=8, lo=0.05, hi=0.95, seed=0,
                 score="accuracy", weights=RewardWeights()):
        self.probe_policy = probe_policy
        self.group_size = group_size
        self.lo = lo
        self.hi = hi
        self.seed = seed
        self.score = score
        self.weights = weights

    def fit(self, X, y=None):
        samples = check_samples(X)
        check_positive_int(self.group_size, "group_size")
        check_band(self.lo, self.hi)
        if self.score not in ("accuracy", "total"):
            raise ValueError(f"score must be 'accuracy' or 'total', got {self.score!r}")
        if self.probe_policy is None:
            raise ValueError("DifficultyFilter needs a probe_policy")
        reports = []
        for s in samples:
            m = probe_mean_reward(s, self.probe_policy, self.group_size, self.seed, self.score, self.weights)
            reports.append(DifficultyReport(s.sample_id, m, bool(self.lo < m < self.hi)))
        self.reports_ = reports
        self.kept_ids_ = frozenset(r.sample_id for r in reports if r.kept)
        self.seen_ids_ = frozenset(r.sample_id for r in reports)
        return self

    def transform(self, X):
        check_is_fitted(self, "kept_ids_")
        samples = check_samples(X, allow_empty=True)
        unseen = [s.sample_id for s in samples if s.sample_id not in self.seen_ids_]
        if unseen:
            raise ValueError(f"{len(unseen)} samples were not probed during fit, e.g. {unseen[0]}")
        return [s for s in samples if s.sample_id in self.kept_ids_]


def difficulty_filter(samples: Sequence[TaskSample], probe_policy: PolicyParams, G: int = 8,
                      lo: float = 0.05, hi: float = 0.95, seed: int = 0,
                      score: str = "accuracy") -> tuple[list[TaskSample], list[DifficultyReport]]:
    f = DifficultyFilter(probe_policy, G, lo, hi, seed, score).fit(samples)
    return f.transform(samples), f.reports_


def write_difficulty_report(reports: Sequence[DifficultyReport], path: str | os.PathLike) -> None:
    atomic_write_csv(path, ("sample_id", "mean_reward", "kept"),
                     ((r.sample_id, repr(r.mean_reward), int(r.kept)) for r in reports))
