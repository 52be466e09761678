"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name: str, allow_zero: bool = False) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return int(value)


def check_positive_float(value, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return value


def check_band(lo: float, hi: float) -> None:
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")


def check_samples(X, allow_empty: bool = False) -> list:
    """Materialize a sequence of task samples and check they are usable."""
    from grpokit.tasks import TASK_KINDS, TaskSample

    samples = list(X)
    if not samples and not allow_empty:
        raise ValueError("expected a non-empty list of samples")
    for s in samples:
        if not isinstance(s, TaskSample):
            raise TypeError(f"expected TaskSample, got {type(s).__name__}")
        if s.task_kind not in TASK_KINDS:
            raise ValueError(f"sample {s.sample_id}: unknown task kind {s.task_kind!r}")
        if not np.all(np.isfinite(s.features)):
            raise ValueError(f"sample {s.sample_id}: non-finite features")
    return samples


def check_policy_for(policy, samples) -> None:
    """Raise if ``policy`` has no head, or a wrongly shaped one, for any sample."""
    from grpokit.tasks import policy_shapes

    have = policy.shapes()
    for kind, shape in policy_shapes(samples).items():
        if kind not in have:
            raise ValueError(f"policy has no head for task kind {kind!r}")
        if tuple(have[kind]) != shape:
            raise ValueError(f"policy head {kind!r} has shape {have[kind]}, data needs {shape}")
