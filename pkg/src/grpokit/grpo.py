"""Group Relative Policy Optimization for the linear-softmax policy."""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from grpokit._io import atomic_write_csv, csv_text
from grpokit._random import derive_rng
from grpokit._validation import (
    check_policy_for,
    check_positive_float,
    check_positive_int,
    check_samples,
)
from grpokit.optim import make_optimizer
from grpokit.policy import (
    PolicyParams,
    QueryContext,
    kl_logit_grad,
    log_probs,
    sample_group,
    snapshot,
)
from grpokit.rewards import RewardWeights
from grpokit.tasks import TaskSample, policy_shapes, reward_table

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the objective or its gradient stops being finite."""

    def __init__(self, message: str, record: "TrainRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    kl_coef: float = 0.04
    learning_rate: float = 0.5
    iterations: int = 200
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "sgd"
    inner_steps: int = 1


@dataclass
class SampleGroup:
    sample_id: str
    context: QueryContext
    indices: np.ndarray
    old_log_probs: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    mean_reward: float
    objective: float
    mean_kl: float
    clip_fraction: float
    grad_norm: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    COLUMNS = tuple(f.name for f in fields(TrainRecord))

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def _rows(self):
        for r in self.records:
            yield [r.iteration] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]]

    def to_csv_text(self) -> str:
        return csv_text(self.COLUMNS, self._rows())

    def write_csv(self, path: str | os.PathLike) -> None:
        atomic_write_csv(path, self.COLUMNS, self._rows())


def normalize_advantages(rewards) -> np.ndarray:
    """``(r - mean) / std`` with the population std; all-equal groups give zeros."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("need at least one reward")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / r.std()


def clipped_surrogate(ratio, advantage, epsilon):
    """``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``, elementwise."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if np.any(ratio <= 0):
        raise ValueError("probability ratios must be positive")
    out = np.minimum(ratio * advantage, np.clip(ratio, 1 - epsilon, 1 + epsilon) * advantage)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class ObjectiveTerms:
    value: float
    grad: PolicyParams
    mean_kl: float
    clip_fraction: float


def objective_terms(params: PolicyParams, ref_params: PolicyParams, groups: Sequence[SampleGroup],
                    clip_epsilon: float, kl_coef: float) -> ObjectiveTerms:
    if not groups:
        raise ValueError("need at least one sample group")
    grad = params.zeros_like()
    total = 0.0
    kl_sum = 0.0
    n_clipped = 0
    n_outputs = 0
    for g in groups:
        ctx = g.context
        head = params.head(ctx.task_kind)
        if ref_params.head(ctx.task_kind).n_candidates != head.n_candidates:
            raise ValueError(f"reference policy disagrees on K for {ctx.task_kind!r}")
        G = len(g.indices)
        lp = log_probs(params, ctx)
        p = np.exp(lp)
        ratio = np.exp(lp[g.indices] - g.old_log_probs)
        unclipped = ratio * g.advantages
        clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * g.advantages
        surrogate = np.minimum(unclipped, clipped)
        # gradient flows only where the unclipped branch is the minimum
        active = unclipped <= clipped
        w = np.where(active, ratio * g.advantages, 0.0) / G
        logit_grad = np.bincount(g.indices, weights=w, minlength=p.size) - p * w.sum()

        lq = log_probs(ref_params, ctx)
        kl = max(0.0, float(p @ (lp - lq)))
        if kl_coef:
            logit_grad = logit_grad - kl_coef * kl_logit_grad(params, ref_params, ctx)

        total += surrogate.mean() - kl_coef * kl
        kl_sum += kl
        n_clipped += int(np.count_nonzero(~active))
        n_outputs += G
        hg = grad.head(ctx.task_kind)
        hg.W += np.outer(logit_grad, ctx.features)
        hg.b += logit_grad
    n = len(groups)
    for a in grad.arrays():
        a /= n
    return ObjectiveTerms(total / n, grad, kl_sum / n, n_clipped / n_outputs)


def grpo_objective(params: PolicyParams, old_params: PolicyParams, ref_params: PolicyParams,
                   groups: Sequence[SampleGroup], clip_epsilon: float = 0.2,
                   kl_coef: float = 0.04) -> tuple[float, PolicyParams]:
    """Batch-mean clipped surrogate minus ``kl_coef * KL(pi || pi_ref)`` and its gradient.

    ``old_params`` only has to agree on the candidate counts; the ratios use
    the old-policy log-probs frozen into each group.
    """
    for g in groups:
        if old_params.head(g.context.task_kind).n_candidates != params.head(g.context.task_kind).n_candidates:
            raise ValueError(f"old policy disagrees on K for {g.context.task_kind!r}")
    t = objective_terms(params, ref_params, groups, clip_epsilon, kl_coef)
    return t.value, t.grad


def build_group(sample: TaskSample, old_params: PolicyParams, G: int, rng: np.random.Generator,
                weights: RewardWeights = RewardWeights()) -> SampleGroup:
    """Roll out ``G`` candidates under the old policy and score them."""
    ctx = sample.context()
    idx = sample_group(old_params, ctx, G, rng)
    rewards = reward_table(sample, weights)[idx]
    return SampleGroup(sample.sample_id, ctx, idx, log_probs(old_params, ctx)[idx], rewards,
                       normalize_advantages(rewards))


class GRPOTrainer(BaseEstimator):
    """Fit a linear-softmax policy to task rewards with GRPO.

    Each iteration snapshots the old policy, draws a batch of samples,
    rolls out ``group_size`` candidates per sample, normalizes rewards
    within each group and takes ``inner_steps`` ascent steps on the clipped,
    KL-regularized objective.

    Parameters
    ----------
    group_size, clip_epsilon, kl_coef, learning_rate, iterations, batch_size, seed
        Usual GRPO knobs; ``kl_coef`` anchors the policy to the reference.
    optimizer : {"sgd", "adam"}
        Plain fixed-step gradient ascent or Adam.
    inner_steps : int
        Ascent steps per rollout batch. With 1 step the importance ratios
        are exactly 1 and clipping never triggers.
    weights : RewardWeights
        Accuracy / format weights of the total reward.
    callback : callable, optional
        ``callback(iteration, policy)`` after every update.

    Attributes
    ----------
    policy_ : PolicyParams
    reference_ : PolicyParams
    log_ : TrainLog
    """

    def __init__(self, group_size=8, clip_epsilon=0.2, kl_coef=0.04, learning_rate=0.5,
                 iterations=200, batch_size=16, seed=0, optimizer="sgd", inner_steps=1,
                 weights=RewardWeights(), callback=None):
        self.group_size = group_size
        self.clip_epsilon = clip_epsilon
        self.kl_coef = kl_coef
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.optimizer = optimizer
        self.inner_steps = inner_steps
        self.weights = weights
        self.callback = callback

    def _validate_params(self):
        check_positive_int(self.group_size, "group_size")
        check_positive_int(self.iterations, "iterations", allow_zero=True)
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.inner_steps, "inner_steps")
        check_positive_float(self.clip_epsilon, "clip_epsilon")
        check_positive_float(self.kl_coef, "kl_coef", allow_zero=True)
        check_positive_float(self.learning_rate, "learning_rate")

    def fit(self, X, y=None, init: PolicyParams | None = None, ref: PolicyParams | None = None):
        self._validate_params()
        samples = check_samples(X)
        if init is None:
            init = PolicyParams.zeros(policy_shapes(samples))
        check_policy_for(init, samples)
        policy = snapshot(init, "current")
        reference = snapshot(ref if ref is not None else init, "reference")
        check_policy_for(reference, samples)
        opt = make_optimizer(self.optimizer, self.learning_rate)
        log = TrainLog()
        n_batch = min(self.batch_size, len(samples))

        for it in range(self.iterations):
            old = snapshot(policy, "old-snapshot")
            picks = derive_rng(self.seed, "batch", it).choice(len(samples), size=n_batch, replace=False)
            groups = [
                build_group(samples[k], old, self.group_size,
                            derive_rng(self.seed, "rollout", it, samples[k].sample_id), self.weights)
                for k in picks
            ]
            mean_reward = float(np.mean([g.rewards.mean() for g in groups]))
            first = None
            for _ in range(self.inner_steps):
                terms = objective_terms(policy, reference, groups, self.clip_epsilon, self.kl_coef)
                if first is None:
                    first = terms
                gvec = terms.grad.to_vector()
                if not (np.isfinite(terms.value) and np.all(np.isfinite(gvec))):
                    rec = TrainRecord(it, mean_reward, terms.value, terms.mean_kl,
                                      terms.clip_fraction, float(np.linalg.norm(gvec)))
                    raise TrainingDivergedError(f"non-finite objective or gradient at iteration {it}", rec)
                policy = policy.with_vector(opt.step(policy.to_vector(), gvec))
            rec = TrainRecord(it, mean_reward, first.value, first.mean_kl, first.clip_fraction,
                              float(np.linalg.norm(first.grad.to_vector())))
            log.append(rec)
            logger.debug("grpo %s", rec)
            if self.callback is not None:
                self.callback(it, policy)

        self.policy_ = policy
        self.reference_ = reference
        self.log_ = log
        return self

    def predict(self, X) -> np.ndarray:
        """Greedy (argmax) candidate index for each sample."""
        check_is_fitted(self, "policy_")
        from grpokit.evaluation import greedy_indices

        return greedy_indices(self.policy_, check_samples(X))

    def score(self, X, y=None) -> float:
        """Mean total reward of greedy decoding."""
        check_is_fitted(self, "policy_")
        from grpokit.evaluation import greedy_reward

        return greedy_reward(self.policy_, check_samples(X), self.weights)


def train_grpo(config: GrpoConfig, dataset: Sequence[TaskSample], init: PolicyParams | None = None,
               ref: PolicyParams | None = None, callback: Callable | None = None) -> tuple[PolicyParams, TrainLog]:
    est = GRPOTrainer(**asdict(config), callback=callback).fit(dataset, init=init, ref=ref)
    return est.policy_, est.log_
