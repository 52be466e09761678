"""Supervised warm-start: cross-entropy on demonstrations of correct, well-formed outputs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from grpokit._random import derive_rng
from grpokit._validation import check_positive_float, check_positive_int
from grpokit.grpo import TrainingDivergedError
from grpokit.optim import make_optimizer
from grpokit.policy import PolicyParams, QueryContext, log_probs, snapshot
from grpokit.tasks import TaskSample, oracle_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Demonstration:
    context: QueryContext
    target: int
    n_candidates: int
    sample_id: str = ""


@dataclass(frozen=True)
class SftConfig:
    learning_rate: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"


def demonstrations_from(samples: Sequence[TaskSample], targets: Sequence[int] | None = None) -> list[Demonstration]:
    """Turn samples into demos; the default target is the best well-formed candidate."""
    demos = []
    for i, s in enumerate(samples):
        t = oracle_index(s) if targets is None else int(targets[i])
        cands = s.candidates
        if not 0 <= t < len(cands):
            raise ValueError(f"sample {s.sample_id}: target {t} out of range")
        if not cands[t].well_formed:
            raise ValueError(f"sample {s.sample_id}: demonstration target must be well-formed")
        demos.append(Demonstration(s.context(), t, len(cands), s.sample_id))
    return demos


def sft_loss(params: PolicyParams, demos: Sequence[Demonstration]) -> tuple[float, PolicyParams]:
    """Mean negative log-likelihood of the targets and its gradient."""
    if not demos:
        raise ValueError("need at least one demonstration")
    grad = params.zeros_like()
    loss = 0.0
    for d in demos:
        lp = log_probs(params, d.context)
        if lp.size != d.n_candidates:
            raise ValueError(f"demo {d.sample_id}: policy has K={lp.size}, demo has {d.n_candidates}")
        loss -= lp[d.target]
        g = np.exp(lp)
        g[d.target] -= 1.0
        h = grad.head(d.context.task_kind)
        h.W += np.outer(g, d.context.features)
        h.b += g
    n = len(demos)
    for a in grad.arrays():
        a /= n
    return float(loss / n), grad


def demo_shapes(demos: Sequence[Demonstration]) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    for d in demos:
        shape = (d.n_candidates, len(d.context.features))
        if shapes.setdefault(d.context.task_kind, shape) != shape:
            raise ValueError(f"demo {d.sample_id} has shape {shape}, expected {shapes[d.context.task_kind]}")
    return shapes


class SFTTrainer(BaseEstimator):
    """Minibatch cross-entropy training of the linear-softmax policy.

    ``fit`` accepts either :class:`Demonstration` objects or task samples
    (with optional target indices ``y``; default is the oracle candidate).
    ``loss_history_[e]`` is the full training-set loss after epoch ``e``,
    with the initial loss at index 0.
    """

    def __init__(self, learning_rate=0.1, epochs=50, batch_size=32, seed=0, optimizer="sgd"):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.optimizer = optimizer

    def fit(self, X, y=None, init: PolicyParams | None = None):
        check_positive_float(self.learning_rate, "learning_rate")
        check_positive_int(self.epochs, "epochs", allow_zero=True)
        check_positive_int(self.batch_size, "batch_size")
        X = list(X)
        if not X:
            raise ValueError("expected a non-empty list of demonstrations")
        demos = X if isinstance(X[0], Demonstration) else demonstrations_from(X, y)
        shapes = demo_shapes(demos)
        if init is None:
            init = PolicyParams.zeros(shapes)
        else:
            # heads for tasks absent from the demos pass through untouched
            for kind, shape in shapes.items():
                if tuple(init.shapes().get(kind, ())) != shape:
                    raise ValueError(f"initial policy head {kind!r} does not fit the demos ({shape})")
        policy = snapshot(init, "current")
        opt = make_optimizer(self.optimizer, self.learning_rate)
        history = [sft_loss(policy, demos)[0]]
        for epoch in range(self.epochs):
            order = derive_rng(self.seed, "sft-epoch", epoch).permutation(len(demos))
            for start in range(0, len(demos), self.batch_size):
                batch = [demos[i] for i in order[start:start + self.batch_size]]
                _, grad = sft_loss(policy, batch)
                gvec = grad.to_vector()
                if not np.all(np.isfinite(gvec)):
                    raise TrainingDivergedError(f"non-finite SFT gradient in epoch {epoch}")
                policy = policy.with_vector(opt.step(policy.to_vector(), -gvec))
            loss = sft_loss(policy, demos)[0]
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite SFT loss after epoch {epoch}")
            history.append(loss)
            logger.debug("sft epoch %d loss %.6f", epoch, loss)
        self.policy_ = policy
        self.loss_history_ = history
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return np.array([int(np.argmax(log_probs(self.policy_, _context(x)))) for x in X])


def _context(x) -> QueryContext:
    if isinstance(x, Demonstration):
        return x.context
    return x.context()


def sft_train(config: SftConfig, demos: Sequence[Demonstration], init: PolicyParams | None = None) -> PolicyParams:
    return SFTTrainer(**asdict(config)).fit(demos, init=init).policy_
