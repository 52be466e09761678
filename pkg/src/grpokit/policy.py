"""Linear-softmax policy over enumerated candidate outputs.

Each task kind owns one head ``(W, b)``; the logits for a query with
feature vector ``x`` are ``W @ x + b`` and the policy is the categorical
distribution ``softmax(logits)`` over that task's candidate set.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

VERSIONS = ("current", "old-snapshot", "reference")
CHECKPOINT_FORMAT = "grpokit.policy/1"


@dataclass(frozen=True)
class QueryContext:
    task_kind: str
    features: np.ndarray


@dataclass
class Head:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"head shapes do not agree: W {self.W.shape}, b {self.b.shape}")

    @property
    def n_candidates(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]


@dataclass
class PolicyParams:
    heads: dict[str, Head] = field(default_factory=dict)
    version: str = "current"

    @classmethod
    def zeros(cls, shapes: dict[str, tuple[int, int]], version: str = "current") -> "PolicyParams":
        """Uniform policy; ``shapes`` maps task kind to ``(K, d)``."""
        return cls({k: Head(np.zeros((K, d)), np.zeros(K)) for k, (K, d) in shapes.items()}, version)

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams.zeros(self.shapes(), self.version)

    def shapes(self) -> dict[str, tuple[int, int]]:
        return {k: h.W.shape for k, h in self.heads.items()}

    def head(self, task_kind: str) -> Head:
        try:
            return self.heads[task_kind]
        except KeyError:
            raise ValueError(f"policy has no head for task kind {task_kind!r}") from None

    def arrays(self) -> Iterator[np.ndarray]:
        for k in sorted(self.heads):
            yield self.heads[k].W
            yield self.heads[k].b

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "PolicyParams":
        out = snapshot(self, self.version)
        offset = 0
        for a in out.arrays():
            a[...] = vec[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        if offset != vec.size:
            raise ValueError("parameter vector has the wrong length")
        return out

    def add_scaled(self, other: "PolicyParams", scale: float) -> None:
        """In-place ``self += scale * other``."""
        for a, g in zip(self.arrays(), other.arrays()):
            a += scale * g

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def snapshot(params: PolicyParams, version: str = "old-snapshot") -> PolicyParams:
    if version not in VERSIONS:
        raise ValueError(f"unknown version tag {version!r}")
    heads = {k: Head(h.W.copy(), h.b.copy()) for k, h in params.heads.items()}
    return PolicyParams(heads, version)


def _check_context(head: Head, ctx: QueryContext) -> np.ndarray:
    x = np.asarray(ctx.features, dtype=np.float64)
    if x.shape != (head.n_features,):
        raise ValueError(
            f"feature dimension {x.shape} does not match head for {ctx.task_kind!r} ({head.n_features})"
        )
    return x


def logits(params: PolicyParams, ctx: QueryContext) -> np.ndarray:
    head = params.head(ctx.task_kind)
    return head.W @ _check_context(head, ctx) + head.b


def log_probs(params: PolicyParams, ctx: QueryContext) -> np.ndarray:
    z = logits(params, ctx)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def probabilities(params: PolicyParams, ctx: QueryContext) -> np.ndarray:
    z = logits(params, ctx)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_prob(params: PolicyParams, ctx: QueryContext, idx: int) -> float:
    lp = log_probs(params, ctx)
    if not 0 <= idx < lp.size:
        raise ValueError(f"candidate index {idx} out of range for K={lp.size}")
    return float(lp[idx])


def sample_group(params: PolicyParams, ctx: QueryContext, G: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``G`` independent candidate indices from the policy."""
    if G < 1:
        raise ValueError("group size must be >= 1")
    p = probabilities(params, ctx)
    # inverse-CDF draws keep the stream tied to one uniform per rollout
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(G) * cdf[-1], side="right")
    return np.minimum(idx, p.size - 1)


def logit_grad_to_params(params: PolicyParams, ctx: QueryContext, g: np.ndarray) -> PolicyParams:
    """Chain a gradient w.r.t. the logits of ``ctx`` into a full parameter gradient."""
    out = params.zeros_like()
    head = out.head(ctx.task_kind)
    head.W += np.outer(g, ctx.features)
    head.b += g
    return out


def grad_log_prob(params: PolicyParams, ctx: QueryContext, idx: int) -> PolicyParams:
    """Gradient of ``log pi(idx | ctx)``: ``(onehot - p)`` for b, outer with x for W."""
    p = probabilities(params, ctx)
    if not 0 <= idx < p.size:
        raise ValueError(f"candidate index {idx} out of range for K={p.size}")
    g = -p
    g[idx] += 1.0
    return logit_grad_to_params(params, ctx, g)


def kl_divergence(params: PolicyParams, ref_params: PolicyParams, ctx: QueryContext) -> float:
    """Exact categorical KL(pi || pi_ref) over the candidate set."""
    lp = log_probs(params, ctx)
    lq = log_probs(ref_params, ctx)
    if lp.shape != lq.shape:
        raise ValueError("policies disagree on the number of candidates")
    return max(0.0, float(np.exp(lp) @ (lp - lq)))


def kl_logit_grad(params: PolicyParams, ref_params: PolicyParams, ctx: QueryContext) -> np.ndarray:
    """d KL(pi || pi_ref) / d logits of the trained policy."""
    lp = log_probs(params, ctx)
    lq = log_probs(ref_params, ctx)
    if lp.shape != lq.shape:
        raise ValueError("policies disagree on the number of candidates")
    p = np.exp(lp)
    diff = lp - lq
    return p * (diff - p @ diff)


def save_policy(params: PolicyParams, path: str | os.PathLike) -> None:
    from grpokit._io import atomic_write_text

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": params.version,
        "heads": {
            k: {
                "task_kind": k,
                "K": h.n_candidates,
                "d": h.n_features,
                "W": h.W.tolist(),
                "b": h.b.tolist(),
            }
            for k, h in sorted(params.heads.items())
        },
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_policy(path: str | os.PathLike) -> PolicyParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    heads = {}
    for k, h in doc["heads"].items():
        head = Head(np.array(h["W"], dtype=np.float64).reshape(h["K"], h["d"]), np.array(h["b"]))
        heads[k] = head
    return PolicyParams(heads, doc["version"])
