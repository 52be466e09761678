import numpy as np
import pytest

from grpokit.grpo import SampleGroup, normalize_advantages
from grpokit.policy import PolicyParams, QueryContext, log_probs

ACCEPTANCE_RESULTS = []


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def relative_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def random_policy(rng, shapes, scale=1.0):
    p = PolicyParams.zeros(shapes)
    for a in p.arrays():
        a[...] = rng.normal(scale=scale, size=a.shape)
    return p


def make_groups(rng, params, old, n_groups=3, G=6, kinds=("match",)):
    groups = []
    for j in range(n_groups):
        kind = kinds[j % len(kinds)]
        K, d = params.shapes()[kind]
        ctx = QueryContext(kind, rng.normal(size=d))
        idx = rng.integers(K, size=G)
        rewards = rng.random(G)
        groups.append(SampleGroup(f"s{j}", ctx, idx, log_probs(old, ctx)[idx], rewards,
                                  normalize_advantages(rewards)))
    return groups


def near_clip_boundary(params, groups, eps, margin=1e-3):
    for g in groups:
        r = np.exp(log_probs(params, g.context)[g.indices] - g.old_log_probs)
        if np.any(np.abs(r - (1 - eps)) < margin) or np.any(np.abs(r - (1 + eps)) < margin):
            return True
    return False


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(name, passed, detail):
    ACCEPTANCE_RESULTS.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def brute_force_f1(preds, gts, cls):
    """Count TP/FP/FN for ``cls`` one pair at a time."""
    tp = fp = fn = 0
    for p, t in zip(preds, gts):
        if p == cls and t == cls:
            tp += 1
        elif p == cls:
            fp += 1
        elif t == cls:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def oracle_label_policy(samples, kind, scale=50.0):
    """Policy that scores the one-hot block of a label task's features."""
    K = len(samples[0].candidates)
    p = PolicyParams.zeros({kind: (K, K + 1)})
    p.heads[kind].W[:, :K] = scale * np.eye(K)
    return p
