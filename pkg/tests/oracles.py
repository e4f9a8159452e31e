"""Independent reference computations used as test oracles.

Nothing here imports the code paths it checks.
"""

import itertools

import numpy as np


def pairwise_auc(scores, labels):
    """P(s+ > s-) + P(s+ == s-)/2 over every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        if a > b:
            wins += 1.0
        elif a == b:
            wins += 0.5
    return wins / (len(pos) * len(neg))


def unconditional_by_recursion(cond, parent):
    """p(k) = cond(k) * p(parent(k)), evaluated by recursion on parent links."""
    memo = {}

    def p(k):
        if k not in memo:
            memo[k] = cond[k] if parent[k] is None else cond[k] * p(parent[k])
        return memo[k]

    return [p(k) for k in range(len(cond))]


def brute_force_filter(targets, parent):
    """Row indices whose every parent-label target is >= 0.5, by explicit loops."""
    parent_labels = sorted({p for p in parent if p is not None})
    keep = []
    for i, row in enumerate(targets):
        ok = True
        for k in parent_labels:
            if not row[k] >= 0.5:
                ok = False
                break
        if ok:
            keep.append(i)
    return keep


def central_differences(f, arrays, step=1e-5):
    """Numerical gradient of scalar f() w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + step
            up = f()
            a[idx] = orig - step
            down = f()
            a[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def masked_bce_reference(X, T, M, layers):
    """Loss by explicit per-sample, per-label loops (float64)."""
    total = 0.0
    for x, t, m in zip(X, T, M):
        h = np.asarray(x, dtype=float)
        for W, b, act in layers:
            h = h @ W + b
            if act == "relu":
                h = np.maximum(h, 0.0)
        for z, tk, mk in zip(h, t, m):
            p = 1.0 / (1.0 + np.exp(-z))
            total -= mk * (tk * np.log(p) + (1 - tk) * np.log(1 - p))
    return total / len(X)


def direct_ncc(image, template):
    """Pearson correlation of every window with the template, by loops."""
    th, tw = template.shape
    H, W = image.shape
    out = np.full((H - th + 1, W - tw + 1), np.nan)
    t = template.ravel().astype(float)
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            w = image[r:r + th, c:c + tw].ravel().astype(float)
            if w.std() == 0 or t.std() == 0:
                continue
            out[r, c] = np.corrcoef(w, t)[0, 1]
    return out


def random_forest(rng, n_labels, edge_prob=0.6):
    """Random parent vector: each label may attach to an earlier label."""
    parent = []
    for k in range(n_labels):
        if k and rng.random() < edge_prob:
            parent.append(int(rng.integers(0, k)))
        else:
            parent.append(None)
    return parent
