"""Pure numpy/Python implementations of the hot kernels.

These are the reference versions; ``_kernels_ext.pyx`` mirrors them and the
test-suite checks the two against each other.
"""
import numpy as np


def context_distance(scores, strict):
    """Context-aware distance from scaled query-key scores.

    ``scores`` has shape ``(..., l, l)``. Row ``t`` is softmaxed over the
    admissible keys (``tau <= t``, or ``tau < t`` when ``strict``) and the
    distance to key ``tau`` is ``|t - tau|`` times the probability mass that
    falls strictly after ``tau``. Inadmissible entries are 0.
    """
    scores = np.asarray(scores)
    l = scores.shape[-1]
    t = np.arange(l)[:, None]
    tau = np.arange(l)[None, :]
    admissible = tau < t if strict else tau <= t
    masked = np.where(admissible, scores, -np.inf)
    row_max = masked.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(admissible, np.exp(masked - row_max), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    gamma = e / np.where(z > 0, z, 1.0)
    after = gamma.sum(axis=-1, keepdims=True) - np.cumsum(gamma, axis=-1)
    after = np.maximum(after, 0.0)
    dist = np.abs(t - tau) * after
    return np.where(admissible, dist, 0.0).astype(scores.dtype, copy=False)


def scatter_add_rows(out, index, src):
    """``out[index[k]] += src[k]`` for every k, in order. Modifies ``out``."""
    np.add.at(out, index, src)
    return out


def best_assignment(agreement):
    """Exhaustive search for the permutation maximising ``sum A[i, perm[i]]``.

    Depth-first over rows with a row-maximum upper bound. Among optimal
    permutations the lexicographically first one is returned.
    """
    a = np.asarray(agreement, dtype=np.int64)
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0
    rows = a.tolist()
    # bound[i] = sum of row maxima for rows i..n-1
    bound = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        bound[i] = bound[i + 1] + max(rows[i])
    best = [-1]
    best_perm = [None]
    perm = [0] * n
    used = [False] * n

    def search(i, total):
        if i == n:
            if total > best[0]:
                best[0] = total
                best_perm[0] = perm[:]
            return
        if total + bound[i] <= best[0]:
            return
        row = rows[i]
        for j in range(n):
            if not used[j]:
                used[j] = True
                perm[i] = j
                search(i + 1, total + row[j])
                used[j] = False

    search(0, 0)
    return np.asarray(best_perm[0], dtype=np.int64), int(best[0])


def _heads_view(arr):
    """Reshape ``(..., n, l, l)`` to ``(-1, n, l, l)``."""
    return arr.reshape(-1, *arr.shape[-3:])


def monotonic_weights(scores, theta, strict, dist=None):
    """Decayed causal softmax for scores shaped ``(..., n_heads, l, l)``.

    Returns ``(weights, dist)`` where ``weights = softmax(exp(-theta_h * dist) *
    scores)`` over admissible keys and ``dist`` is the context distance
    (computed from ``scores`` unless supplied). Rows without an admissible key
    are all zero.
    """
    scores = np.asarray(scores)
    if dist is None:
        dist = context_distance(scores, strict)
    l = scores.shape[-1]
    theta = np.asarray(theta, dtype=scores.dtype).reshape(-1, 1, 1)
    add_mask = np.where(np.tril(np.ones((l, l), dtype=bool), k=-1 if strict else 0), 0.0, -np.inf)
    logits = np.exp(-theta * dist) * scores + add_mask.astype(scores.dtype)
    m = logits.max(axis=-1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    e = np.exp(logits - m)
    z = e.sum(axis=-1, keepdims=True)
    z[z == 0] = 1.0
    return (e / z).astype(scores.dtype, copy=False), dist


def monotonic_weights_backward(grad, weights, scores, dist, theta, strict):
    """Gradients of :func:`monotonic_weights` w.r.t. scores and per-head theta."""
    theta = np.asarray(theta, dtype=scores.dtype).reshape(-1, 1, 1)
    decay = np.exp(-theta * dist)
    dlogit = weights * (grad - (grad * weights).sum(axis=-1, keepdims=True))
    dscores = dlogit * decay
    dtheta = -(_heads_view(dlogit * scores * decay * dist)).sum(axis=(0, 2, 3))
    return dscores.astype(scores.dtype, copy=False), dtheta.astype(scores.dtype, copy=False)
