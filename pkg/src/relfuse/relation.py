"""Pairwise relational network.

Enumerates every cross-stream feature-row pair, applies a shared MLP to each
pair, sums the results, and maps the aggregate through a second MLP.  Pair
ordering is fixed i-major (row ``i*L2 + j`` pairs stream-1 row i with
stream-2 row j) and the aggregation is a strict ascending-order fold, so the
blocked/vectorized path can be cross-checked bit-for-bit against a naive
double-loop reference.
"""

import numpy as np

from .layers import mlp_backward, mlp_forward
from .tensor_ops import ShapeError


def pair_table(beta1, beta2):
    """All cross-stream pairs: row i*L2 + j is concat(beta1[i], beta2[j])."""
    beta1 = np.asarray(beta1)
    beta2 = np.asarray(beta2)
    if beta1.ndim != 2 or beta2.ndim != 2:
        raise ShapeError(f"pair_table expects rank-2 inputs, got {beta1.shape} and {beta2.shape}")
    if beta1.shape[1] != beta2.shape[1]:
        raise ShapeError(f"feature widths differ: {beta1.shape} vs {beta2.shape}")
    L1 = beta1.shape[0]
    L2 = beta2.shape[0]
    left = np.repeat(beta1, L2, axis=0)
    right = np.tile(beta2, (L1, 1))
    return np.concatenate([left, right], axis=1)


class RelationCache:
    """Forward cache; a backward call consumes it exactly once."""

    def __init__(self, beta1_shape, beta2_shape, blocks, h_caches, width):
        self.beta1_shape = beta1_shape
        self.beta2_shape = beta2_shape
        self.blocks = blocks
        self.h_caches = h_caches
        self.width = width
        self.consumed = False


def relation_forward(beta1, beta2, g_mlp, g_acts, h_mlp, h_acts, block_rows=4096):
    """gamma = f_h( sum over all (i, j) of f_g([beta1_i ; beta2_j]) ).

    Pairs are materialized in blocks of at most ``block_rows`` rows to bound
    memory; the running sum is seeded into each block's fold so the result is
    bit-identical to a single ascending fold over all pairs.
    """
    beta1 = np.asarray(beta1)
    beta2 = np.asarray(beta2)
    if beta1.ndim != 2 or beta2.ndim != 2 or beta1.shape[1] != beta2.shape[1]:
        raise ShapeError(f"incompatible encoded streams: {beta1.shape} vs {beta2.shape}")
    L1, F = beta1.shape
    L2 = beta2.shape[0]
    if L1 < 1 or L2 < 1:
        raise ShapeError("encoded streams must have at least one row")
    total = L1 * L2
    out_dim = g_mlp[-1][0].shape[1]
    acc = np.zeros(out_dim, dtype=beta1.dtype)
    blocks = []
    for start in range(0, total, block_rows):
        rows = np.arange(start, min(start + block_rows, total))
        i_idx = rows // L2
        j_idx = rows % L2
        x = np.concatenate([beta1[i_idx], beta2[j_idx]], axis=1)
        u, g_caches = mlp_forward(x, g_mlp, g_acts)
        folded = np.add.accumulate(np.concatenate([acc[None], u], axis=0), axis=0)
        acc = folded[-1]
        blocks.append((i_idx, j_idx, g_caches))
    gamma2d, h_caches = mlp_forward(acc[None], h_mlp, h_acts)
    cache = RelationCache(beta1.shape, beta2.shape, blocks, h_caches, F)
    return gamma2d[0], cache


def relation_forward_single(beta, g_mlp, g_acts, h_mlp, h_acts, block_rows=4096):
    """Single-stream variant: pairs drawn within one stream, self-pairs included.

    Identical to ``relation_forward(beta, beta, ...)`` by construction.
    """
    return relation_forward(beta, beta, g_mlp, g_acts, h_mlp, h_acts, block_rows)


def relation_backward(cache, dgamma):
    """Gradients for both streams and both MLPs.

    Each beta1 row collects gradient from its L2 pairs (and symmetrically for
    beta2 rows).
    """
    if cache.consumed:
        raise ValueError("relation cache already consumed by a backward pass")
    cache.consumed = True
    dacc2d, h_grads = mlp_backward(cache.h_caches, np.asarray(dgamma)[None])
    dsum = dacc2d[0]
    dbeta1 = np.zeros(cache.beta1_shape, dtype=dsum.dtype)
    dbeta2 = np.zeros(cache.beta2_shape, dtype=dsum.dtype)
    F = cache.width
    g_grads = None
    for i_idx, j_idx, g_caches in cache.blocks:
        du = np.broadcast_to(dsum, (len(i_idx), dsum.shape[0]))
        dx, grads = mlp_backward(g_caches, du)
        if g_grads is None:
            g_grads = [[dW, db] for dW, db in grads]
        else:
            for accg, (dW, db) in zip(g_grads, grads):
                accg[0] = accg[0] + dW
                accg[1] = accg[1] + db
        np.add.at(dbeta1, i_idx, dx[:, :F])
        np.add.at(dbeta2, j_idx, dx[:, F:])
    return dbeta1, dbeta2, [tuple(g) for g in g_grads], h_grads


def relation_backward_single(cache, dgamma):
    """Backward for the single-stream variant: both pair slots feed one beta."""
    dbeta1, dbeta2, g_grads, h_grads = relation_backward(cache, dgamma)
    return dbeta1 + dbeta2, g_grads, h_grads
