"""Neural-network layers with explicit forward and backward passes.

Every forward returns ``(output, cache)`` (plus updated running statistics
where applicable); the matching backward consumes that cache exactly once.
Layers are pure functions of (input, parameters).  Functions suffixed
``_batch`` carry a leading sample axis and are what the full model drives;
the unsuffixed variants operate on a single sample.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_ops import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape, dtype=dtype)


# ---------------------------------------------------------------------------
# 1D convolution (valid cross-correlation along the sequence axis)

def conv1d_forward_batch(x, kernels, bias):
    """x: (B, L, Cin), kernels: (k, Cin, Cout), bias: (Cout,) -> (B, L-k+1, Cout)."""
    B, L, Cin = x.shape
    k, kin, Cout = kernels.shape
    if kin != Cin:
        raise ShapeError(f"conv kernels expect {kin} input channels, input has {Cin}")
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"kernel size must be odd and positive, got {k}")
    if L < k:
        raise ShapeError(f"sequence shorter than kernel: L={L} < k={k}")
    windows = sliding_window_view(x, k, axis=1)  # (B, L', Cin, k)
    out = np.einsum("btcd,dco->bto", windows, kernels) + bias
    cache = (x.shape, windows, kernels)
    return out.astype(x.dtype, copy=False), cache


def conv1d_backward_batch(cache, dout):
    x_shape, windows, kernels = cache
    k = kernels.shape[0]
    dkernels = np.einsum("btcd,bto->dco", windows, dout)
    dbias = dout.sum(axis=(0, 1))
    dx = np.zeros(x_shape, dtype=dout.dtype)
    Lp = dout.shape[1]
    for d in range(k):
        dx[:, d:d + Lp] += dout @ kernels[d].T
    return dx, dkernels, dbias


def conv1d_forward(x, kernels, bias):
    """Single sample: (L, Cin) -> (L-k+1, Cout)."""
    out, cache = conv1d_forward_batch(x[None], kernels, bias)
    return out[0], cache


def conv1d_backward(cache, dout):
    dx, dk, db = conv1d_backward_batch(cache, dout[None])
    return dx[0], dk, db


# ---------------------------------------------------------------------------
# max pooling (non-overlapping windows, remainder rows dropped)

def maxpool1d_forward_batch(x, pool):
    """x: (B, L, C) -> (out (B, L//pool, C), argmax row indices, cache).

    Ties take the lowest index; returned indices are absolute row positions.
    """
    if pool < 1:
        raise ShapeError(f"pool size must be >= 1, got {pool}")
    B, L, C = x.shape
    Lp = L // pool
    if Lp < 1:
        raise ShapeError(f"sequence of length {L} shorter than pool {pool}")
    trimmed = x[:, :Lp * pool].reshape(B, Lp, pool, C)
    win_idx = trimmed.argmax(axis=2)  # first (lowest) index on ties
    out = np.take_along_axis(trimmed, win_idx[:, :, None, :], axis=2)[:, :, 0, :]
    abs_idx = win_idx + (np.arange(Lp) * pool)[None, :, None]
    cache = (x.shape, pool, win_idx)
    return out, abs_idx, cache


def maxpool1d_backward_batch(cache, dout):
    x_shape, pool, win_idx = cache
    B, L, C = x_shape
    Lp = win_idx.shape[1]
    dtrim = np.zeros((B, Lp, pool, C), dtype=dout.dtype)
    np.put_along_axis(dtrim, win_idx[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :Lp * pool] = dtrim.reshape(B, Lp * pool, C)
    return dx


def maxpool1d(x, pool):
    """Single sample: (L, C) -> ((L//pool, C), argmax row indices)."""
    out, idx, _ = maxpool1d_forward_batch(x[None], pool)
    return out[0], idx[0]


def maxpool1d_forward(x, pool):
    out, idx, cache = maxpool1d_forward_batch(x[None], pool)
    return out[0], idx[0], cache


def maxpool1d_backward(cache, dout):
    return maxpool1d_backward_batch(cache, dout[None])[0]


# ---------------------------------------------------------------------------
# batch normalization fused with ReLU

def batchnorm_relu_forward(x, gamma, beta, running_mean, running_var, mode,
                           eps=BN_EPS, momentum=BN_MOMENTUM):
    """Normalize per channel over the leading axis, scale/shift, then ReLU.

    Train mode normalizes with batch statistics (biased variance) and returns
    updated running statistics; infer mode normalizes with the running
    statistics and leaves them untouched.
    """
    if x.ndim != 2:
        raise ShapeError(f"batchnorm expects (N, C) input, got {x.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batchnorm train mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        new_rm = momentum * running_mean + (1.0 - momentum) * mean
        new_rv = momentum * running_var + (1.0 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_rm, new_rv = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    pre = gamma * xhat + beta
    out = np.maximum(pre, 0.0)
    cache = (xhat, inv_std, gamma, pre > 0.0, mode)
    return (out.astype(x.dtype, copy=False), cache,
            new_rm.astype(x.dtype, copy=False), new_rv.astype(x.dtype, copy=False))


def batchnorm_relu_backward(cache, dout):
    xhat, inv_std, gamma, relu_mask, mode = cache
    if mode != "train":
        raise ValueError("backward requires a train-mode cache")
    dpre = dout * relu_mask
    dgamma = (dpre * xhat).sum(axis=0)
    dbeta = dpre.sum(axis=0)
    dxhat = dpre * gamma
    n = xhat.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------------------
# dropout (inverted: inference is exactly the identity)

def dropout_forward(x, rate, rng, mode):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x, None
    keep = rng.uniform(size=x.shape) >= rate
    mask = keep.astype(x.dtype) * np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * mask, mask


def dropout_backward(cache, dout):
    if cache is None:
        return dout
    return dout * cache


# ---------------------------------------------------------------------------
# dense (affine with optional ReLU)

def dense_forward(x, W, b, activation="none"):
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense input {x.shape} incompatible with weights {W.shape}")
    pre = x @ W + b
    if activation == "relu":
        out = np.maximum(pre, 0.0)
        mask = pre > 0.0
    elif activation == "none":
        out = pre
        mask = None
    else:
        raise ValueError(f"unknown activation {activation!r}")
    cache = (x, W, mask)
    return out.astype(x.dtype, copy=False), cache


def dense_backward(cache, dout):
    x, W, mask = cache
    dpre = dout * mask if mask is not None else dout
    dW = x.T @ dpre
    db = dpre.sum(axis=0)
    dx = dpre @ W.T
    return dx, dW, db


# ---------------------------------------------------------------------------
# small MLP helpers (stacks of dense layers with shared weights across rows)

def mlp_init(rng, sizes, dtype=np.float32):
    """Glorot-initialised dense stack; ``sizes`` = [in, hidden..., out]."""
    mlp = []
    for li in range(len(sizes) - 1):
        fan_in, fan_out = int(sizes[li]), int(sizes[li + 1])
        W = glorot_uniform(rng.child("W", li), (fan_in, fan_out), fan_in, fan_out, dtype)
        mlp.append((W, np.zeros(fan_out, dtype=dtype)))
    return mlp


def mlp_forward(x, mlp, activations):
    caches = []
    out = x
    for (W, b), act in zip(mlp, activations):
        out, cache = dense_forward(out, W, b, act)
        caches.append(cache)
    return out, caches


def mlp_backward(caches, dout):
    grads = []
    d = dout
    for cache in reversed(caches):
        d, dW, db = dense_backward(cache, d)
        grads.append((dW, db))
    grads.reverse()
    return d, grads


# ---------------------------------------------------------------------------
# LSTM (gate order: input, forget, candidate, output; h0 = c0 = 0)

def lstm_init(rng, input_dim, hidden, dtype=np.float32):
    """Glorot kernels; the forget-gate bias block starts at 1."""
    Wx = glorot_uniform(rng.child("Wx"), (input_dim, 4 * hidden), input_dim, 4 * hidden, dtype)
    Wh = glorot_uniform(rng.child("Wh"), (hidden, 4 * hidden), hidden, 4 * hidden, dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0
    return Wx, Wh, b


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward_batch(x, Wx, Wh, b):
    """x: (B, T, Din) -> all hidden states (B, T, H)."""
    B, T, Din = x.shape
    H = Wh.shape[0]
    if Wx.shape != (Din, 4 * H):
        raise ShapeError(f"lstm input kernel {Wx.shape} incompatible with input {x.shape}")
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    hs = np.zeros((B, T, H), dtype=x.dtype)
    steps = []
    for t in range(T):
        z = x[:, t] @ Wx + h @ Wh + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev = c
        h_prev = h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = (o * tc).astype(x.dtype, copy=False)
        hs[:, t] = h
        steps.append((x[:, t], h_prev, c_prev, i, f, g, o, tc))
    cache = (steps, Wx, Wh)
    return hs, cache


def lstm_backward_batch(cache, dhs):
    steps, Wx, Wh = cache
    B, T, H = dhs.shape
    dtype = dhs.dtype
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H, dtype=dtype)
    dx = np.zeros((B, T, Wx.shape[0]), dtype=dtype)
    dh_next = np.zeros((B, H), dtype=dtype)
    dc_next = np.zeros((B, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        x_t, h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1)
        dWx += x_t.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T
    return dx, dWx, dWh, db


def lstm_forward(seq, Wx, Wh, b):
    """Single sequence: (T, Din) -> (T, H)."""
    hs, cache = lstm_forward_batch(seq[None], Wx, Wh, b)
    return hs[0], cache


def lstm_backward(cache, dhs):
    dx, dWx, dWh, db = lstm_backward_batch(cache, dhs[None])
    return dx[0], dWx, dWh, db


# ---------------------------------------------------------------------------
# softmax cross-entropy

def softmax(logits):
    """Row-wise max-subtracted softmax."""
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax expects (N, k) logits, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return np.exp(logp)


def softmax_xent(logits, labels):
    """Mean negative log-likelihood and the row-wise softmax probabilities.

    The gradient of the loss with respect to the logits is
    (probs - onehot) / N; see ``softmax_xent_backward``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_xent expects (N, k) logits, got {logits.shape}")
    labels = np.asarray(labels)
    N, k = logits.shape
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} does not match {N} logit rows")
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValueError(f"label out of range at index {idx}: {labels[idx]} not in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(N), labels].mean())
    return loss, np.exp(logp)


def softmax_xent_backward(probs, labels):
    N = probs.shape[0]
    d = probs.copy()
    d[np.arange(N), labels] -= 1.0
    return d / N
