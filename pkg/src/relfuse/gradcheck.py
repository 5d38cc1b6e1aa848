"""Finite-difference verification of every analytic backward pass.

Each component check builds a small float64 instance, computes analytic
gradients, and compares them against central differences.  The relative
error metric is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``
maximised over all checked elements.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import model as M
from .relation import relation_backward, relation_forward
from .rng import Rng

FD_STEP = 1e-5
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


def numeric_grad(f, x, step=FD_STEP):
    """Central finite differences of scalar-valued f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def _worst(pairs, corrupt=False):
    """Max relative error over (analytic, numeric) pairs, optionally corrupting
    the first analytic gradient to force a detectable failure."""
    worst = 0.0
    for idx, (a, f, x) in enumerate(pairs):
        n = numeric_grad(f, x)
        if corrupt and idx == 0:
            a = np.asarray(a, dtype=np.float64).copy()
            a.ravel()[0] += 1e-2
        worst = max(worst, rel_error(a, n))
    return worst


def check_dense(seed, corrupt=False):
    rng = Rng(seed).child("dense")
    worst = 0.0
    for act in ("relu", "none"):
        x = rng.child("x", act).normal(size=(4, 5))
        W = rng.child("W", act).normal(size=(5, 3))
        b = rng.child("b", act).normal(size=(3,))
        R = rng.child("R", act).normal(size=(4, 3))
        out, cache = L.dense_forward(x, W, b, act)
        dx, dW, db = L.dense_backward(cache, R)

        def obj(x=x, W=W, b=b):
            return float((L.dense_forward(x, W, b, act)[0] * R).sum())

        pairs = [
            (dx, lambda v: float((L.dense_forward(v, W, b, act)[0] * R).sum()), x),
            (dW, lambda v: float((L.dense_forward(x, v, b, act)[0] * R).sum()), W),
            (db, lambda v: float((L.dense_forward(x, W, v, act)[0] * R).sum()), b),
        ]
        worst = max(worst, _worst(pairs, corrupt))
        corrupt = False
    return worst


def check_conv1d(seed, corrupt=False):
    rng = Rng(seed).child("conv")
    x = rng.child("x").normal(size=(7, 3))
    K = rng.child("K").normal(size=(3, 3, 4))
    b = rng.child("b").normal(size=(4,))
    R = rng.child("R").normal(size=(5, 4))
    _, cache = L.conv1d_forward(x, K, b)
    dx, dK, db = L.conv1d_backward(cache, R)
    pairs = [
        (dx, lambda v: float((L.conv1d_forward(v, K, b)[0] * R).sum()), x),
        (dK, lambda v: float((L.conv1d_forward(x, v, b)[0] * R).sum()), K),
        (db, lambda v: float((L.conv1d_forward(x, K, v)[0] * R).sum()), b),
    ]
    return _worst(pairs, corrupt)


def check_maxpool1d(seed, corrupt=False):
    rng = Rng(seed).child("pool")
    x = rng.child("x").normal(size=(7, 3))
    R = rng.child("R").normal(size=(3, 3))
    _, _, cache = L.maxpool1d_forward(x, 2)
    dx = L.maxpool1d_backward(cache, R)
    pairs = [(dx, lambda v: float((L.maxpool1d_forward(v, 2)[0] * R).sum()), x)]
    return _worst(pairs, corrupt)


def check_batchnorm_relu(seed, corrupt=False):
    rng = Rng(seed).child("bn")
    x = rng.child("x").normal(size=(6, 4))
    gamma = rng.child("gamma").uniform(0.5, 1.5, size=(4,))
    beta = rng.child("beta").normal(size=(4,))
    rm = np.zeros(4)
    rv = np.ones(4)
    R = rng.child("R").normal(size=(6, 4))

    def run(x=x, gamma=gamma, beta=beta):
        out, _, _, _ = L.batchnorm_relu_forward(x, gamma, beta, rm, rv, "train")
        return float((out * R).sum())

    _, cache, _, _ = L.batchnorm_relu_forward(x, gamma, beta, rm, rv, "train")
    dx, dgamma, dbeta = L.batchnorm_relu_backward(cache, R)
    pairs = [
        (dx, lambda v: run(x=v), x),
        (dgamma, lambda v: run(gamma=v), gamma),
        (dbeta, lambda v: run(beta=v), beta),
    ]
    return _worst(pairs, corrupt)


def check_dropout(seed, corrupt=False):
    rng_key = Rng(seed).child("dropout")
    x = rng_key.child("x").normal(size=(5, 4))
    R = rng_key.child("R").normal(size=(5, 4))

    def run(v):
        # mask is reconstructed from the same derived stream on every call
        out, _ = L.dropout_forward(v, 0.25, rng_key.child("mask"), "train")
        return float((out * R).sum())

    _, mask_cache = L.dropout_forward(x, 0.25, rng_key.child("mask"), "train")
    dx = L.dropout_backward(mask_cache, R)
    return _worst([(dx, run, x)], corrupt)


def check_lstm(seed, corrupt=False):
    rng = Rng(seed).child("lstm")
    T, Din, H = 3, 4, 5
    x = rng.child("x").normal(size=(T, Din))
    Wx = rng.child("Wx").normal(scale=0.5, size=(Din, 4 * H))
    Wh = rng.child("Wh").normal(scale=0.5, size=(H, 4 * H))
    b = rng.child("b").normal(scale=0.5, size=(4 * H,))
    R = rng.child("R").normal(size=(T, H))

    def run(x=x, Wx=Wx, Wh=Wh, b=b):
        hs, _ = L.lstm_forward(x, Wx, Wh, b)
        return float((hs * R).sum())

    _, cache = L.lstm_forward(x, Wx, Wh, b)
    dx, dWx, dWh, db = L.lstm_backward(cache, R)
    pairs = [
        (dx, lambda v: run(x=v), x),
        (dWx, lambda v: run(Wx=v), Wx),
        (dWh, lambda v: run(Wh=v), Wh),
        (db, lambda v: run(b=v), b),
    ]
    return _worst(pairs, corrupt)


def check_softmax_xent(seed, corrupt=False):
    rng = Rng(seed).child("softmax")
    logits = rng.child("logits").normal(size=(4, 5))
    labels = np.array([0, 2, 4, 1])
    _, probs = L.softmax_xent(logits, labels)
    dlogits = L.softmax_xent_backward(probs, labels)
    pairs = [(dlogits, lambda v: L.softmax_xent(v, labels)[0], logits)]
    return _worst(pairs, corrupt)


def check_relation(seed, corrupt=False):
    rng = Rng(seed).child("relation")
    L1, L2, F = 3, 2, 4
    beta1 = rng.child("b1").normal(size=(L1, F))
    beta2 = rng.child("b2").normal(size=(L2, F))
    g_mlp = L.mlp_init(rng.child("g"), [2 * F, 8, 8], dtype=np.float64)
    h_mlp = L.mlp_init(rng.child("h"), [8, 8, 6], dtype=np.float64)
    for tag, mlp in (("g", g_mlp), ("h", h_mlp)):
        for li in range(len(mlp)):
            W, b = mlp[li]
            mlp[li] = (W, rng.child("bias", tag, li).normal(scale=0.1, size=b.shape))
    g_acts = ["relu", "relu"]
    h_acts = ["relu", "none"]
    R = rng.child("R").normal(size=(6,))

    def run(beta1=beta1, beta2=beta2, g_mlp=g_mlp, h_mlp=h_mlp):
        gamma, _ = relation_forward(beta1, beta2, g_mlp, g_acts, h_mlp, h_acts)
        return float((gamma * R).sum())

    gamma, cache = relation_forward(beta1, beta2, g_mlp, g_acts, h_mlp, h_acts)
    db1, db2, g_grads, h_grads = relation_backward(cache, R)
    pairs = [
        (db1, lambda v: run(beta1=v), beta1),
        (db2, lambda v: run(beta2=v), beta2),
    ]
    for li in range(len(g_mlp)):
        def fw(v, li=li):
            trial = list(g_mlp)
            trial[li] = (v, g_mlp[li][1])
            return run(g_mlp=trial)

        def fb(v, li=li):
            trial = list(g_mlp)
            trial[li] = (g_mlp[li][0], v)
            return run(g_mlp=trial)

        pairs.append((g_grads[li][0], fw, g_mlp[li][0]))
        pairs.append((g_grads[li][1], fb, g_mlp[li][1]))
    for li in range(len(h_mlp)):
        def fw(v, li=li):
            trial = list(h_mlp)
            trial[li] = (v, h_mlp[li][1])
            return run(h_mlp=trial)

        def fb(v, li=li):
            trial = list(h_mlp)
            trial[li] = (h_mlp[li][0], v)
            return run(h_mlp=trial)

        pairs.append((h_grads[li][0], fw, h_mlp[li][0]))
        pairs.append((h_grads[li][1], fb, h_mlp[li][1]))
    return _worst(pairs, corrupt)


def tiny_config(k=3, mode="two_stream", lstm_steps="single"):
    return M.ModelConfig(
        k=k, stream1_shape=(6, 4), stream2_shape=(6, 4), mode=mode,
        conv_filters=4, conv_kernel=3, pool=2, dropout=0.25,
        fg_hidden=(8,), fg_out=8, fh_hidden=(8,), relation_dim=8,
        lstm_hidden=8, fc_dims=(8, 8, k), lstm_steps=lstm_steps).validate()


def check_model(seed, corrupt=False, mode="two_stream", lstm_steps="single"):
    """End-to-end finite-difference check of the tiny model's parameter gradients."""
    config = tiny_config(mode=mode, lstm_steps=lstm_steps)
    rng = Rng(seed).child("e2e")
    params32, state = M.init_model(config, rng.child("init"))
    params = {k: v.astype(np.float64) for k, v in params32.items()}
    state = {k: v.astype(np.float64) for k, v in state.items()}
    # undo the near-zero logit-layer init: differences need a generic point
    # where gradients sit well above finite-difference rounding noise
    last = len(config.fc_dims) - 1
    params[f"fc/{last}/W"] = params[f"fc/{last}/W"] * 100.0
    B = 2
    s1 = rng.child("s1").normal(size=(B,) + config.stream1_shape)
    s2 = rng.child("s2").normal(size=(B,) + config.stream2_shape)
    labels = np.array([0, config.k - 1])

    def loss_with(trial_params):
        res = M.forward(s1, s2, labels, trial_params, state, config, "train",
                        rng.child("mask"))
        return res.loss

    res = M.forward(s1, s2, labels, params, state, config, "train", rng.child("mask"))
    grads = M.backward_full(res.caches, params)

    worst = 0.0
    first = True
    for name in sorted(params):
        def f(v, name=name):
            trial = dict(params)
            trial[name] = v
            return loss_with(trial)

        numeric = numeric_grad(f, params[name])
        analytic = grads[name]
        if corrupt and first:
            analytic = np.asarray(analytic, dtype=np.float64).copy()
            analytic.ravel()[0] += 1e-2
            first = False
        worst = max(worst, rel_error(analytic, numeric))
    return worst


LAYER_CHECKS = {
    "dense": check_dense,
    "conv1d": check_conv1d,
    "maxpool1d": check_maxpool1d,
    "batchnorm_relu": check_batchnorm_relu,
    "dropout": check_dropout,
    "lstm": check_lstm,
    "softmax_xent": check_softmax_xent,
    "relation": check_relation,
}


@dataclass
class ComponentResult:
    name: str
    worst: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.worst < self.tol


def run_suite(layer_seeds=(0, 1, 2, 3, 4), model_seeds=(0, 1), corrupt=None):
    """Run every layer check and the end-to-end model check.

    ``corrupt`` names a component whose analytic gradient gets deliberately
    perturbed, turning the suite into a self-test of its own sensitivity.
    """
    results = []
    for name, fn in LAYER_CHECKS.items():
        start = time.perf_counter()
        worst = max(fn(seed, corrupt=(corrupt == name)) for seed in layer_seeds)
        results.append(ComponentResult(name, worst, LAYER_TOL, time.perf_counter() - start))
    start = time.perf_counter()
    worst = max(check_model(seed, corrupt=(corrupt == "model")) for seed in model_seeds)
    results.append(ComponentResult("model", worst, MODEL_TOL, time.perf_counter() - start))
    return results
