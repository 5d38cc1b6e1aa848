"""Full two-stream classifier.

Pipeline: per-stream 1D-conv encoders (conv -> BatchNorm+ReLU -> dropout ->
max pool), the pairwise relational network over the encoded rows, then an
LSTM plus three fully connected layers ending in a softmax.  Single-stream
ablation modes run the relational network within one stream's rows and never
touch the other stream.
"""

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .relation import (relation_backward, relation_backward_single,
                       relation_forward)
from .rng import Rng
from .tensor_ops import ShapeError

MODES = ("two_stream", "stream1_only", "stream2_only")

# fixed evaluation chunk so inference is reproducible regardless of corpus size
EVAL_CHUNK = 256


class ConfigError(ValueError):
    """Invalid or inconsistent model configuration."""


@dataclass
class ModelConfig:
    k: int
    stream1_shape: tuple
    stream2_shape: tuple
    mode: str = "two_stream"
    conv_filters: int = 32
    conv_kernel: int = 3
    pool: int = 2
    dropout: float = 0.25
    fg_hidden: tuple = (64, 64)
    fg_out: int = 64
    fh_hidden: tuple = (64,)
    relation_dim: int = 64
    lstm_hidden: int = 300
    fc_dims: tuple = ()
    pair_block_rows: int = 4096
    lstm_steps: str = "single"  # "single": gamma is a T=1 sequence; "per_feature": T=G scalar steps
    seed: int = 0

    def __post_init__(self):
        self.stream1_shape = tuple(int(d) for d in self.stream1_shape)
        self.stream2_shape = tuple(int(d) for d in self.stream2_shape)
        self.fg_hidden = tuple(int(d) for d in self.fg_hidden)
        self.fh_hidden = tuple(int(d) for d in self.fh_hidden)
        if not self.fc_dims:
            self.fc_dims = (256, 128, self.k)
        self.fc_dims = tuple(int(d) for d in self.fc_dims)

    def validate(self):
        if self.k < 2:
            raise ConfigError(f"class count must be >= 2, got {self.k}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        for name, shape in (("stream1", self.stream1_shape), ("stream2", self.stream2_shape)):
            if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
                raise ConfigError(f"{name}_shape must be a positive (L, D) pair, got {shape}")
        if self.fc_dims[-1] != self.k:
            raise ConfigError(f"last fc dim {self.fc_dims[-1]} must equal class count {self.k}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv kernel must be odd and positive, got {self.conv_kernel}")
        if self.pool < 1:
            raise ConfigError(f"pool must be >= 1, got {self.pool}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lstm_steps not in ("single", "per_feature"):
            raise ConfigError(f"unknown lstm_steps {self.lstm_steps!r}")
        for name, shape in (("stream1", self.stream1_shape), ("stream2", self.stream2_shape)):
            if self._uses(name) and (shape[0] - self.conv_kernel + 1) // self.pool < 1:
                raise ConfigError(f"{name} length {shape[0]} too short for kernel+pool")
        return self

    def _uses(self, stream):
        if stream == "stream1":
            return self.mode in ("two_stream", "stream1_only")
        return self.mode in ("two_stream", "stream2_only")

    @property
    def uses_stream1(self):
        return self._uses("stream1")

    @property
    def uses_stream2(self):
        return self._uses("stream2")

    def encoded_len(self, stream_shape):
        return (stream_shape[0] - self.conv_kernel + 1) // self.pool

    def lstm_input_dim(self):
        return self.relation_dim if self.lstm_steps == "single" else 1

    def fg_sizes(self):
        return [2 * self.conv_filters] + list(self.fg_hidden) + [self.fg_out]

    def fg_acts(self):
        return ["relu"] * (len(self.fg_hidden) + 1)

    def fh_sizes(self):
        return [self.fg_out] + list(self.fh_hidden) + [self.relation_dim]

    def fh_acts(self):
        return ["relu"] * len(self.fh_hidden) + ["none"]

    def fc_acts(self):
        return ["relu"] * (len(self.fc_dims) - 1) + ["none"]

    def to_dict(self):
        return {
            "k": self.k,
            "stream1_shape": list(self.stream1_shape),
            "stream2_shape": list(self.stream2_shape),
            "mode": self.mode,
            "conv_filters": self.conv_filters,
            "conv_kernel": self.conv_kernel,
            "pool": self.pool,
            "dropout": self.dropout,
            "fg_hidden": list(self.fg_hidden),
            "fg_out": self.fg_out,
            "fh_hidden": list(self.fh_hidden),
            "relation_dim": self.relation_dim,
            "lstm_hidden": self.lstm_hidden,
            "fc_dims": list(self.fc_dims),
            "pair_block_rows": self.pair_block_rows,
            "lstm_steps": self.lstm_steps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Prediction:
    probs: np.ndarray
    predicted_class: int
    embedding: np.ndarray


@dataclass
class ForwardResult:
    probs: np.ndarray        # (B, k)
    embeddings: np.ndarray   # (B, lstm_hidden)
    loss: float | None
    caches: dict | None
    state: dict              # running statistics after this pass


def expected_param_names(config):
    names = []
    if config.uses_stream1:
        names += ["enc1/conv/kernel", "enc1/conv/bias", "enc1/bn/gamma", "enc1/bn/beta"]
    if config.uses_stream2:
        names += ["enc2/conv/kernel", "enc2/conv/bias", "enc2/bn/gamma", "enc2/bn/beta"]
    for prefix, sizes in (("fg", config.fg_sizes()), ("fh", config.fh_sizes())):
        for li in range(len(sizes) - 1):
            names += [f"{prefix}/{li}/W", f"{prefix}/{li}/b"]
    names += ["lstm/Wx", "lstm/Wh", "lstm/b"]
    for li in range(len(config.fc_dims)):
        names += [f"fc/{li}/W", f"fc/{li}/b"]
    return sorted(names)


def expected_state_names(config):
    names = []
    if config.uses_stream1:
        names += ["enc1/bn/mean", "enc1/bn/var"]
    if config.uses_stream2:
        names += ["enc2/bn/mean", "enc2/bn/var"]
    return sorted(names)


def init_model(config, rng=None, dtype=np.float32):
    """Build (params, state) dicts keyed by stable names."""
    config.validate()
    if rng is None:
        rng = Rng(config.seed).child("init")
    params = {}
    state = {}
    k3 = config.conv_kernel
    F = config.conv_filters
    for prefix, used, shape in (("enc1", config.uses_stream1, config.stream1_shape),
                                ("enc2", config.uses_stream2, config.stream2_shape)):
        if not used:
            continue
        D = shape[1]
        params[f"{prefix}/conv/kernel"] = L.glorot_uniform(
            rng.child(prefix, "kernel"), (k3, D, F), k3 * D, k3 * F, dtype)
        params[f"{prefix}/conv/bias"] = np.zeros(F, dtype=dtype)
        params[f"{prefix}/bn/gamma"] = np.ones(F, dtype=dtype)
        params[f"{prefix}/bn/beta"] = np.zeros(F, dtype=dtype)
        state[f"{prefix}/bn/mean"] = np.zeros(F, dtype=dtype)
        state[f"{prefix}/bn/var"] = np.ones(F, dtype=dtype)
    for prefix, sizes in (("fg", config.fg_sizes()), ("fh", config.fh_sizes())):
        mlp = L.mlp_init(rng.child(prefix), sizes, dtype)
        for li, (W, b) in enumerate(mlp):
            params[f"{prefix}/{li}/W"] = W
            params[f"{prefix}/{li}/b"] = b
    Wx, Wh, b = L.lstm_init(rng.child("lstm"), config.lstm_input_dim(), config.lstm_hidden, dtype)
    params["lstm/Wx"] = Wx
    params["lstm/Wh"] = Wh
    params["lstm/b"] = b
    fc_sizes = [config.lstm_hidden] + list(config.fc_dims)
    fc = L.mlp_init(rng.child("fc"), fc_sizes, dtype)
    for li, (W, b) in enumerate(fc):
        params[f"fc/{li}/W"] = W
        params[f"fc/{li}/b"] = b
    # the logit layer starts near zero so an untrained model emits uniform
    # class probabilities (first-batch loss = ln k)
    last = len(config.fc_dims) - 1
    params[f"fc/{last}/W"] = params[f"fc/{last}/W"] * np.asarray(0.01, dtype=dtype)
    return params, state


def _mlp_from_params(params, prefix, n_layers):
    return [(params[f"{prefix}/{li}/W"], params[f"{prefix}/{li}/b"]) for li in range(n_layers)]


def _check_stream(name, x, shape, batch):
    if x is None:
        raise ShapeError(f"{name} is required by this mode but missing")
    if x.ndim != 3 or x.shape[1:] != shape:
        raise ShapeError(f"{name} batch {x.shape} does not match configured shape {shape}")
    if x.shape[0] != batch:
        raise ShapeError(f"{name} batch size {x.shape[0]} != {batch}")


def _encode_batch(xb, prefix, params, state, config, mode, rng_stream):
    out_c, conv_cache = L.conv1d_forward_batch(
        xb, params[f"{prefix}/conv/kernel"], params[f"{prefix}/conv/bias"])
    B, Lp, F = out_c.shape
    flat = out_c.reshape(B * Lp, F)
    bn_out, bn_cache, new_rm, new_rv = L.batchnorm_relu_forward(
        flat, params[f"{prefix}/bn/gamma"], params[f"{prefix}/bn/beta"],
        state[f"{prefix}/bn/mean"], state[f"{prefix}/bn/var"], mode)
    drop_out, drop_cache = L.dropout_forward(bn_out, config.dropout, rng_stream, mode)
    pooled, _, pool_cache = L.maxpool1d_forward_batch(drop_out.reshape(B, Lp, F), config.pool)
    cache = (conv_cache, bn_cache, drop_cache, pool_cache, (B, Lp, F))
    return pooled, cache, new_rm, new_rv


def _encode_backward(cache, dbeta, params, prefix):
    conv_cache, bn_cache, drop_cache, pool_cache, (B, Lp, F) = cache
    dpool = L.maxpool1d_backward_batch(pool_cache, dbeta)
    ddrop = L.dropout_backward(drop_cache, dpool.reshape(B * Lp, F))
    dbn, dgamma, dbeta_bn = L.batchnorm_relu_backward(bn_cache, ddrop)
    dx, dkernel, dbias = L.conv1d_backward_batch(conv_cache, dbn.reshape(B, Lp, F))
    return dx, {
        f"{prefix}/conv/kernel": dkernel,
        f"{prefix}/conv/bias": dbias,
        f"{prefix}/bn/gamma": dgamma,
        f"{prefix}/bn/beta": dbeta_bn,
    }


def forward(stream1, stream2, labels, params, state, config, mode, rng=None):
    """Run the full pipeline on one batch.

    ``mode`` is "train" (batch statistics, dropout active, caches kept for
    backward) or "infer" (running statistics, dropout identity, no caches).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    active = stream1 if config.uses_stream1 else stream2
    if active is None:
        raise ShapeError("required stream missing for configured mode")
    B = active.shape[0]
    if mode == "train":
        if labels is None:
            raise ValueError("train mode requires labels")
        if B < 2:
            raise ShapeError("train mode needs a batch of at least 2 samples (batch norm)")
        if rng is None:
            raise ValueError("train mode requires an rng for dropout")
    if config.uses_stream1:
        _check_stream("stream1", stream1, config.stream1_shape, B)
    if config.uses_stream2:
        _check_stream("stream2", stream2, config.stream2_shape, B)

    new_state = dict(state)
    enc_caches = {}
    betas = {}
    for prefix, used, xb in (("enc1", config.uses_stream1, stream1),
                             ("enc2", config.uses_stream2, stream2)):
        if not used:
            continue
        rng_stream = rng.child(prefix) if rng is not None else None
        beta, cache, new_rm, new_rv = _encode_batch(xb, prefix, params, state, config,
                                                    mode, rng_stream)
        betas[prefix] = beta
        enc_caches[prefix] = cache
        new_state[f"{prefix}/bn/mean"] = new_rm
        new_state[f"{prefix}/bn/var"] = new_rv

    g_mlp = _mlp_from_params(params, "fg", len(config.fg_sizes()) - 1)
    h_mlp = _mlp_from_params(params, "fh", len(config.fh_sizes()) - 1)
    g_acts, h_acts = config.fg_acts(), config.fh_acts()
    dtype = active.dtype
    gammas = np.zeros((B, config.relation_dim), dtype=dtype)
    rel_caches = []
    for bi in range(B):
        if config.mode == "two_stream":
            gamma, rc = relation_forward(betas["enc1"][bi], betas["enc2"][bi],
                                         g_mlp, g_acts, h_mlp, h_acts,
                                         config.pair_block_rows)
        else:
            beta = betas["enc1"][bi] if config.mode == "stream1_only" else betas["enc2"][bi]
            gamma, rc = relation_forward(beta, beta, g_mlp, g_acts, h_mlp, h_acts,
                                         config.pair_block_rows)
        gammas[bi] = gamma
        rel_caches.append(rc)

    if config.lstm_steps == "single":
        seq = gammas[:, None, :]
    else:
        seq = gammas[:, :, None]
    hs, lstm_cache = L.lstm_forward_batch(seq, params["lstm/Wx"], params["lstm/Wh"],
                                          params["lstm/b"])
    h_last = hs[:, -1]

    fc_mlp = _mlp_from_params(params, "fc", len(config.fc_dims))
    logits, fc_caches = L.mlp_forward(h_last, fc_mlp, config.fc_acts())

    if labels is not None:
        loss, probs = L.softmax_xent(logits, labels)
    else:
        loss, probs = None, L.softmax(logits)

    caches = None
    if mode == "train":
        caches = {
            "config": config,
            "enc": enc_caches,
            "relation": rel_caches,
            "lstm": lstm_cache,
            "fc": fc_caches,
            "probs": probs,
            "labels": labels,
            "batch": B,
            "train": True,
            "consumed": False,
        }
    return ForwardResult(probs=probs, embeddings=h_last, loss=loss, caches=caches,
                         state=new_state)


def backward_full(caches, params, labels=None):
    """Gradients of the mean loss for every parameter; mirrors ``forward``."""
    if caches is None or not caches.get("train"):
        raise ValueError("backward requires caches from a train-mode forward pass")
    if caches["consumed"]:
        raise ValueError("caches already consumed by a backward pass")
    caches["consumed"] = True
    config = caches["config"]
    if labels is None:
        labels = caches["labels"]
    probs = caches["probs"]
    B = caches["batch"]

    dlogits = L.softmax_xent_backward(probs, np.asarray(labels))
    dh_last, fc_grads = L.mlp_backward(caches["fc"], dlogits)
    grads = {}
    for li, (dW, db) in enumerate(fc_grads):
        grads[f"fc/{li}/W"] = dW
        grads[f"fc/{li}/b"] = db

    H = params["lstm/Wh"].shape[0]
    T = 1 if config.lstm_steps == "single" else config.relation_dim
    dhs = np.zeros((B, T, H), dtype=dh_last.dtype)
    dhs[:, -1] = dh_last
    dseq, dWx, dWh, dbl = L.lstm_backward_batch(caches["lstm"], dhs)
    grads["lstm/Wx"] = dWx
    grads["lstm/Wh"] = dWh
    grads["lstm/b"] = dbl
    dgammas = dseq[:, 0, :] if config.lstm_steps == "single" else dseq[:, :, 0]

    n_g = len(config.fg_sizes()) - 1
    n_h = len(config.fh_sizes()) - 1
    g_tot = [None] * n_g
    h_tot = [None] * n_h
    dbetas = {}

    def _add_mlp(tot, new):
        for li, (dW, db) in enumerate(new):
            if tot[li] is None:
                tot[li] = [dW, db]
            else:
                tot[li][0] = tot[li][0] + dW
                tot[li][1] = tot[li][1] + db

    for bi in range(B):
        rc = caches["relation"][bi]
        if config.mode == "two_stream":
            db1, db2, gg, hg = relation_backward(rc, dgammas[bi])
            dbetas.setdefault("enc1", []).append(db1)
            dbetas.setdefault("enc2", []).append(db2)
        else:
            db, gg, hg = relation_backward_single(rc, dgammas[bi])
            key = "enc1" if config.mode == "stream1_only" else "enc2"
            dbetas.setdefault(key, []).append(db)
        _add_mlp(g_tot, gg)
        _add_mlp(h_tot, hg)
    for prefix, tot in (("fg", g_tot), ("fh", h_tot)):
        for li, pair in enumerate(tot):
            grads[f"{prefix}/{li}/W"] = pair[0]
            grads[f"{prefix}/{li}/b"] = pair[1]

    for prefix in caches["enc"]:
        dbeta = np.stack(dbetas[prefix], axis=0)
        _, enc_grads = _encode_backward(caches["enc"][prefix], dbeta, params, prefix)
        grads.update(enc_grads)
    return grads


def predict(stream1, stream2, params, state, config):
    """Chunked inference; returns one ``Prediction`` per sample."""
    probs, embeddings = predict_probs(stream1, stream2, params, state, config)
    preds = []
    for row, emb in zip(probs, embeddings):
        preds.append(Prediction(probs=row, predicted_class=int(np.argmax(row)), embedding=emb))
    return preds


def predict_probs(stream1, stream2, params, state, config):
    """Inference over an arbitrary number of samples in fixed-size chunks.

    The chunk size is a constant so the produced values never depend on how
    many samples are evaluated together.
    """
    n = (stream1 if config.uses_stream1 else stream2).shape[0]
    probs = np.zeros((n, config.k), dtype=np.float32)
    embeddings = np.zeros((n, config.lstm_hidden), dtype=np.float32)
    for start in range(0, n, EVAL_CHUNK):
        stop = min(start + EVAL_CHUNK, n)
        s1 = stream1[start:stop] if stream1 is not None else None
        s2 = stream2[start:stop] if stream2 is not None else None
        res = forward(s1, s2, None, params, state, config, "infer")
        probs[start:stop] = res.probs
        embeddings[start:stop] = res.embeddings
    return probs, embeddings
