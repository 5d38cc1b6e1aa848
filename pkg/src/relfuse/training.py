"""Deterministic training loop with per-epoch evaluation and telemetry.

All randomness (parameter init, per-epoch shuffles, per-batch dropout masks)
is derived from the seed plus a fixed key path, never from shared mutable
generator state.  Resuming from a checkpoint therefore replays the exact
key sequence an uninterrupted run would have used.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .checkpoint import (load_checkpoint, read_container, save_checkpoint,
                         write_container)
from .data_io import stack_samples
from .metrics import compute_metrics, confusion
from .optim import GradientError, init_state, rmsprop_step
from .rng import Rng


class TrainingAbort(RuntimeError):
    """Training stopped because a loss or gradient went non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    lr_decay: float = 8e-9
    rho: float = 0.9
    eps: float = 1e-7
    seed: int = 0

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "lr_decay": self.lr_decay, "rho": self.rho, "eps": self.eps,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_metrics: dict | None
    step_losses: list
    wall_time: float


@dataclass
class TrainReport:
    seed: int
    records: list = field(default_factory=list)

    def loss_curve(self):
        return [loss for rec in self.records for loss in rec.step_losses]

    def log_lines(self):
        """Line-delimited (epoch, split, metric, value) records; no timestamps."""
        lines = []
        for rec in self.records:
            lines.append({"epoch": rec.epoch, "split": "train", "metric": "loss",
                          "value": rec.train_loss})
            lines.append({"epoch": rec.epoch, "split": "train", "metric": "accuracy",
                          "value": rec.train_accuracy})
            if rec.test_metrics is not None:
                for name in ("accuracy", "precision", "recall", "f1", "mcc", "specificity"):
                    lines.append({"epoch": rec.epoch, "split": "test", "metric": name,
                                  "value": rec.test_metrics[name]})
        return lines

    def write(self, out_dir):
        out_dir = Path(out_dir)
        with open(out_dir / "train_log.ndjson", "w", encoding="utf-8") as fh:
            for line in self.log_lines():
                fh.write(json.dumps(line, sort_keys=True) + "\n")
        summary = {
            "seed": self.seed,
            "epochs": len(self.records),
            "final_test": self.records[-1].test_metrics if self.records else None,
            "step_losses": [rec.step_losses for rec in self.records],
        }
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
            fh.write("\n")
        # wall times live apart from the deterministic artifacts
        with open(out_dir / "timing.json", "w", encoding="utf-8") as fh:
            json.dump({"per_epoch_seconds": [rec.wall_time for rec in self.records],
                       "total_seconds": sum(rec.wall_time for rec in self.records)},
                      fh, indent=1)
            fh.write("\n")


@dataclass
class TrainResult:
    params: dict
    state: dict
    opt_state: object
    report: TrainReport
    best_epoch: int | None
    best_accuracy: float


OPT_KIND = "rmsprop-v1"


def save_optimizer(path, opt_state, epochs_done, best_epoch, best_accuracy):
    meta = {"kind": OPT_KIND, "t": opt_state.t, "lr": opt_state.lr,
            "decay": opt_state.decay, "rho": opt_state.rho, "eps": opt_state.eps,
            "epochs_done": epochs_done, "best_epoch": best_epoch,
            "best_accuracy": best_accuracy}
    write_container(path, meta, {f"v/{k}": v for k, v in opt_state.v.items()})


def load_optimizer(path):
    meta, arrays = read_container(path)
    if meta.get("kind") != OPT_KIND:
        raise ValueError(f"not an optimizer state file: kind={meta.get('kind')!r}")
    from .optim import OptimizerState
    v = {k[2:]: arr for k, arr in arrays.items() if k.startswith("v/")}
    state = OptimizerState(v=v, t=meta["t"], lr=meta["lr"], decay=meta["decay"],
                           rho=meta["rho"], eps=meta["eps"])
    return state, meta["epochs_done"], meta["best_epoch"], meta["best_accuracy"]


def _batches(order, batch_size):
    """Index batches; a trailing singleton is merged into the previous batch
    because batch norm needs at least two rows."""
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def evaluate(params, state, config, stream1, stream2, labels, class_names):
    """Infer-mode metrics plus the mean loss over a split."""
    probs, _ = M.predict_probs(stream1, stream2, params, state, config)
    preds = probs.argmax(axis=1)
    cm = confusion(labels, preds, config.k, class_names)
    report = compute_metrics(cm)
    eps = np.finfo(np.float32).tiny
    loss = float(-np.log(np.maximum(probs[np.arange(len(labels)), labels], eps)).mean())
    return report, cm, loss


def train(dataset, model_config, train_config, out_dir=None, resume_from=None):
    """Train on the manifest's train split, evaluating on the test split each epoch.

    Writes final/best checkpoints and the telemetry files when ``out_dir`` is
    given.  ``resume_from`` names a directory holding ``final.rfck`` and
    ``final.opt.rfck`` from an earlier (shorter) run; training continues from
    the recorded epoch with identical results to an uninterrupted run.
    """
    model_config.validate()
    train_samples = dataset.split("train")
    test_samples = dataset.split("test")
    if not train_samples:
        raise ValueError("dataset has no training samples")
    if dataset.k != model_config.k:
        raise ValueError(f"dataset has {dataset.k} classes, config expects {model_config.k}")

    s1_tr, s2_tr, y_tr, _ = stack_samples(train_samples)
    use1, use2 = model_config.uses_stream1, model_config.uses_stream2
    s1_tr = s1_tr if use1 else None
    s2_tr = s2_tr if use2 else None
    if test_samples:
        s1_te, s2_te, y_te, _ = stack_samples(test_samples)
        s1_te = s1_te if use1 else None
        s2_te = s2_te if use2 else None

    root = Rng(train_config.seed)
    start_epoch = 0
    best_epoch = None
    best_accuracy = -1.0
    if resume_from is not None:
        resume_from = Path(resume_from)
        params, state, loaded_config = load_checkpoint(resume_from / "final.rfck")
        if loaded_config.to_dict() != model_config.to_dict():
            raise ValueError("resume checkpoint config differs from requested config")
        opt_state, start_epoch, best_epoch, best_accuracy = load_optimizer(
            resume_from / "final.opt.rfck")
    else:
        params, state = M.init_model(model_config, root.child("init"))
        opt_state = init_state(params, lr=train_config.lr, decay=train_config.lr_decay,
                               rho=train_config.rho, eps=train_config.eps)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    report = TrainReport(seed=train_config.seed)
    n = len(train_samples)
    for epoch in range(start_epoch, train_config.epochs):
        tick = time.perf_counter()
        order = root.child("shuffle", epoch).permutation(n)
        step_losses = []
        for bi, batch_idx in enumerate(_batches(order, train_config.batch_size)):
            b1 = s1_tr[batch_idx] if use1 else None
            b2 = s2_tr[batch_idx] if use2 else None
            yb = y_tr[batch_idx]
            res = M.forward(b1, b2, yb, params, state, model_config, "train",
                            root.child("batch", epoch, bi))
            if not np.isfinite(res.loss):
                raise TrainingAbort(f"non-finite loss at epoch {epoch} batch {bi}")
            state = res.state
            grads = M.backward_full(res.caches, params)
            try:
                params, opt_state = rmsprop_step(params, grads, opt_state)
            except GradientError as exc:
                raise TrainingAbort(f"{exc} at epoch {epoch} batch {bi}") from exc
            step_losses.append(res.loss)

        tr_report, _, tr_loss = evaluate(params, state, model_config,
                                         s1_tr, s2_tr, y_tr, dataset.class_names)
        test_metrics = None
        if test_samples:
            te_report, _, _ = evaluate(params, state, model_config,
                                       s1_te, s2_te, y_te, dataset.class_names)
            test_metrics = {k: getattr(te_report, k) for k in
                            ("accuracy", "precision", "recall", "f1", "mcc", "specificity")}
            if te_report.accuracy > best_accuracy:
                best_accuracy = te_report.accuracy
                best_epoch = epoch
                if out_dir is not None:
                    save_checkpoint(out_dir / "best.rfck", params, state, model_config)
        report.records.append(EpochRecord(
            epoch=epoch, train_loss=tr_loss, train_accuracy=tr_report.accuracy,
            test_metrics=test_metrics, step_losses=step_losses,
            wall_time=time.perf_counter() - tick))

    if out_dir is not None:
        save_checkpoint(out_dir / "final.rfck", params, state, model_config)
        save_optimizer(out_dir / "final.opt.rfck", opt_state, train_config.epochs,
                       best_epoch, best_accuracy)
        if not (out_dir / "best.rfck").exists():
            # epochs == 0, no test split, or a resume that never improved
            save_checkpoint(out_dir / "best.rfck", params, state, model_config)
        report.write(out_dir)
    return TrainResult(params=params, state=state, opt_state=opt_state, report=report,
                       best_epoch=best_epoch, best_accuracy=best_accuracy)
