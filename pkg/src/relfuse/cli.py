"""Operator surface: train, evaluate, gradient-check, synthesize data, and
export LSTM embeddings.

Exit codes are a stable contract: 0 success, 1 verification failure or
training abort, 2 missing input, 3 shape or configuration mismatch.  The
fully resolved configuration is echoed into the output directory so a run
can be reproduced from its own artifacts.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import data_io
from .checkpoint import CheckpointError, load_checkpoint
from .gradcheck import run_suite
from .metrics import render_report
from .model import ConfigError, ModelConfig, predict_probs
from .optim import GradientError
from .tensor_ops import ShapeError
from .training import TrainConfig, TrainingAbort, evaluate, train

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_MISSING = 2
EXIT_MISMATCH = 3

SEED_ENV = "RELFUSE_SEED"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _default_seed():
    value = os.environ.get(SEED_ENV)
    return int(value) if value else 0


def _load_config_file(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_MISSING)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}", EXIT_MISMATCH)
    unknown = set(doc) - {"model", "training"}
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}", EXIT_MISMATCH)
    return doc


def _apply_overrides(doc, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"override must look like section.key=value: {item!r}", EXIT_MISMATCH)
        key, raw = item.split("=", 1)
        parts = key.split(".")
        if len(parts) != 2 or parts[0] not in ("model", "training"):
            raise CliError(f"override key must be model.* or training.*: {key!r}", EXIT_MISMATCH)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc.setdefault(parts[0], {})[parts[1]] = value
    return doc


def _resolve_configs(doc, manifest, seed_flag):
    model_doc = dict(doc.get("model", {}))
    train_doc = dict(doc.get("training", {}))
    model_doc.setdefault("k", manifest.k)
    model_doc.setdefault("stream1_shape", list(manifest.stream1_shape))
    model_doc.setdefault("stream2_shape", list(manifest.stream2_shape))
    seed = seed_flag if seed_flag is not None else model_doc.get(
        "seed", train_doc.get("seed", _default_seed()))
    model_doc["seed"] = seed
    train_doc["seed"] = seed
    try:
        model_config = ModelConfig.from_dict(model_doc).validate()
        train_config = TrainConfig.from_dict(train_doc)
    except (ConfigError, ValueError, TypeError) as exc:
        raise CliError(str(exc), EXIT_MISMATCH)
    return model_config, train_config, seed


def _echo_config(out_dir, model_config, train_config, seed):
    payload = {"model": model_config.to_dict(), "seed": seed,
               "training": train_config.to_dict() if train_config else None}
    text = json.dumps(payload, sort_keys=True, indent=1)
    with open(Path(out_dir) / "effective_config.json", "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)


def _load_validated_manifest(path):
    try:
        manifest = data_io.load_manifest(path)
    except FileNotFoundError:
        raise CliError(f"manifest not found: {path}", EXIT_MISSING)
    except data_io.ManifestError as exc:
        raise CliError(str(exc), EXIT_MISMATCH)
    report = data_io.validate_manifest(manifest)
    if not report.ok:
        for msg in report.messages():
            print(f"manifest problem: {msg}", file=sys.stderr)
        code = EXIT_MISSING if report.kinds() <= {"missing_file"} else EXIT_MISMATCH
        raise CliError(f"manifest validation failed with {len(report.problems)} problem(s)",
                       code)
    return manifest


def _check_dims(config, manifest):
    if (tuple(config.stream1_shape) != tuple(manifest.stream1_shape)
            or tuple(config.stream2_shape) != tuple(manifest.stream2_shape)):
        raise CliError(
            "stream shapes disagree: config has "
            f"{tuple(config.stream1_shape)}/{tuple(config.stream2_shape)}, manifest declares "
            f"{tuple(manifest.stream1_shape)}/{tuple(manifest.stream2_shape)}", EXIT_MISMATCH)
    if config.k != manifest.k:
        raise CliError(f"class counts disagree: config has k={config.k}, "
                       f"manifest declares {manifest.k}", EXIT_MISMATCH)


def cmd_train(args):
    manifest = _load_validated_manifest(args.manifest)
    doc = _apply_overrides(_load_config_file(args.config), args.set)
    if args.mode is not None:
        doc.setdefault("model", {})["mode"] = args.mode
    model_config, train_config, seed = _resolve_configs(doc, manifest, args.seed)
    _check_dims(model_config, manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, model_config, train_config, seed)
    dataset = data_io.load_dataset(args.manifest)
    try:
        result = train(dataset, model_config, train_config, out_dir=out_dir)
    except TrainingAbort as exc:
        raise CliError(str(exc), EXIT_VERIFY)
    test_samples = dataset.split("test")
    if test_samples:
        s1, s2, labels, _ = data_io.stack_samples(test_samples)
        report, cm, _ = evaluate(result.params, result.state, model_config,
                                 s1 if model_config.uses_stream1 else None,
                                 s2 if model_config.uses_stream2 else None,
                                 labels, dataset.class_names)
        render_report(report, cm, out_dir)
        print(f"final test accuracy: {report.accuracy:.4f}")
    print(f"checkpoints written to {out_dir}")
    return EXIT_OK


def cmd_eval(args):
    try:
        params, state, config = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_MISSING)
    except CheckpointError as exc:
        raise CliError(f"bad checkpoint: {exc}", EXIT_MISMATCH)
    manifest = _load_validated_manifest(args.manifest)
    _check_dims(config, manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, config, None, config.seed)
    dataset = data_io.load_dataset(args.manifest)
    samples = dataset.split(args.split)
    if not samples:
        raise CliError(f"no samples in split {args.split!r}", EXIT_MISSING)
    s1, s2, labels, _ = data_io.stack_samples(samples)
    report, cm, _ = evaluate(params, state, config,
                             s1 if config.uses_stream1 else None,
                             s2 if config.uses_stream2 else None,
                             labels, dataset.class_names)
    render_report(report, cm, out_dir)
    print(f"accuracy: {report.accuracy:.4f}  mcc: {report.mcc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    model_seeds = tuple(range(args.seed, args.seed + min(args.seeds, 2)))
    print(f"gradcheck: layer seeds {list(seeds)}, model seeds {list(model_seeds)}")
    results = run_suite(layer_seeds=seeds, model_seeds=model_seeds, corrupt=args.corrupt)
    failed = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status}  {res.name:<16s} worst rel err {res.worst:.3e}  "
              f"(tol {res.tol:.0e}, {res.seconds:.2f}s)")
        if not res.passed:
            failed.append(res.name)
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    print("gradient check passed for all components")
    return EXIT_OK


def cmd_synth(args):
    out_dir = Path(args.out)
    manifest_path, manifest = data_io.generate_synthetic(
        out_dir, k=args.classes, n_per_class=args.per_class,
        stream1_shape=_parse_shape(args.stream1), stream2_shape=_parse_shape(args.stream2),
        seed=args.seed if args.seed is not None else _default_seed(),
        noise=args.noise, amplitude=args.amplitude)
    probe = manifest.extra["generator"]["probe_accuracy"]
    print(f"wrote {len(manifest.records)} records to {manifest_path}")
    print(f"probe accuracy: stream1={probe['stream1']:.3f} stream2={probe['stream2']:.3f} "
          f"combined={probe['combined']:.3f}")
    return EXIT_OK


def cmd_export_embeddings(args):
    try:
        params, state, config = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}", EXIT_MISSING)
    except CheckpointError as exc:
        raise CliError(f"bad checkpoint: {exc}", EXIT_MISMATCH)
    manifest = _load_validated_manifest(args.manifest)
    _check_dims(config, manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, config, None, config.seed)
    dataset = data_io.load_dataset(args.manifest)
    s1, s2, labels, ids = data_io.stack_samples(dataset.samples)
    _, embeddings = predict_probs(s1 if config.uses_stream1 else None,
                                  s2 if config.uses_stream2 else None,
                                  params, state, config)
    data_io.write_tensor(out_dir / "embeddings.fts", embeddings)
    with open(out_dir / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "class_name", "split"])
        for sample in dataset.samples:
            writer.writerow([sample.id, sample.label,
                             dataset.class_names[sample.label], sample.split])
    print(f"wrote embeddings {embeddings.shape} and labels for {len(ids)} samples")
    return EXIT_OK


def _parse_shape(text):
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise CliError(f"stream shape must look like LxD, got {text!r}", EXIT_MISMATCH)
    return (int(parts[0]), int(parts[1]))


def build_parser():
    parser = argparse.ArgumentParser(prog="relfuse",
                                     description="two-stream relational fusion classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON with model/training sections")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value")
    p.add_argument("--mode", choices=["two_stream", "stream1_only", "stream2_only"],
                   default=None, help="shorthand for --set model.mode=...")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5, help="seeds per layer check")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic cross-stream corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--stream1", default="12x8")
    p.add_argument("--stream2", default="12x8")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("export-embeddings", help="export per-sample LSTM hidden states")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ShapeError, ConfigError, data_io.ManifestError, data_io.TensorFormatError,
            CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (TrainingAbort, GradientError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
