"""Feature-tensor files, dataset manifests, and the synthetic corpus generator.

FTS1 tensor layout (bit-exact, little-endian): magic ``FTS1``, u8 rank,
three reserved zero bytes, u32 dims[rank], float32 payload in row-major
order.  Manifests are JSON: a header carrying the class-name table and the
declared (L, D) shape of each stream, plus one record per sample with paths
relative to the manifest's directory.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng
from .tensor_ops import reshape

MAGIC = b"FTS1"
_U32_MAX = 0xFFFFFFFF


class TensorFormatError(Exception):
    """Malformed FTS1 tensor file."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    pass


class DimOverflowError(TensorFormatError):
    pass


class NonFiniteDataError(TensorFormatError):
    pass


class ManifestError(Exception):
    """Structurally invalid manifest."""


def write_tensor(path, tensor):
    """Write a float32 tensor; the round-trip through ``read_tensor`` is bitwise exact."""
    if np.asarray(tensor).ndim < 1:
        raise DimOverflowError("rank 0 tensors are not supported")
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim > 255:
        raise DimOverflowError(f"rank {arr.ndim} exceeds 255")
    if any(d > _U32_MAX for d in arr.shape):
        raise DimOverflowError(f"dimension exceeds u32 in shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteDataError("refusing to write non-finite values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B3x", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor_header(path):
    """Parse only magic/rank/dims and verify the payload length on disk."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise TruncatedFileError(f"{path}: file shorter than the 8-byte header")
        if head[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        rank = head[4]
        if rank < 1:
            raise DimOverflowError(f"{path}: rank 0 tensors are not supported")
        if head[5:8] != b"\x00\x00\x00":
            raise TensorFormatError(f"{path}: reserved header bytes must be zero")
        dim_bytes = fh.read(4 * rank)
        if len(dim_bytes) < 4 * rank:
            raise TruncatedFileError(f"{path}: truncated dimension list")
        dims = struct.unpack(f"<{rank}I", dim_bytes)
    count = 1
    for d in dims:
        count *= d
    expected = 8 + 4 * rank + 4 * count
    if size < expected:
        raise TruncatedFileError(f"{path}: payload truncated, {size} bytes < {expected} expected")
    if size > expected:
        raise TensorFormatError(f"{path}: {size - expected} trailing bytes after payload")
    return dims


def read_tensor(path):
    """Read a tensor written by ``write_tensor``; returns float32."""
    dims = read_tensor_header(path)
    rank = len(dims)
    with open(path, "rb") as fh:
        fh.seek(8 + 4 * rank)
        payload = fh.read()
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteDataError(f"{path}: non-finite values in payload")
    return arr


# ---------------------------------------------------------------------------
# manifests

SPLITS = ("train", "test")


@dataclass
class FeatureRecord:
    id: str
    label: int
    class_name: str
    stream1: str
    stream2: str
    split: str

    def to_dict(self):
        return {"id": self.id, "label": self.label, "class_name": self.class_name,
                "stream1": self.stream1, "stream2": self.stream2, "split": self.split}


@dataclass
class Manifest:
    classes: list
    stream1_shape: tuple
    stream2_shape: tuple
    records: list
    base_dir: Path
    extra: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.classes)


def save_manifest(manifest, path):
    doc = dict(manifest.extra)
    doc.update({
        "classes": list(manifest.classes),
        "stream1_shape": list(manifest.stream1_shape),
        "stream2_shape": list(manifest.stream2_shape),
        "records": [r.to_dict() for r in manifest.records],
    })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("classes", "stream1_shape", "stream2_shape", "records"):
        if key not in doc:
            raise ManifestError(f"{path}: missing manifest key {key!r}")
    if not isinstance(doc["records"], list) or not all(isinstance(r, dict)
                                                       for r in doc["records"]):
        raise ManifestError(f"{path}: 'records' must be a list of objects")
    records = []
    for i, rec in enumerate(doc["records"]):
        missing = {"id", "label", "class_name", "stream1", "stream2", "split"} - set(rec)
        if missing:
            raise ManifestError(f"{path}: record {i} missing fields {sorted(missing)}")
        if rec["split"] not in SPLITS:
            raise ManifestError(f"{path}: record {rec['id']!r} has bad split {rec['split']!r}")
        records.append(FeatureRecord(id=str(rec["id"]), label=int(rec["label"]),
                                     class_name=str(rec["class_name"]),
                                     stream1=str(rec["stream1"]), stream2=str(rec["stream2"]),
                                     split=rec["split"]))
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    extra = {k: v for k, v in doc.items()
             if k not in ("classes", "stream1_shape", "stream2_shape", "records")}
    return Manifest(classes=[str(c) for c in doc["classes"]],
                    stream1_shape=tuple(int(d) for d in doc["stream1_shape"]),
                    stream2_shape=tuple(int(d) for d in doc["stream2_shape"]),
                    records=records, base_dir=path.parent, extra=extra)


@dataclass
class ValidationReport:
    problems: list

    @property
    def ok(self):
        return not self.problems

    def kinds(self):
        return {kind for kind, _ in self.problems}

    def messages(self):
        return [msg for _, msg in self.problems]


def _shape_matches(dims, declared):
    if tuple(dims) == tuple(declared):
        return True
    # a (W, H, D) file satisfies a declared (L, D) when W*H == L
    return (len(dims) == 3 and len(declared) == 2
            and dims[0] * dims[1] == declared[0] and dims[2] == declared[1])


def validate_manifest(manifest):
    """Itemized consistency check: ids, labels, files, and declared shapes."""
    problems = []
    seen = set()
    for rec in manifest.records:
        if rec.id in seen:
            problems.append(("duplicate_id", f"duplicate sample id {rec.id!r}"))
        seen.add(rec.id)
        if not 0 <= rec.label < manifest.k:
            problems.append(("label_range",
                             f"record {rec.id!r}: label {rec.label} not in [0, {manifest.k})"))
        elif manifest.classes[rec.label] != rec.class_name:
            problems.append(("label_mismatch",
                             f"record {rec.id!r}: class name {rec.class_name!r} is not "
                             f"class {rec.label} ({manifest.classes[rec.label]!r})"))
        for stream, declared in (("stream1", manifest.stream1_shape),
                                 ("stream2", manifest.stream2_shape)):
            rel = getattr(rec, stream)
            fpath = manifest.base_dir / rel
            if not fpath.is_file():
                problems.append(("missing_file", f"record {rec.id!r}: {stream} file missing: {rel}"))
                continue
            try:
                dims = read_tensor_header(fpath)
            except TensorFormatError as exc:
                problems.append(("bad_tensor", f"record {rec.id!r}: {exc}"))
                continue
            if not _shape_matches(dims, declared):
                problems.append(("shape_mismatch",
                                 f"record {rec.id!r}: {stream} has shape {tuple(dims)}, "
                                 f"declared {tuple(declared)}"))
    return ValidationReport(problems=problems)


# ---------------------------------------------------------------------------
# in-memory dataset

@dataclass
class Sample:
    id: str
    label: int
    split: str
    stream1: np.ndarray
    stream2: np.ndarray


@dataclass
class Dataset:
    class_names: list
    stream1_shape: tuple
    stream2_shape: tuple
    samples: list

    @property
    def k(self):
        return len(self.class_names)

    def split(self, name):
        return [s for s in self.samples if s.split == name]


def _load_stream(manifest, rel, declared, rec_id, stream):
    arr = read_tensor(manifest.base_dir / rel)
    if arr.ndim == 3:
        arr = reshape(arr, (arr.shape[0] * arr.shape[1], arr.shape[2]))
    if arr.shape != tuple(declared):
        raise ManifestError(f"record {rec_id!r}: {stream} has shape {arr.shape}, "
                            f"declared {tuple(declared)}")
    return arr


def load_dataset(manifest_path):
    """Load every record's tensors into memory, reshaping (W, H, D) maps to (L, D)."""
    manifest = load_manifest(manifest_path)
    samples = []
    for rec in manifest.records:
        s1 = _load_stream(manifest, rec.stream1, manifest.stream1_shape, rec.id, "stream1")
        s2 = _load_stream(manifest, rec.stream2, manifest.stream2_shape, rec.id, "stream2")
        samples.append(Sample(id=rec.id, label=rec.label, split=rec.split,
                              stream1=s1, stream2=s2))
    return Dataset(class_names=manifest.classes, stream1_shape=manifest.stream1_shape,
                   stream2_shape=manifest.stream2_shape, samples=samples)


def stack_samples(samples):
    """Batch a list of samples into (stream1, stream2, labels, ids) arrays."""
    s1 = np.stack([s.stream1 for s in samples], axis=0)
    s2 = np.stack([s.stream2 for s in samples], axis=0)
    labels = np.asarray([s.label for s in samples], dtype=np.int64)
    return s1, s2, labels, [s.id for s in samples]


# ---------------------------------------------------------------------------
# synthetic cross-stream corpus

def split_factors(k):
    """Factor k classes into (m1, m2) codes, one factor per stream."""
    m1 = math.isqrt(k)
    if m1 * m1 < k:
        m1 += 1
    m2 = (k + m1 - 1) // m1
    return m1, m2


def _nearest_mean_accuracy(train_x, train_y, test_x, test_y, k):
    means = np.stack([train_x[train_y == c].mean(axis=0) for c in range(k)])
    scores = test_x @ means.T - 0.5 * (means * means).sum(axis=1)
    pred = scores.argmax(axis=1)
    return float((pred == test_y).mean())


def generate_synthetic(out_dir, k=4, n_per_class=40, stream1_shape=(12, 8),
                       stream2_shape=(12, 8), seed=0, noise=1.0, amplitude=1.0):
    """Write a deterministic two-stream corpus whose class identity needs both streams.

    Class c carries code (c mod m1, c div m1); the first code digit selects a
    Gaussian template planted in stream 1, the second a template in stream 2,
    so each stream alone reveals only its digit.  A nearest-class-mean probe
    is run at generation time to confirm that single-stream accuracy trails
    the combined probe (only checkable when both factors exceed 1).

    Returns (manifest_path, manifest).
    """
    if k < 2 or n_per_class < 2:
        raise ValueError("need k >= 2 and n_per_class >= 2")
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    m1, m2 = split_factors(k)
    root = Rng(seed).child("synthetic")
    templates1 = [root.child("template", 1, v).normal(size=stream1_shape) * amplitude
                  for v in range(m1)]
    templates2 = [root.child("template", 2, v).normal(size=stream2_shape) * amplitude
                  for v in range(m2)]
    class_names = [f"class_{c}" for c in range(k)]
    records = []
    arrays = {}
    for c in range(k):
        a, b = c % m1, c // m1
        for idx in range(n_per_class):
            r = root.child("sample", c, idx)
            s1 = (templates1[a] + r.child(1).normal(size=stream1_shape) * noise).astype(np.float32)
            s2 = (templates2[b] + r.child(2).normal(size=stream2_shape) * noise).astype(np.float32)
            sid = f"{class_names[c]}_{idx:04d}"
            rel1 = f"tensors/{sid}_s1.fts"
            rel2 = f"tensors/{sid}_s2.fts"
            write_tensor(out_dir / rel1, s1)
            write_tensor(out_dir / rel2, s2)
            records.append(FeatureRecord(id=sid, label=c, class_name=class_names[c],
                                         stream1=rel1, stream2=rel2,
                                         split="train" if idx % 2 == 0 else "test"))
            arrays[sid] = (s1, s2)

    train = [r for r in records if r.split == "train"]
    test = [r for r in records if r.split == "test"]
    def _flat(recs, which):
        return np.stack([arrays[r.id][which].ravel() for r in recs]).astype(np.float64)
    ytr = np.asarray([r.label for r in train])
    yte = np.asarray([r.label for r in test])
    acc1 = _nearest_mean_accuracy(_flat(train, 0), ytr, _flat(test, 0), yte, k)
    acc2 = _nearest_mean_accuracy(_flat(train, 1), ytr, _flat(test, 1), yte, k)
    both_tr = np.concatenate([_flat(train, 0), _flat(train, 1)], axis=1)
    both_te = np.concatenate([_flat(test, 0), _flat(test, 1)], axis=1)
    acc_both = _nearest_mean_accuracy(both_tr, ytr, both_te, yte, k)
    # the probe needs enough samples per class for stable mean estimates;
    # below that the corpus is still written but the guarantee is not asserted
    if m1 > 1 and m2 > 1 and n_per_class >= 8:
        if not (acc1 < acc_both and acc2 < acc_both):
            raise RuntimeError(
                f"synthetic corpus failed its cross-stream guarantee: probe accuracies "
                f"stream1={acc1:.3f} stream2={acc2:.3f} combined={acc_both:.3f}")

    manifest = Manifest(
        classes=class_names, stream1_shape=tuple(stream1_shape),
        stream2_shape=tuple(stream2_shape), records=records, base_dir=out_dir,
        extra={"generator": {
            "seed": seed, "k": k, "n_per_class": n_per_class,
            "factors": [m1, m2], "noise": noise, "amplitude": amplitude,
            "probe_accuracy": {"stream1": acc1, "stream2": acc2, "combined": acc_both},
        }})
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path, manifest
