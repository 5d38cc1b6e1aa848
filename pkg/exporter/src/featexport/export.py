"""Export intermediate backbone activations for a class-per-folder image corpus.

Per image, two FTS1 tensor files are written (one per tap point) and one
record is appended to a manifest JSON matching the classifier's schema:
a header with the class-name table and the declared (L, D) stream shapes,
plus per-sample records with paths relative to the manifest directory.
"""

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backbone import DEFAULT_TAPS, IMAGENET_MEAN, IMAGENET_STD, Extractor
from .fts import FtsError, read_fts, write_fts

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# normative activation shapes (W, H, D); taps are config but must produce these
EXPECTED_SHAPES = ((14, 14, 1024), (14, 14, 256))


@dataclass
class ExportSpec:
    image_dir: Path
    out_dir: Path
    backbone: str = "resnet50"
    weights_path: Path | None = None
    taps: tuple = DEFAULT_TAPS
    image_size: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    seed: int = 0
    split_file: Path | None = None  # JSON {image stem or relative path: "train"|"test"}
    expected_shapes: tuple = EXPECTED_SHAPES


def discover_classes(image_dir):
    """Class folders in sorted name order; the order defines the label ints."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {image_dir}")
    classes = sorted(p.name for p in image_dir.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"no class folders under {image_dir}")
    return classes


def preprocess(path, size, mean, std):
    """PIL load -> RGB -> bilinear resize -> normalized float32 (3, H, W)."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _load_splits(split_file):
    if split_file is None:
        return {}
    return json.loads(Path(split_file).read_text(encoding="utf-8"))


def export(spec):
    """Run the corpus through the backbone; returns the manifest path.

    Unreadable images are skipped with a warning and excluded from the
    manifest; a tap point producing an unexpected shape is a fatal error.
    """
    classes = discover_classes(spec.image_dir)
    splits = _load_splits(spec.split_file)
    extractor = Extractor(spec.backbone, spec.weights_path, spec.seed, spec.taps)
    out_dir = Path(spec.out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for label, cls in enumerate(classes):
        folder = Path(spec.image_dir) / cls
        images = sorted(p for p in folder.iterdir()
                        if p.suffix.lower() in IMAGE_SUFFIXES)
        for img_path in images:
            try:
                chw = preprocess(img_path, spec.image_size, spec.mean, spec.std)
            except (OSError, UnidentifiedImageError) as exc:
                print(f"warning: skipping unreadable image {img_path}: {exc}",
                      file=sys.stderr)
                continue
            acts = extractor.run(chw)
            sid = f"{cls}__{img_path.stem}"
            rels = []
            for si, act in enumerate(acts, start=1):
                expected = spec.expected_shapes[si - 1]
                if act.shape != expected:
                    raise ValueError(
                        f"tap {spec.taps[si - 1]!r} produced shape {act.shape}, "
                        f"expected {expected}; pick tap points matching the "
                        f"configured shapes")
                rel = f"tensors/{sid}_s{si}.fts"
                write_fts(out_dir / rel, act)
                rels.append(rel)
            split = splits.get(sid) or splits.get(img_path.name) or splits.get(
                f"{cls}/{img_path.name}") or "train"
            records.append({"id": sid, "label": label, "class_name": cls,
                            "stream1": rels[0], "stream2": rels[1], "split": split})
    if not records:
        raise ValueError(f"no readable images under {spec.image_dir}")
    s1, s2 = spec.expected_shapes
    manifest = {
        "classes": classes,
        "stream1_shape": [s1[0] * s1[1], s1[2]],
        "stream2_shape": [s2[0] * s2[1], s2[2]],
        "records": records,
        "exporter": {"backbone": spec.backbone, "taps": list(spec.taps),
                     "image_size": spec.image_size, "seed": spec.seed,
                     "weights": str(spec.weights_path) if spec.weights_path else None},
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest_path


@dataclass
class VerifyReport:
    per_class: dict = field(default_factory=dict)
    problems: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.problems


def _shape_matches(dims, declared):
    if list(dims) == list(declared):
        return True
    return (len(dims) == 3 and dims[0] * dims[1] == declared[0]
            and dims[2] == declared[1])


def verify_export(manifest_path):
    """Re-read every exported tensor: shape, finiteness, and class balance."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    report = VerifyReport(per_class={c: 0 for c in doc["classes"]})
    for rec in doc["records"]:
        ok = True
        for stream, declared in (("stream1", doc["stream1_shape"]),
                                 ("stream2", doc["stream2_shape"])):
            fpath = base / rec[stream]
            try:
                arr = read_fts(fpath)
            except (FileNotFoundError, FtsError) as exc:
                report.problems.append(f"record {rec['id']!r}: {exc}")
                ok = False
                continue
            if not _shape_matches(arr.shape, declared):
                report.problems.append(
                    f"record {rec['id']!r}: {stream} shape {arr.shape} does not "
                    f"satisfy declared {tuple(declared)}")
                ok = False
            if not np.all(np.isfinite(arr)):
                report.problems.append(f"record {rec['id']!r}: non-finite values in {stream}")
                ok = False
        if not 0 <= rec["label"] < len(doc["classes"]):
            report.problems.append(f"record {rec['id']!r}: label {rec['label']} out of range")
            ok = False
        if ok:
            report.per_class[rec["class_name"]] += 1
    return report
