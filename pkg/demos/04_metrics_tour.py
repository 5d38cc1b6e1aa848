"""Tour of the evaluation suite: confusion matrix, macro-averaged metrics,
multi-class Matthews correlation, and the rendered report files.

Builds a plausible 8-class confusion pattern (most mass on the diagonal, the
classic z-line/esophagitis confusion off it) and renders all three report
artifacts.
"""

import tempfile
from pathlib import Path

import numpy as np

from relfuse import compute_metrics, confusion, render_report

CLASSES = [
    "dyed-lifted-polyps", "dyed-resection-margins", "esophagitis", "normal-cecum",
    "normal-pylorus", "normal-z-line", "polyps", "ulcerative-colitis",
]

rng = np.random.default_rng(0)
labels = rng.integers(0, 8, size=2000)
predictions = labels.copy()
flip = rng.uniform(size=2000)
# z-line and esophagitis trade mistakes; everything else gets sparse noise
z, eso = CLASSES.index("normal-z-line"), CLASSES.index("esophagitis")
predictions[(labels == z) & (flip < 0.25)] = eso
predictions[(labels == eso) & (flip < 0.20)] = z
noise = flip > 0.97
predictions[noise] = rng.integers(0, 8, size=int(noise.sum()))

cm = confusion(labels, predictions, 8, CLASSES)
report = compute_metrics(cm)

print(f"accuracy    {report.accuracy:.4f}")
print(f"precision   {report.precision:.4f}  (macro)")
print(f"recall      {report.recall:.4f}  (macro)")
print(f"f1          {report.f1:.4f}  (macro)")
print(f"mcc         {report.mcc:.4f}")
print(f"specificity {report.specificity:.4f}  (macro)")

print("\nweakest classes by f1:")
for cls in sorted(report.per_class, key=lambda c: c.f1)[:2]:
    print(f"  {cls.name}: precision={cls.precision:.3f} recall={cls.recall:.3f}")

out = Path(tempfile.mkdtemp(prefix="metrics_tour_"))
paths = render_report(report, cm, out)
print("\nwrote:")
for p in paths:
    print(f"  {p}")
print("\n" + (out / "report.txt").read_text())
