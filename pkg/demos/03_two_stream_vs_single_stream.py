"""The central behavioral claim at desk scale: fusing two feature streams
through the relational network beats either stream alone.

Generates a synthetic corpus whose class identity is split across the two
streams (each stream alone reveals only half the class code), then trains the
two-stream model and both single-stream ablations and compares test accuracy.
"""

import tempfile
from pathlib import Path

from relfuse import ModelConfig, generate_synthetic, load_dataset
from relfuse.training import TrainConfig, train

workdir = Path(tempfile.mkdtemp(prefix="two_stream_demo_"))
manifest_path, manifest = generate_synthetic(
    workdir, k=4, n_per_class=80, stream1_shape=(12, 8), stream2_shape=(12, 8),
    seed=0, amplitude=3.0)
probe = manifest.extra["generator"]["probe_accuracy"]
print(f"corpus: {len(manifest.records)} samples, linear-probe accuracy "
      f"stream1={probe['stream1']:.2f} stream2={probe['stream2']:.2f} "
      f"combined={probe['combined']:.2f}")

dataset = load_dataset(manifest_path)

for mode in ("two_stream", "stream1_only", "stream2_only"):
    config = ModelConfig(k=4, stream1_shape=(12, 8), stream2_shape=(12, 8), mode=mode,
                         conv_filters=8, fg_hidden=(16,), fg_out=16, fh_hidden=(16,),
                         relation_dim=16, lstm_hidden=16, fc_dims=(16, 8, 4),
                         seed=0).validate()
    result = train(dataset, config, TrainConfig(epochs=30, batch_size=16, lr=0.003, seed=0))
    last = result.report.records[-1]
    print(f"{mode:<14s} train acc {last.train_accuracy:.3f}  "
          f"test acc {last.test_metrics['accuracy']:.3f}  "
          f"test MCC {last.test_metrics['mcc']:+.3f}")

print("\nEach single-stream model can only recover its half of the class code"
      " (ceiling 50% here); the fused model recovers the full label.")
