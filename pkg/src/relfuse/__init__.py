"""Two-stream relational fusion classifier.

A numpy implementation of a classifier that encodes two feature streams with
1D-conv encoders, fuses them through a pairwise relational network, and
decodes with an LSTM plus fully connected layers.  Everything down to the
gradients is written out explicitly and verified against finite differences.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data_io import (Dataset, FeatureRecord, Manifest, generate_synthetic,
                      load_dataset, load_manifest, read_tensor,
                      validate_manifest, write_tensor)
from .metrics import (ConfusionMatrix, MetricReport, compute_metrics, confusion,
                      multiclass_mcc, render_report)
from .model import (ConfigError, ForwardResult, ModelConfig, Prediction,
                    backward_full, forward, init_model, predict, predict_probs)
from .optim import OptimizerState, init_state, rmsprop_step
from .relation import (pair_table, relation_backward, relation_forward,
                       relation_forward_single)
from .rng import Rng
from .tensor_ops import (NonFiniteError, ShapeError, ascending_sum, matmul,
                         reduce_sum, reshape)
from .training import TrainConfig, TrainingAbort, TrainReport, evaluate, train

__version__ = "0.1.0"
