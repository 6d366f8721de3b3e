"""Training with a bounded tracked set of weights.

Only the k weights with the largest accumulated updates are stored; every
other weight is regenerated on demand from the seeded initializer, so a
model can be trained while persisting a small fraction of its parameters.
"""

from .baselines import DenseOptState, MagnitudePruneState
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .data import Dataset, IdxFormatError, load_mnist, parse_idx, read_idx_file, synth_blobs
from .harness import (DivergenceError, RunConfig, compare_runs, load_config,
                      lr_at, parse_config_text, resolve_dataset, train_run)
from .initgen import InitSpec, ParamId, TensorLayout, derive_state, unit_normals, xorshift32
from .metrics import (AccessLedger, EnergyModel, PcaResult, TrajectorySnapshot,
                      gradient_histogram, pca_project)
from .network import (Activation, ConfigError, DenseParams, NetworkSpec,
                      NonFiniteGradientError, backward, evaluate, forward,
                      from_dims, loss_softmax_ce)
from .tracked import StepStats, TrackedEntry, TrackedSet

__version__ = "0.1.0"

__all__ = [
    "Activation", "AccessLedger", "CheckpointError", "ConfigError", "Dataset",
    "DenseOptState", "DenseParams", "DivergenceError", "EnergyModel",
    "IdxFormatError", "InitSpec", "MagnitudePruneState", "NetworkSpec",
    "NonFiniteGradientError", "ParamId", "PcaResult", "RunConfig", "StepStats",
    "TensorLayout", "TrackedEntry", "TrackedSet", "TrajectorySnapshot",
    "backward", "compare_runs", "derive_state", "evaluate", "forward",
    "from_dims", "gradient_histogram", "load_checkpoint", "load_config",
    "load_mnist", "loss_softmax_ce", "lr_at", "parse_config_text", "parse_idx",
    "pca_project", "read_header", "read_idx_file", "resolve_dataset",
    "save_checkpoint", "synth_blobs", "train_run", "unit_normals", "xorshift32",
]
