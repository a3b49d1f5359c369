"""Training side of the step-relevance scorer.

Builds counterfactual keep/drop labels by re-sampling a policy oracle
with and without each past step, trains a small pair encoder with a
linear-probe-then-fine-tune schedule, and exports the result as the
portable artifact directory the compression engine consumes.
"""

from .canon import CANON_VERSION, canonicalize
from .labeling import (
    LabelConfig,
    LabelRecord,
    LabeledDataset,
    build_dataset,
    counterfactual_texts,
    label_pair,
    read_records,
    record_seed,
    split_trajectory_ids,
    write_records,
)
from .model import ModelConfig, PairEncoder, export_weights
from .oracle import LiveOracle, MockOracle, OracleError, PolicyOracle
from .training import (
    TrainConfig,
    TrainReport,
    TrainingError,
    build_tokenizer,
    pair_text,
    read_probes,
    train_and_export,
)

__version__ = "0.1.0"

__all__ = [
    "CANON_VERSION",
    "LabelConfig",
    "LabelRecord",
    "LabeledDataset",
    "LiveOracle",
    "MockOracle",
    "ModelConfig",
    "OracleError",
    "PairEncoder",
    "PolicyOracle",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "build_dataset",
    "build_tokenizer",
    "canonicalize",
    "counterfactual_texts",
    "export_weights",
    "label_pair",
    "pair_text",
    "read_probes",
    "read_records",
    "record_seed",
    "split_trajectory_ids",
    "train_and_export",
    "write_records",
]
