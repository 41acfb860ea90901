"""Temporally-aware vertex embeddings for snapshot sequences, with
next-snapshot link prediction, ablations, and synthetic benchmarks."""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    IngestionError,
    NoNewEdges,
    ShapeError,
    StateError,
    TemplinkError,
)
from .graphs import (
    ColumnSchema,
    Snapshot,
    TemporalGraph,
    ingest_edge_list,
    new_edges,
    read_snapshot_file,
    write_snapshot_file,
)
from .metrics import (
    EvalSet,
    MetricsRecord,
    auc,
    average_precision,
    build_full_graph_evalset,
    build_new_edge_evalset,
    score_evalset,
    threshold_precision,
)
from .model import (
    ModelConfig,
    build_model,
    count_parameters,
    decode,
    forward_sequence,
    forward_step,
    load_checkpoint,
    preset_config,
    save_checkpoint,
)
from .rollout import RolloutResult, history_cut, rollout, trained_rollout
from .synthetic import (
    RewireConfig,
    SbmConfig,
    generate_rewire,
    generate_sbm,
    rewire_step,
)
from .training import (
    SweepResult,
    TargetResult,
    TrainConfig,
    evaluate_target,
    rolling_evaluation,
    train_on_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnSchema",
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "EvalSet",
    "IngestionError",
    "MetricsRecord",
    "ModelConfig",
    "NoNewEdges",
    "RewireConfig",
    "RolloutResult",
    "SbmConfig",
    "ShapeError",
    "Snapshot",
    "StateError",
    "SweepResult",
    "TargetResult",
    "TemplinkError",
    "TemporalGraph",
    "TrainConfig",
    "auc",
    "average_precision",
    "build_full_graph_evalset",
    "build_model",
    "build_new_edge_evalset",
    "count_parameters",
    "decode",
    "evaluate_target",
    "forward_sequence",
    "forward_step",
    "generate_rewire",
    "generate_sbm",
    "history_cut",
    "ingest_edge_list",
    "load_checkpoint",
    "new_edges",
    "preset_config",
    "read_snapshot_file",
    "rewire_step",
    "rolling_evaluation",
    "rollout",
    "save_checkpoint",
    "score_evalset",
    "threshold_precision",
    "trained_rollout",
    "train_on_sequence",
    "write_snapshot_file",
]
