"""Federated data-collaboration learning: simulator, baselines, and audit tooling."""

from .bus import CommLedger, LedgerRecord, MessageBus
from .datahub import (
    AnchorSet,
    Block,
    CsvSchema,
    LabeledTable,
    PartitionedDataset,
    Task,
    feature_ranges,
    generate_anchor,
    load_csv,
    load_idx_images,
    partition_iid,
)
from .nnet import (
    EvalReport,
    MlpModel,
    TrainConfig,
    evaluate,
    fedavg_aggregate,
    forward,
    grad_check,
    init_model,
    load_model,
    save_model,
    train_local,
)
from .numkit import (
    SvdFactors,
    lstsq_multi,
    pca_basis,
    principal_angles,
    random_orthogonal,
    truncated_svd,
)
from .protocol import (
    FedDclRun,
    IntegratedModel,
    ProtocolConfig,
    run_dc_baseline,
    run_feddcl,
    run_federated,
    verify_theorem1,
)
from .bench import MethodResult, RunConfig, emit_history, load_config, run_experiment
from .rng import RngStream
from .synth import SynthSpec, synth_dataset

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "Block",
    "CommLedger",
    "CsvSchema",
    "EvalReport",
    "FedDclRun",
    "IntegratedModel",
    "LabeledTable",
    "LedgerRecord",
    "MessageBus",
    "MethodResult",
    "MlpModel",
    "PartitionedDataset",
    "ProtocolConfig",
    "RngStream",
    "RunConfig",
    "SvdFactors",
    "SynthSpec",
    "Task",
    "TrainConfig",
    "emit_history",
    "evaluate",
    "feature_ranges",
    "fedavg_aggregate",
    "forward",
    "generate_anchor",
    "grad_check",
    "init_model",
    "load_config",
    "load_csv",
    "load_idx_images",
    "load_model",
    "lstsq_multi",
    "partition_iid",
    "pca_basis",
    "principal_angles",
    "random_orthogonal",
    "run_dc_baseline",
    "run_experiment",
    "run_feddcl",
    "run_federated",
    "save_model",
    "synth_dataset",
    "train_local",
    "truncated_svd",
    "verify_theorem1",
]
