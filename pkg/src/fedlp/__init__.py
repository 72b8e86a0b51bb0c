"""Deterministic federated-learning simulator with layer-wise pruning.

Supports plain federated averaging, a probabilistic layer-preserving scheme
for homogeneous clients, and a layer-count-assigned scheme for heterogeneous
clients, with exact communication/computation accounting and a Monte-Carlo
verifier for the expected-gradient scaling of random layer masking.
"""

__version__ = "0.1.0"

from .aggregation import AggregationWeights, GlobalModelState, aggregate_layerwise, distribute, fedavg_aggregate
from .config import DataConfig, ExperimentConfig, load_config, load_config_from_dict
from .data import (
    Dataset,
    Partition,
    PartitionSpec,
    generate_synthetic,
    load_idx,
    partition_dirichlet,
    partition_iid,
    partition_shards,
)
from .metrics import Prop1Report, RoundMetrics, comm_accounting, emit_csv, verify_prop1
from .model import (
    GradientSet,
    LayerBlock,
    LayeredModel,
    backward,
    evaluate_accuracy,
    flops_count,
    forward,
    make_mlp,
    param_count,
    sgd_step,
)
from .orchestrator import ClientState, ExperimentResult, FederatedSystem, run_experiment, select_participants
from .pruning import (
    HeteroAssignment,
    LayerMask,
    LprConfig,
    PrunedPayload,
    assign_hetero,
    build_hetero_model,
    draw_mask,
    lc_peaked,
    lc_uniform,
    prune_model,
)
from .rng import substream

__all__ = [
    "AggregationWeights",
    "ClientState",
    "DataConfig",
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "FederatedSystem",
    "GlobalModelState",
    "GradientSet",
    "HeteroAssignment",
    "LayerBlock",
    "LayerMask",
    "LayeredModel",
    "LprConfig",
    "Partition",
    "PartitionSpec",
    "Prop1Report",
    "PrunedPayload",
    "RoundMetrics",
    "aggregate_layerwise",
    "assign_hetero",
    "backward",
    "build_hetero_model",
    "comm_accounting",
    "distribute",
    "draw_mask",
    "emit_csv",
    "evaluate_accuracy",
    "fedavg_aggregate",
    "flops_count",
    "forward",
    "generate_synthetic",
    "lc_peaked",
    "lc_uniform",
    "load_config",
    "load_config_from_dict",
    "load_idx",
    "make_mlp",
    "param_count",
    "partition_dirichlet",
    "partition_iid",
    "partition_shards",
    "prune_model",
    "run_experiment",
    "select_participants",
    "sgd_step",
    "substream",
    "verify_prop1",
]
