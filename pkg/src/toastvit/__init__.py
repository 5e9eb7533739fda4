"""toastvit: coupled attention-head pruning and token channel selection
for ViT-style transformers, with redundancy diagnostics and an analytic
FLOPs accountant."""

from .analysis import (
    RedundancyAnalyzer,
    RedundancyReport,
    activation_sparsity,
    channel_r2,
    effective_rank_ratio,
    redundancy_report,
)
from .archive import ArchiveError, read_archive, read_manifest, write_archive
from .engine import ForwardTrace, forward, layer_norm
from .flops import FlopsReport, OpCounter, count_flops
from .linalg import (
    geometric_median,
    geometric_median_objective,
    gelu,
    least_squares,
    matmul,
    round_half_up,
    singular_values,
    stable_softmax_rows,
)
from .model import (
    BlockWeights,
    ModelConfig,
    VitModel,
    deit_config,
    load_model,
    model_to_tensors,
    save_model,
    tensors_to_model,
)
from .pruning import (
    HeadPruner,
    PruningPlan,
    apply_plan,
    build_plan,
    coupled_group,
    coupled_importance,
    pruned_head_dim,
)
from .tcs import (
    ChannelSelection,
    LayerTcsPolicy,
    TcsPolicy,
    TokenChannelSelector,
    default_policy,
    ffn_forward_tcs,
    keep_count,
    sample_tokens,
    select_channels,
    unified_importance,
)
from .validation import ShapeError

__version__ = "0.1.0"

__all__ = [
    "ArchiveError",
    "BlockWeights",
    "ChannelSelection",
    "FlopsReport",
    "ForwardTrace",
    "HeadPruner",
    "LayerTcsPolicy",
    "ModelConfig",
    "OpCounter",
    "PruningPlan",
    "RedundancyAnalyzer",
    "RedundancyReport",
    "ShapeError",
    "TcsPolicy",
    "TokenChannelSelector",
    "VitModel",
    "activation_sparsity",
    "apply_plan",
    "build_plan",
    "channel_r2",
    "count_flops",
    "coupled_group",
    "coupled_importance",
    "default_policy",
    "deit_config",
    "effective_rank_ratio",
    "ffn_forward_tcs",
    "forward",
    "gelu",
    "geometric_median",
    "geometric_median_objective",
    "keep_count",
    "layer_norm",
    "least_squares",
    "load_model",
    "matmul",
    "model_to_tensors",
    "pruned_head_dim",
    "read_archive",
    "read_manifest",
    "redundancy_report",
    "round_half_up",
    "sample_tokens",
    "save_model",
    "select_channels",
    "singular_values",
    "stable_softmax_rows",
    "tensors_to_model",
    "unified_importance",
    "write_archive",
]
