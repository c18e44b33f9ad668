"""Sparse tensor completion with group-fairness tooling.

Core pieces: COO tensors with a sensitive mode (``sparse``), CP and
compact convolutional reconstruction models (``models``), a minibatch
trainer with fairness penalties (``training``), gap metrics
(``metrics``), the neighbor-graph augmentation pipeline (``augment``),
and scikit-learn style wrappers (``estimators``).
"""

from .augment import (
    AugmentedTensor,
    FairGraph,
    assemble,
    build_graph,
    generate_entries,
)
from .errors import (
    ConfigurationError,
    DegenerateFactorError,
    DuplicateEntryError,
    EntryBoundsError,
    FairtensorError,
    MissingLabelError,
    TensorFormatError,
    TrainingDivergedError,
)
from .estimators import (
    CostcoCompleter,
    CPCompleter,
    FairnessAugmentedCompleter,
)
from .metrics import EvalResult, GroupStats, evaluate, made, madr, mse
from .models import (
    ConvParams,
    CostcoModel,
    CPModel,
    entry_gradients,
    init_model,
    load_model,
    predict_cp,
    predict_costco,
    predict_generic,
    save_model,
)
from .sparse import (
    DataSplit,
    SensitiveContext,
    SparseTensor,
    downsample_minority,
    load_sensitive,
    load_tensor,
    save_sensitive,
    save_tensor,
    split,
)
from .synthetic import SynthSpec, generate
from .training import (
    TrainConfig,
    TrainReport,
    loss_plain,
    penalty_coupling,
    penalty_made,
    penalty_madr,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedTensor",
    "ConfigurationError",
    "ConvParams",
    "CostcoCompleter",
    "CostcoModel",
    "CPCompleter",
    "CPModel",
    "DataSplit",
    "DegenerateFactorError",
    "DuplicateEntryError",
    "EntryBoundsError",
    "EvalResult",
    "FairGraph",
    "FairnessAugmentedCompleter",
    "FairtensorError",
    "GroupStats",
    "MissingLabelError",
    "SensitiveContext",
    "SparseTensor",
    "SynthSpec",
    "TensorFormatError",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainReport",
    "assemble",
    "build_graph",
    "downsample_minority",
    "entry_gradients",
    "evaluate",
    "generate",
    "generate_entries",
    "init_model",
    "load_model",
    "load_sensitive",
    "load_tensor",
    "loss_plain",
    "made",
    "madr",
    "mse",
    "penalty_coupling",
    "penalty_made",
    "penalty_madr",
    "predict_cp",
    "predict_costco",
    "predict_generic",
    "save_model",
    "save_sensitive",
    "save_tensor",
    "split",
    "train",
]
