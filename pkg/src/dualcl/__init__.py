"""Gradient-based competitive learning with vanilla and dual layers."""

from dualcl.analysis import (
    DecayFit,
    DualityReport,
    FlowPrediction,
    SubspaceReport,
    duality_checks,
    fit_decay_rates,
    predict_base_flow,
    predict_dual_flow,
    subspace_residuals,
)
from dualcl.datasets import (
    Dataset,
    GeneratorSpec,
    gen_circles,
    gen_madelon,
    gen_moons,
    gen_spiral,
    load_csv,
    make,
    normalize,
    save_csv,
)
from dualcl.layers import (
    DclLayer,
    DeepDcl,
    DenseLayer,
    VclLayer,
    dcl_forward,
    deep_forward,
    glorot_init,
    new_dcl,
    new_deep_dcl,
    new_vcl,
    vcl_prototypes,
)
from dualcl.linalg import SvdFactors, edm, edm_gram, gram, pseudoinverse, svd
from dualcl.loss import (
    EdgeMatrix,
    LossBreakdown,
    VoronoiAssignment,
    assign,
    chl_edges,
    connected_components,
    grad_dcl,
    grad_deep,
    grad_vcl,
    prune_lonely,
    quantization,
    total_loss,
    valid_prototypes,
)
from dualcl.trainer import (
    ExperimentSpec,
    MetricsTrace,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    grid_search,
    run_experiment,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DecayFit",
    "DualityReport",
    "FlowPrediction",
    "SubspaceReport",
    "duality_checks",
    "fit_decay_rates",
    "predict_base_flow",
    "predict_dual_flow",
    "subspace_residuals",
    "Dataset",
    "GeneratorSpec",
    "gen_circles",
    "gen_madelon",
    "gen_moons",
    "gen_spiral",
    "load_csv",
    "make",
    "normalize",
    "save_csv",
    "DclLayer",
    "DeepDcl",
    "DenseLayer",
    "VclLayer",
    "dcl_forward",
    "deep_forward",
    "glorot_init",
    "new_dcl",
    "new_deep_dcl",
    "new_vcl",
    "vcl_prototypes",
    "SvdFactors",
    "edm",
    "edm_gram",
    "gram",
    "pseudoinverse",
    "svd",
    "EdgeMatrix",
    "LossBreakdown",
    "VoronoiAssignment",
    "assign",
    "chl_edges",
    "connected_components",
    "grad_dcl",
    "grad_deep",
    "grad_vcl",
    "prune_lonely",
    "quantization",
    "total_loss",
    "valid_prototypes",
    "ExperimentSpec",
    "MetricsTrace",
    "TrainConfig",
    "TrainingDiverged",
    "accuracy",
    "grid_search",
    "run_experiment",
    "train",
    "__version__",
]
