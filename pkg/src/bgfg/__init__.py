"""Background reconstruction and foreground segmentation toolkit.

Two-stage pipeline on a small from-scratch autodiff core: stage 1 restores
the empty background of a scene, stage 2 segments moving foreground from the
frame stacked with that restored background.  Classic subspace baselines,
synthetic data generation, and an evaluation harness round out the package.
"""

from .autodiff import (
    ConvSpec,
    Graph,
    SgdState,
    Tensor,
    apply_activation,
    batchnorm2d,
    bilinear_resize,
    concat_channels,
    conv2d,
    leaky_relu,
    masked_nll_mean,
    relu,
    resize_bilinear,
    sgd_step,
    softmax_channels,
    squared_error_sum,
    tanh,
    transposed_conv2d,
)
from .baselines import (
    DEFAULT_SWEEP_GRID,
    PcaBackgroundModel,
    RpcaState,
    SweepResult,
    pca_background,
    pca_fit,
    rpca_init,
    rpca_update,
    threshold_classify,
    threshold_sweep,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    FrameSample,
    DatasetSplit,
    SpriteSpec,
    SyntheticSceneSpec,
    load_sequence,
    map_gt_labels,
    paste_objects,
    split_dataset,
    synth_sequence,
    write_sequence,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
    ShapeError,
    ToolkitError,
)
from .evaluation import EvalReport, aggregate_mean, evaluate_dataset, f_measure
from .nets import Network, NetworkSpec
from .pipeline import (
    DESK_PIPELINE,
    FULL_PIPELINE,
    PipelineProfile,
    StepSpec,
    TrainingConfig,
    TwoStagePipeline,
    bilinear_bridge,
    desk_training_config,
    full_training_config,
    infer_end_to_end,
    joint_loss,
    run_training_schedule,
)
from .reconstruction import (
    DESK_ENCODER_DECODER,
    FULL_ENCODER_DECODER,
    EncoderDecoderProfile,
    build_encoder_decoder,
    reconstruct,
    reconstruction_loss,
    synthesize_gt_background,
)
from .segmentation import (
    DESK_MCFCN,
    DESK_MCFCN_SINGLE,
    FULL_MCFCN,
    LabelMap,
    McfcnProfile,
    ProbabilityMap,
    build_mcfcn,
    mask_from_probs,
    segment,
    segmentation_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ConvSpec",
    "Graph",
    "SgdState",
    "Tensor",
    "apply_activation",
    "batchnorm2d",
    "bilinear_resize",
    "concat_channels",
    "conv2d",
    "leaky_relu",
    "masked_nll_mean",
    "relu",
    "resize_bilinear",
    "sgd_step",
    "softmax_channels",
    "squared_error_sum",
    "tanh",
    "transposed_conv2d",
    "DEFAULT_SWEEP_GRID",
    "PcaBackgroundModel",
    "RpcaState",
    "SweepResult",
    "pca_background",
    "pca_fit",
    "rpca_init",
    "rpca_update",
    "threshold_classify",
    "threshold_sweep",
    "load_checkpoint",
    "save_checkpoint",
    "FrameSample",
    "DatasetSplit",
    "SpriteSpec",
    "SyntheticSceneSpec",
    "load_sequence",
    "map_gt_labels",
    "paste_objects",
    "split_dataset",
    "synth_sequence",
    "write_sequence",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "ShapeError",
    "ToolkitError",
    "EvalReport",
    "aggregate_mean",
    "evaluate_dataset",
    "f_measure",
    "Network",
    "NetworkSpec",
    "DESK_PIPELINE",
    "FULL_PIPELINE",
    "PipelineProfile",
    "StepSpec",
    "TrainingConfig",
    "TwoStagePipeline",
    "bilinear_bridge",
    "desk_training_config",
    "full_training_config",
    "infer_end_to_end",
    "joint_loss",
    "run_training_schedule",
    "DESK_ENCODER_DECODER",
    "FULL_ENCODER_DECODER",
    "EncoderDecoderProfile",
    "build_encoder_decoder",
    "reconstruct",
    "reconstruction_loss",
    "synthesize_gt_background",
    "DESK_MCFCN",
    "DESK_MCFCN_SINGLE",
    "FULL_MCFCN",
    "LabelMap",
    "McfcnProfile",
    "ProbabilityMap",
    "build_mcfcn",
    "mask_from_probs",
    "segment",
    "segmentation_loss",
]
