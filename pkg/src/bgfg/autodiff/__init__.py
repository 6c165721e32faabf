"""Self-contained tensor arithmetic with reverse-mode differentiation."""

from .convops import (
    ConvSpec,
    bilinear_matrix,
    bilinear_tconv_weights,
    conv_output_extent,
    conv_output_shape,
    resize_bilinear,
    resize_bilinear_adjoint,
    tconv_output_extent,
    tconv_output_shape,
)
from .sgd import SgdState, sgd_step
from .tensor import (
    Graph,
    Tensor,
    apply_activation,
    batchnorm2d,
    bilinear_resize,
    concat_channels,
    conv2d,
    leaky_relu,
    masked_nll_mean,
    relu,
    softmax_channels,
    squared_error_sum,
    tanh,
    transposed_conv2d,
)

__all__ = [
    "ConvSpec",
    "Graph",
    "SgdState",
    "Tensor",
    "apply_activation",
    "batchnorm2d",
    "bilinear_matrix",
    "bilinear_resize",
    "bilinear_tconv_weights",
    "concat_channels",
    "conv2d",
    "conv_output_extent",
    "conv_output_shape",
    "leaky_relu",
    "masked_nll_mean",
    "relu",
    "resize_bilinear",
    "resize_bilinear_adjoint",
    "sgd_step",
    "softmax_channels",
    "squared_error_sum",
    "tanh",
    "tconv_output_extent",
    "tconv_output_shape",
    "transposed_conv2d",
]
