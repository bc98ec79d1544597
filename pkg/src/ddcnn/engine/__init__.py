"""Explicit forward/backward tensor kernels used by every network in ddcnn.

Tensors are plain :class:`numpy.ndarray` values in channels-last layout with
a leading batch axis.
"""

from .conv import conv_backward, conv_forward, conv_output_shape
from .gradcheck import finite_difference_gradient, relative_error, run_suite
from .layers import (
    activation,
    activation_backward,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    softmax,
)
from .losses import crossentropy
from .optim import AdamState, adam_step
from .pooling import (
    global_avgpool,
    global_avgpool_backward,
    maxpool_backward,
    maxpool_forward,
)

__all__ = [
    "AdamState",
    "activation",
    "activation_backward",
    "adam_step",
    "batchnorm_backward",
    "batchnorm_forward",
    "conv_backward",
    "conv_forward",
    "conv_output_shape",
    "crossentropy",
    "dense_backward",
    "dense_forward",
    "dropout",
    "dropout_backward",
    "finite_difference_gradient",
    "global_avgpool",
    "global_avgpool_backward",
    "maxpool_backward",
    "maxpool_forward",
    "relative_error",
    "run_suite",
    "softmax",
]
