"""Residual network signal-propagation lab.

Thin numpy-facing bindings over the C++ core: deterministic Gaussian
sampling, the numeric kernels (matmul, conv2d, relu, channel_moments,
softmax_xent), per-block initialization statistics with closed-form
predictions, seeded training runs and the gradient-check suite.
"""

from ._core import (
    analyze,
    channel_moments,
    conv2d,
    gaussian,
    gradcheck,
    matmul,
    predict,
    relu,
    schedule_lr,
    softmax_xent,
    train,
)

__all__ = [
    "analyze",
    "channel_moments",
    "conv2d",
    "gaussian",
    "gradcheck",
    "matmul",
    "predict",
    "relu",
    "schedule_lr",
    "softmax_xent",
    "train",
]
