"""Dense tensor math with reverse-mode gradients."""

from . import ops
from .ops import Switches, center_switches, conv1d, maxpool, transposed_conv1d, unpool
from .optim import AdamState, adam_step, glorot_init
from .tensor import GradTape, Tensor

__all__ = [
    "AdamState", "GradTape", "Switches", "Tensor", "adam_step", "center_switches",
    "conv1d", "glorot_init", "maxpool", "ops", "transposed_conv1d", "unpool",
]
