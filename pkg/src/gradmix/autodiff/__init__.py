"""Dense numpy tensors with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import GradCheckEntry, GradCheckReport, finite_diff_check
from .graph import FeatureTaps, Graph, Node, Parameter, backward, tap_gradients
from .kernels import (
    KERNELS,
    AutodiffError,
    BatchNormState,
    Kernel,
    ShapeError,
    UnknownKernelError,
    batchnorm_eval,
    bilinear_resize,
    get_kernel,
    register,
)

__all__ = [
    "AutodiffError", "BatchNormState", "FeatureTaps", "GradCheckEntry", "GradCheckReport",
    "Graph", "KERNELS", "Kernel", "Node", "Parameter", "ShapeError", "UnknownKernelError",
    "backward", "batchnorm_eval", "bilinear_resize", "finite_diff_check", "get_kernel",
    "ops", "register", "tap_gradients",
]
