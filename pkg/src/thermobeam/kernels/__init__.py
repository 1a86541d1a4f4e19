"""Kernel solvers for the backstepping designs."""

from .common import ConvergenceError
from .control import (solve_control_kernels_iterative,
                      solve_control_kernels_series, solve_p)
from .inverse import solve_inverse_kernels
from .observer import solve_observer_kernels, solve_observer_kernels_iterative
from .residuals import control_kernel_residual, observer_kernel_residual
from .sets import (InverseKernelSet, KernelSet, ObserverKernelSet,
                   resample_kernels)

__all__ = [
    "ConvergenceError",
    "KernelSet", "InverseKernelSet", "ObserverKernelSet",
    "solve_control_kernels_series", "solve_control_kernels_iterative",
    "solve_p", "solve_inverse_kernels",
    "solve_observer_kernels", "solve_observer_kernels_iterative",
    "control_kernel_residual", "observer_kernel_residual",
    "resample_kernels",
]
