"""thermobeam: boundary control synthesis and finite-difference simulation
for a thermally and aerodynamically loaded slender rotating blade.

The package builds the normalized transport/heat/ODE plant from physical
blade constants, solves the backstepping kernel equations by two independent
methods, synthesizes state- and observer-based output-feedback laws, and
verifies the closed-loop behavior by simulation-backed checks.
"""

from .beam import (DimensionlessParams, PhysicalBeamParams,
                   build_general_spec, inner_loop_u1, nondimensionalize,
                   physical_initial_state, reconstruct_physical,
                   riemann_profiles)
from .control import (GainSet, SynthesisError, check_c1, output_feedback_U,
                      place_poles, state_feedback_U, synthesize_gains)
from .diagnostics import (apply_backstepping, apply_inverse, fit_decay,
                          omega0, omega_a, verify_suite)
from .kernels import (ConvergenceError, InverseKernelSet, KernelSet,
                      ObserverKernelSet, solve_control_kernels_iterative,
                      solve_control_kernels_series, solve_inverse_kernels,
                      solve_observer_kernels, solve_p)
from .observer import (ObserverGainSet, ObserverRun, ObserverState,
                       error_norm_Omega_e, synthesize_observer_gains)
from .plant import (DivergenceError, GeneralPlantSpec, Grid, PlantSpecError,
                    PlantState, Trace, impose_boundaries, residual, simulate,
                    step)

__version__ = "0.1.0"
