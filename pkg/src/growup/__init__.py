"""Attractors of slowly non-dissipative semiflows.

The package splits a linear part with spectrum on both sides of the
imaginary axis from a bounded nonlinearity, integrates the semiflow
with an exponential scheme, and computes the objects that organise the
grow-up dynamics: the unbounded attractor as a graph over the unstable
subspace (two independent solvers), its bounded core, Lipschitz
thresholds, thickness decay, the limit dynamics of escaping directions,
and pullback sections for non-autonomous forcing.
"""

from .errors import (ConfigError, DomainExitError, EnvelopeViolation,
                     FiberSolveError, GrowupError, HyperbolicityError,
                     IllConditionedError, InconclusiveError,
                     IntegrationError, NonContractionError,
                     RangeOverflowError)
from .operator_core import (SplitSystem, estimate_dichotomy, load_system,
                            propagator_minus, propagator_plus,
                            solve_lyapunov, system_from_dict)
from .semiflow import (NonlinearityModel, Trajectory, integrate,
                       integrate_process, zero_nonlinearity)
from .absorbing import (ball_samples, build_family, classify,
                        dichotomy_for, omega_limit)
from .graph_transform import (ConeParameters, GraphFn, attraction_rate,
                              check_cone_invariance, fiber_solve,
                              iterate_to_limit, symmetric_box, transform)
from .lyapunov_perron import (LPConfig, find_anchor, lp_attraction_rate,
                              lp_fixed_point, lp_map)
from .bounds import (cutoff, decay_exponent, gt_bound, lp_bound,
                     lp_bound_sharp_m1, lp_bound_simplified,
                     measure_thickness, remark_table, threshold_table)
from .infinity import (jordan_prediction, limit_flow, omega_infty,
                       ring_coverage, sphere_flow)
from .pullback import (NonAutonomousSetFamily, ProcessModel,
                       bounded_core_section, default_ladder,
                       modulated_process, pullback_omega, pullback_section)
from . import presets

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainExitError", "EnvelopeViolation",
    "FiberSolveError", "GrowupError", "HyperbolicityError",
    "IllConditionedError", "InconclusiveError", "IntegrationError",
    "NonContractionError", "RangeOverflowError",
    "SplitSystem", "estimate_dichotomy", "load_system",
    "propagator_minus", "propagator_plus", "solve_lyapunov",
    "system_from_dict",
    "NonlinearityModel", "Trajectory", "integrate", "integrate_process",
    "zero_nonlinearity",
    "ball_samples", "build_family", "classify", "dichotomy_for",
    "omega_limit",
    "ConeParameters", "GraphFn", "attraction_rate",
    "check_cone_invariance", "fiber_solve", "iterate_to_limit",
    "symmetric_box", "transform",
    "LPConfig", "find_anchor", "lp_attraction_rate", "lp_fixed_point",
    "lp_map",
    "cutoff", "decay_exponent", "gt_bound", "lp_bound",
    "lp_bound_sharp_m1", "lp_bound_simplified", "measure_thickness",
    "remark_table", "threshold_table",
    "jordan_prediction", "limit_flow", "omega_infty", "ring_coverage",
    "sphere_flow",
    "NonAutonomousSetFamily", "ProcessModel", "bounded_core_section",
    "default_ladder", "modulated_process", "pullback_omega",
    "pullback_section",
    "presets",
]
