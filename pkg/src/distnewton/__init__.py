"""Distributed Newton optimization over consensus networks."""

from .netgraph import Topology, build_ring, spectral_params, power_estimate_lambda2
from .objectives import ObjectiveSet, make_localization_instance, centralized_newton
from .dnewton import Variant, floor_hessian, Trace
from .runner import run, global_run, StepSizeMode
from .stepsize import offline_alpha, adaptive_alpha, compute_constants, schedule_alpha, F_map

__all__ = [
    "Topology", "build_ring", "spectral_params", "power_estimate_lambda2",
    "ObjectiveSet", "make_localization_instance", "centralized_newton",
    "Variant", "floor_hessian", "Trace",
    "run", "global_run", "StepSizeMode",
    "offline_alpha", "adaptive_alpha", "compute_constants", "schedule_alpha", "F_map",
]

__version__ = "0.1.0"
