"""Retrofit control of a subsystem embedded in an unknown stable network.

The package builds output-rectifying retrofit controllers for a linear
subsystem ``x' = A x + L v + B u``, ``w = Gamma x``, ``y = C x`` whose
environment ``v = Gbar w`` is unknown, and verifies them algebraically and
over sampled environments.
"""

__version__ = "0.1.0"

from .coprime import (
    CoprimeFactors,
    EnvironmentSample,
    doubly_coprime,
    sample_environment,
    stabilizing_gain,
    trivial_factors,
    verify_bezout,
    youla_controller,
)
from .geometry import NormalFormCoords, Plant, RelativeDegreeProfile, arrange_outputs, relative_degree
from .rectifier import RectifiedModel, rectify
from .retrofit import (
    RetrofitController,
    RetrofitVerdict,
    assemble,
    build_gtilde_yu,
    check_output_rectifying,
    check_retrofit,
    synthesize,
    synthesize_internal,
)
from .sim import ClosedLoop, Trajectory, close_loop, simulate
from .statespace import Realization, feedback, freq_eval, is_hurwitz, is_zero_system, minimal_reduce, series
