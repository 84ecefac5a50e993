"""Spectra and regularized trace formulas for conformable fractional diffusion pencils."""

from __future__ import annotations

from .conformable import (
    CoordinateMap,
    FractionalOrder,
    PencilState,
    SmoothFunction,
    conformable_derivative,
    conformable_integral,
    fractional_wronskian,
    inner_product_alpha,
)
from .expr import Expression, ParseError, differentiate, evaluate, parse
from .problem import (
    PencilConstants,
    ProblemSpec,
    accumulated_Q,
    asymptotic_delta,
    coefficient_functions,
    compute_constants,
    eigen_guess,
    sequence_terms,
    shift_problem,
)
from .solver import delta, integral_equation_residual, solve_phi, solve_psi
from .spectrum import Spectrum, contour_radius, count_eigenvalues_inside, find_eigenvalues
from .trace import (
    PartialSumSeries,
    TraceReport,
    contour_identity_check,
    extrapolate_tail,
    trace1_sides,
    trace2_sides,
)

__version__ = "0.1.0"
