"""Lattice measures of toric Kähler potentials and their Gaussian limits."""
from .polytope import (
    DelzantPolytope,
    UnboundedPolytopeError,
    cube,
    interval,
    product_polytope,
    simplex,
)
from .potential import (
    BasePoint,
    NonConvergenceError,
    NonInteriorPointError,
    PositivityError,
    SymplecticPotential,
    ToricPotential,
    base_point,
    fubini_study,
    invert_moment_map,
    legendre_dual,
    moment_map,
    perturbed_potential,
    product_potential,
    rate_function,
    shifted_potential,
)
from .quadrature import (
    AlphaOutsidePolytopeError,
    BoundaryAlphaError,
    NormingConstant,
    QuadratureSpec,
    norming_constant_laplace,
    norming_constant_rho,
    norming_constant_x,
)
from .bergman import (
    BergmanMeasure,
    BergmanModel,
    MomentSummary,
    build_measure,
    char_fn,
    density_of_states,
    moments,
    recentered_dilated,
    weight,
)
from .limits import (
    ConvergenceReport,
    EmptyWindowError,
    GaussianLaw,
    TestFunction,
    charfn_error,
    clt_error,
    default_test_functions,
    fit_rate,
    gaussian_integral,
    integrate_against_dilated,
    llt_error,
)

__version__ = "0.1.0"
