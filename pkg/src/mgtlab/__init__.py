"""Numerical laboratory for the third-order MGT equation with a memory term.

Modules
-------
kernel      memory kernels, decay dominators, assumption checks
decay_ode   dominator ODE, convex transforms, sequence and comparison bounds
simulator   modal RK4 integration with trapezoid memory
energy      energy functionals, balance and equivalence diagnostics
analysis    decay fits, dominator bound search, exponent-ladder pipeline
cli         JSON-configured batch front end
"""

from .kernel import (
    MgtParams, MemoryKernel, DecayDominator, AdmissibilityReport, check_assumptions,
    admissible_k_sigma, make_exponential, make_polynomial, make_none, make_custom,
    make_tabulated, power_dominator,
)
from .simulator import ModalOperator, Trajectory, dirichlet_laplacian_1d, run, InstabilityError
from .energy import EnergySeries, energy_series, balance_residual

__version__ = "0.1.0"
