"""Stability analysis and control synthesis for polynomial ODE systems."""

from .poly import (
    Monomial,
    Polynomial,
    VectorField,
    Degrees,
    ParseError,
    parse_system,
    format_polynomial,
)
from .factorization import (
    AssignmentSlot,
    MonomialConstraint,
    MatrixPolynomial,
    FactorizationFamily,
    build_family,
    matrix_residual,
)
from .stability import (
    Domain,
    SpectralReport,
    StabilityCertificate,
    EigenvalueError,
    char_poly,
    hurwitz_minors,
    hurwitz_report,
    hurwitz_stable,
    eigenvalues,
    spectral_report,
    certify,
    search_certificate,
)
from .simulation import (
    Trajectory,
    WindingReport,
    DecayReport,
    DivergenceError,
    ExpmOverflowError,
    expm,
    integrate_exp,
    integrate_reference,
    winding,
    norm_decay,
)

__version__ = "0.1.0"
