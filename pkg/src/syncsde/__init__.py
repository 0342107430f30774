"""Synchronization of cyclically coupled SODEs with linear multiplicative noise.

The SODEs are handled through their pathwise RODE conjugates: Ornstein-Uhlenbeck
paths built from shared Wiener increments turn the noisy system into an ODE
with random coefficients, which is then integrated path by path.
"""

from .dynamics import (
    DriftSpec,
    Frame,
    StateVector,
    SystemSpec,
    averaged_rode_rhs,
    conjugate_rhs,
    coupled_rode_rhs,
    coupled_sode_drift,
    frame_convert,
    make_system,
    verify_one_sided_lipschitz,
)
from .errors import (
    AlignmentError,
    ComparisonError,
    ConfigurationError,
    DimensionError,
    NumericRangeError,
    RangeError,
    SyncError,
    UnsupportedStructureError,
)
from .noise import (
    NoiseGrid,
    OUPathSet,
    TimeGrid,
    build_ou_paths,
    ergodic_average,
    estimate_T_omega,
    sample_wiener,
    shift_path,
)
from .spectral import (
    CouplingMatrixSeries,
    TridiagSpec,
    alpha_threshold,
    circulant_quadratic_form,
    comparison_bound,
    tridiag_eigenvalues,
)
from .sync import (
    AttractorEstimate,
    SyncReport,
    TrajectoryBundle,
    absorbing_radius,
    averaged_comparison,
    averaged_pullback_attractor,
    component_gap,
    integrate_rode,
    integrate_sode_stratonovich,
    nu_sweep,
    pairwise_gap,
    pullback_attractor,
)

__version__ = "0.1.0"
