"""Continuous-time linear-Gaussian filtering, smoothing and conditional path sampling."""

from .errors import (
    GridMismatchError,
    ModelError,
    NumericalError,
    RiccatiBlowUp,
    SingularCovarianceError,
    SmoothkitError,
)
from .filtering import FilterResult, innovations, kalman_bucy
from .model import (
    CoefficientProvider,
    Dims,
    InitialLaw,
    ModelSpec,
    ObservationPath,
    TimeGrid,
    eval_coeff,
    prior_mean_path,
    validate_model,
)
from .riccati import (
    Propagator,
    RiccatiField,
    build_propagator,
    cross_covariance,
    riccati_field,
    smoothing_w,
    solve_gamma_forward,
    solve_phi_backward,
    xi0_covariance,
)
from .sampler import (
    ConditionalPathBatch,
    ConfidenceBand,
    FunctionalEstimate,
    confidence_band,
    estimate_functional,
    sample_conditional_paths,
)
from .simulate import SimulationOutput, rng_stream, simulate
from .smoother import (
    SmoothingResult,
    bf_smooth,
    cross_cov_query,
    direct_integral_smooth,
    fixed_point_smooth,
    rts_smooth,
)

__version__ = "0.1.0"
