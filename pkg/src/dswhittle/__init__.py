"""Debiased spatial Whittle estimation for Gaussian random fields on grids."""
from .grid import (
    EmptyObservationError,
    GridSpec,
    LagField,
    Modulation,
    fejer_kernel,
    full_grid_autocorrelation,
    hanning_modulation,
    mask_autocorrelation,
)
from .models import (
    Exponential,
    Matern,
    ParameterVector,
    SeparableExponential,
    WhiteNoise,
    aliased_spectral_density,
    bessel_k,
    cov_gradient,
    get_model,
    matern_spectral_density,
    parameters_from_mapping,
)
from .spectral import (
    dirichlet_kernel,
    expected_periodogram,
    expected_periodogram_gradient,
    periodogram,
)
from .likelihood import Objective, ObjectiveSpec, debiased_nll, score, standard_nll
from .inference import (
    FitOptions,
    FitResult,
    attach_standard_errors,
    expected_hessian,
    fit,
    initial_guess,
    sandwich_variance,
    score_covariance_mc,
)
from .simulate import bernoulli_mask, circle_mask, mask_from_file, simulate_field
from .diagnostics import hscc_min_eigen, scc_info_ratio, scc_report, scc_separation

__version__ = "0.1.0"
