"""Riemannian metric tensors of stable discrete-time linear systems."""

from importlib import resources

from .errors import (
    BadNoiseError,
    ConvergenceError,
    DimensionError,
    IndexRangeError,
    LSMetricError,
    ParseError,
    SingularError,
    UnstableError,
)
from .mfd import MfdPair, PolyMatrix, left_mfd, mfd_derivative, poly_eval, verify_mfd
from .natgrad import FitConfig, FitTrace, fit, natural_step, pem_cost_grad, simulate
from .stochastic import (
    CovarianceSequence,
    NoiseModel,
    covariance_derivatives,
    metric_T,
    metric_T_quadrature,
    metric_U,
    spectral_density,
    stationary_covariances,
)
from .sysrep import (
    KroneckerStructure,
    MarkovSequence,
    ParamVector,
    StateSpaceModel,
    apply_linear_reparam,
    build_state_space,
    eval_transfer,
    markov_parameters,
    sample_stable,
    spectral_radius,
    structural_derivative,
    tangent_basis,
)
from .tensor import (
    MetricTensor,
    SensitivityRealization,
    compute_metric,
    cross_validate,
    jj_block_closed_form,
    markov_derivatives,
    metric_arma,
    metric_quadrature,
    metric_series,
    metric_stein,
    observability_gramian,
    sensitivity_realization,
    stein_solve,
)


def bundled_model_path(name: str = "sc1.json"):
    """Path of a model document shipped with the package."""
    return resources.files(__package__) / "data" / name
