"""Online Bayesian gate-set tomography with a synthetic two-qubit device."""

__version__ = "0.1.0"

from .engine import (
    GaussianBelief,
    NoiseStats,
    UpdateDiagnostics,
    conditional_noise,
    default_prior,
    dominance_check,
    posterior_update,
    run_online,
    sample_noise_stats,
    shot_noise_covariance,
)
from .forward import (
    LinearizedSetting,
    approximation_error,
    exact_forward,
    forward_probabilities,
    linearize,
)
from .gates import (
    GateSet,
    NoisyGate,
    ParameterPacking,
    gateset_from_config,
    native_two_qubit_gate_set,
    pack,
    single_qubit_xz_gate_set,
    unpack,
)
from .project import (
    ProjectionReport,
    average_gateset_fidelity,
    pmap_estimate,
    project_cptp,
    project_gateset_with_fidelity,
)
from .simulate import ExperimentRecord, TrueDevice, generate_tomography_settings

__all__ = [
    "ExperimentRecord",
    "GateSet",
    "GaussianBelief",
    "LinearizedSetting",
    "NoiseStats",
    "NoisyGate",
    "ParameterPacking",
    "ProjectionReport",
    "TrueDevice",
    "UpdateDiagnostics",
    "approximation_error",
    "average_gateset_fidelity",
    "conditional_noise",
    "default_prior",
    "dominance_check",
    "exact_forward",
    "forward_probabilities",
    "gateset_from_config",
    "generate_tomography_settings",
    "linearize",
    "native_two_qubit_gate_set",
    "pack",
    "pmap_estimate",
    "posterior_update",
    "project_cptp",
    "project_gateset_with_fidelity",
    "run_online",
    "sample_noise_stats",
    "shot_noise_covariance",
    "single_qubit_xz_gate_set",
    "unpack",
]
