"""Join-shortest-of-L load balancing: simulation, mean-field limit, spectral
gap and Ornstein-Uhlenbeck fluctuations."""
from .model import (
    DomainError,
    FluctuationSample,
    ModelParams,
    TailValidationError,
    TailVector,
    WeightSequence,
    make_geometric_weights,
    validate_tail,
    weighted_l1_norm,
    weighted_l2_norm,
)
from .meanfield import (
    DecayFit,
    DriftTriple,
    MeanFieldTrajectory,
    correction_A,
    drift,
    finite_n_drift,
    fit_decay_rate,
    fixed_point,
    integrate_ode,
    remainder_B,
)
from .linear_ops import (
    SpectralEstimate,
    TruncatedOperator,
    build_operator_K,
    build_stationary_K,
    kmg_polynomials,
    potential_coefficients,
    semigroup_apply,
    spectral_gap,
    symmetrize,
)
from .network_sim import (
    EquilibriumBatch,
    SimConfig,
    SimTrajectory,
    fluctuations,
    rounded_initial,
    sample_equilibrium,
    simulate,
    simulate_per_queue,
)
from .ou_process import (
    CovarianceMatrix,
    NoiseSpec,
    noise_variances,
    sample_invariant,
    simulate_ou,
    stationary_covariance,
)
from .clt_harness import ExperimentReport, run_clt_equilibrium, run_clt_transient, run_lln, run_stability

__version__ = "0.1.0"

__all__ = [
    "CovarianceMatrix",
    "DecayFit",
    "DomainError",
    "DriftTriple",
    "EquilibriumBatch",
    "ExperimentReport",
    "FluctuationSample",
    "MeanFieldTrajectory",
    "ModelParams",
    "NoiseSpec",
    "SimConfig",
    "SimTrajectory",
    "SpectralEstimate",
    "TailValidationError",
    "TailVector",
    "TruncatedOperator",
    "WeightSequence",
    "build_operator_K",
    "build_stationary_K",
    "correction_A",
    "drift",
    "finite_n_drift",
    "fit_decay_rate",
    "fixed_point",
    "fluctuations",
    "integrate_ode",
    "kmg_polynomials",
    "make_geometric_weights",
    "noise_variances",
    "potential_coefficients",
    "remainder_B",
    "rounded_initial",
    "run_clt_equilibrium",
    "run_clt_transient",
    "run_lln",
    "run_stability",
    "sample_equilibrium",
    "sample_invariant",
    "semigroup_apply",
    "simulate",
    "simulate_ou",
    "simulate_per_queue",
    "spectral_gap",
    "stationary_covariance",
    "symmetrize",
    "validate_tail",
    "weighted_l1_norm",
    "weighted_l2_norm",
]
