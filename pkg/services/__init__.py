"""Service layer for the cavity trap simulator."""

from .hilbert import (
    DensityOperator,
    OperatorSet,
    Superoperator,
    build_hamiltonian,
    build_liouvillian,
    build_operators,
    steady_state,
)
from .fields import coupling, dressed_detunings, field_point, stark_shift
from .coefficients import (
    BlochPoint,
    CoefficientCache,
    CoefficientProvider,
    DirectBlochSource,
    bloch_point,
    load_or_build_cache,
)
from .sde import PhaseState, Trajectory, WienerStream, simulate, step, well_spec
from .ensemble import EnsembleResult, classify_trapped, run_ensemble
from .survival import survival_and_fit

__all__ = [
    "DensityOperator",
    "OperatorSet",
    "Superoperator",
    "build_hamiltonian",
    "build_liouvillian",
    "build_operators",
    "steady_state",
    "coupling",
    "dressed_detunings",
    "field_point",
    "stark_shift",
    "BlochPoint",
    "CoefficientCache",
    "CoefficientProvider",
    "DirectBlochSource",
    "bloch_point",
    "load_or_build_cache",
    "PhaseState",
    "Trajectory",
    "WienerStream",
    "simulate",
    "step",
    "well_spec",
    "EnsembleResult",
    "classify_trapped",
    "run_ensemble",
    "survival_and_fit",
]
