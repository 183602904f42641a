"""Operator algebra, Liouvillian construction and resolvent integrals.

The Hilbert space is atom ⊗ truncated Fock space. Basis index is
``atom * (n_max + 1) + n`` with atomic index 0 = |g⟩ and 1 = |e⟩, so
σ = |g⟩⟨e|. Superoperators act on column-stacked density matrices:
vec(A X B) = (Bᵀ ⊗ A) vec(X).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.integrate import simpson

from config import PhysicalParams
from exceptions import (
    ConsistencyError,
    InvalidArgumentError,
    NumericalDegeneracyError,
    NumericalError,
)

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
STEADY_RESIDUAL_TOL = 1e-10
RESOLVENT_RESIDUAL_TOL = 1e-8
MIN_EIGENVALUE = -1e-10
KERNEL_RATIO = 1e6
IMAG_TOL = 1e-6
ORACLE_STEP_FRACTION = 0.05
TRUNCATION_TOL = 1e-4


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


def _frozen(matrix: np.ndarray) -> np.ndarray:
    out = np.array(matrix, dtype=complex)
    out.setflags(write=False)
    return out


def _real_part(value: complex, name: str) -> float:
    if abs(value.imag) > IMAG_TOL * (1.0 + abs(value.real)):
        raise ConsistencyError(
            f"{name} has a non-negligible imaginary part",
            details={"real": float(value.real), "imag": float(value.imag)},
        )
    return float(value.real)


# ------------------------------------------------------------------
# Types
# ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Field, atomic and coupling operators on the truncated space."""

    n_max: int
    a: np.ndarray
    a_dag: np.ndarray
    sigma: np.ndarray
    sigma_dag: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    identity: np.ndarray

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def number(self) -> np.ndarray:
        return self.a_dag @ self.a

    @property
    def excited(self) -> np.ndarray:
        return self.sigma_dag @ self.sigma

    def ground_vacuum(self) -> np.ndarray:
        """|g,0⟩⟨g,0|."""
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho


@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expect(self, op: np.ndarray) -> float:
        """Real part of Tr[op·η]."""
        return float(np.real(np.trace(op @ self.matrix)))

    def photon_number(self, ops: OperatorSet) -> float:
        return self.expect(ops.number)

    def excited_population(self, ops: OperatorSet) -> float:
        return self.expect(ops.excited)

    def min_eigenvalue(self) -> float:
        return float(np.min(linalg.eigvalsh(self.matrix)))


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Dense Liouvillian acting on column-stacked density matrices."""

    matrix: np.ndarray
    dim: int

    @cached_property
    def trace_row(self) -> np.ndarray:
        return vec(np.eye(self.dim)).astype(complex)

    @cached_property
    def bordered_lu(self) -> Tuple[np.ndarray, np.ndarray]:
        """LU factors of [[L, vec(I)], [vec(I)ᵀ, 0]]."""
        n = self.dim * self.dim
        bordered = np.zeros((n + 1, n + 1), dtype=complex)
        bordered[:n, :n] = self.matrix
        bordered[:n, n] = self.trace_row
        bordered[n, :n] = self.trace_row
        return linalg.lu_factor(bordered, check_finite=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(X), self.dim)

    def trace_defect(self) -> float:
        """‖Tr∘L‖∞, zero for a trace-preserving generator."""
        return float(np.max(np.abs(self.trace_row @ self.matrix)))


# ------------------------------------------------------------------
# Construction
# ------------------------------------------------------------------


@lru_cache(maxsize=16)
def build_operators(n_max: int) -> OperatorSet:
    """Operators for a two-level atom and a Fock space truncated at ``n_max``."""
    if n_max < 1:
        raise InvalidArgumentError("n_max must be at least 1", details={"n_max": n_max})

    n_fock = n_max + 1
    field = np.diag(np.sqrt(np.arange(1, n_fock, dtype=float)), k=1)
    lowering = np.array([[0.0, 1.0], [0.0, 0.0]])

    a = np.kron(np.eye(2), field)
    sigma = np.kron(lowering, np.eye(n_fock))
    a_dag = a.conj().T
    sigma_dag = sigma.conj().T

    return OperatorSet(
        n_max=n_max,
        a=_frozen(a),
        a_dag=_frozen(a_dag),
        sigma=_frozen(sigma),
        sigma_dag=_frozen(sigma_dag),
        Phi=_frozen(a_dag @ sigma + sigma_dag @ a),
        Psi=_frozen(sigma_dag @ sigma - sigma @ sigma_dag),
        identity=_frozen(np.eye(2 * n_fock)),
    )


def build_hamiltonian(
    params: PhysicalParams,
    g: float,
    S: float,
    ops: Optional[OperatorSet] = None,
) -> np.ndarray:
    """H/ħ at a frozen atomic position with coupling ``g`` and Stark shift ``S``.

    Args:
        params: Physical parameters (detunings, drive, Stark case).
        g: Local atom-cavity coupling [rad/μs].
        S: Local FORT Stark shift [rad/μs].
        ops: Operator set matching ``params.n_max``; built when omitted.

    Returns:
        Hermitian ``dim × dim`` matrix.

    Raises:
        InvalidArgumentError: If the Stark case is unknown.
    """
    if params.stark_case not in ("a", "b"):
        raise InvalidArgumentError(
            f"Unknown Stark case '{params.stark_case}'",
            details={"allowed": ["a", "b"]},
        )
    ops = ops if ops is not None else build_operators(params.n_max)

    H = (
        params.omega_ap * (ops.sigma_dag @ ops.sigma)
        + params.omega_gp * (ops.a_dag @ ops.a)
        + g * ops.Phi
        + params.E * (ops.a_dag + ops.a)
    )
    if params.stark_case == "a":
        return H + S * ops.Psi
    return H - S * ops.identity


def build_liouvillian(H: np.ndarray, kappa: float, gamma: float) -> Superoperator:
    """Lindblad generator with cavity decay ``kappa`` and atomic decay ``gamma``.

    L[ρ] = −i[H, ρ] + κ(2aρa† − a†aρ − ρa†a) + γ(2σρσ† − σ†σρ − ρσ†σ)
    """
    H = np.asarray(H, dtype=complex)
    dim = H.shape[0]
    if H.shape != (dim, dim) or dim % 2:
        raise InvalidArgumentError("H must be square with even dimension", details={"shape": H.shape})
    defect = float(np.max(np.abs(H - H.conj().T)))
    if defect > HERMITIAN_TOL:
        raise InvalidArgumentError("H is not Hermitian", details={"max_defect": defect})
    if kappa < 0 or gamma < 0:
        raise InvalidArgumentError(
            "Decay rates must be nonnegative",
            details={"kappa": kappa, "gamma": gamma},
        )

    ops = build_operators(dim // 2 - 1)
    eye = np.eye(dim)
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for rate, c in ((kappa, ops.a), (gamma, ops.sigma)):
        if rate == 0:
            continue
        cdc = c.conj().T @ c
        L += rate * (2.0 * np.kron(c.conj(), c) - np.kron(eye, cdc) - np.kron(cdc.T, eye))
    return Superoperator(matrix=L, dim=dim)


def liouvillian_at(params: PhysicalParams, g: float, S: float) -> Superoperator:
    """Shortcut: Liouvillian of ``params`` at a given (g, S)."""
    H = build_hamiltonian(params, g, S)
    return build_liouvillian(H, params.kappa, params.gamma)


# ------------------------------------------------------------------
# Steady state and resolvent
# ------------------------------------------------------------------


def steady_state(L: Superoperator) -> DensityOperator:
    """Unique stationary state η of ``L``.

    One row of ``L`` is replaced by the trace functional and the system is
    solved against the first unit vector.

    Raises:
        NumericalDegeneracyError: If the kernel of ``L`` is not one-dimensional.
        NumericalError: If the solution fails the residual, Hermiticity or
            positivity checks.
    """
    M = L.matrix
    singular = linalg.svdvals(M, check_finite=False)
    floor = np.finfo(float).eps * singular[0]
    ratio = singular[-2] / max(singular[-1], floor)
    if ratio <= KERNEL_RATIO:
        raise NumericalDegeneracyError(
            "Liouvillian kernel is not one-dimensional",
            details={
                "smallest": float(singular[-1]),
                "second_smallest": float(singular[-2]),
                "ratio": float(ratio),
            },
        )

    system = M.copy()
    system[0, :] = L.trace_row
    rhs = np.zeros(M.shape[0], dtype=complex)
    rhs[0] = 1.0
    try:
        solution = linalg.solve(system, rhs, check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericalDegeneracyError(
            "Steady-state system is singular",
            details={"error": str(e)},
        ) from e

    rho = unvec(solution, L.dim)
    defect = float(np.max(np.abs(rho - rho.conj().T)))
    if defect > HERMITIAN_TOL:
        raise NumericalError("Steady state is not Hermitian", details={"max_defect": defect})
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.real(np.trace(rho))

    residual = float(np.max(np.abs(M @ vec(rho))))
    if residual > STEADY_RESIDUAL_TOL:
        raise NumericalError("Steady-state residual too large", details={"residual": residual})

    eta = DensityOperator(matrix=_frozen(rho))
    lowest = eta.min_eigenvalue()
    if lowest < MIN_EIGENVALUE:
        raise NumericalError("Steady state is not positive", details={"min_eigenvalue": lowest})
    return eta


def _solve_traceless(L: Superoperator, X: np.ndarray) -> np.ndarray:
    """Traceless Y with L·Y = −X."""
    n = L.dim * L.dim
    x = vec(X)
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[:n] = -x
    solution = linalg.lu_solve(L.bordered_lu, rhs, check_finite=False)
    Y = solution[:n]

    residual = float(np.max(np.abs(L.matrix @ Y + x))) if n else 0.0
    scale = max(1.0, float(np.max(np.abs(x))))
    if not np.isfinite(residual) or residual > RESOLVENT_RESIDUAL_TOL * scale:
        raise NumericalError(
            "Resolvent solve is ill-conditioned",
            details={"residual": residual, "scale": scale},
        )
    return unvec(Y, L.dim)


def resolvent_apply(L: Superoperator, X: np.ndarray, order: int) -> np.ndarray:
    """Y with L^order·Y = (−1)^order·X on the traceless subspace.

    Order 1 realizes ∫₀^∞ e^{Lτ}X dτ and order 2 realizes ∫₀^∞ τ e^{Lτ}X dτ.

    Raises:
        InvalidArgumentError: If ``order`` is not 1 or 2, or Tr X ≠ 0.
        NumericalError: If the bordered solve fails its residual check.
    """
    if order not in (1, 2):
        raise InvalidArgumentError("order must be 1 or 2", details={"order": order})
    X = np.asarray(X, dtype=complex)
    trace = complex(np.trace(X))
    if abs(trace) > TRACE_TOL:
        raise InvalidArgumentError(
            "Resolvent input must be traceless",
            details={"trace_real": trace.real, "trace_imag": trace.imag},
        )
    Y = X
    for _ in range(order):
        Y = _solve_traceless(L, Y)
    return Y


def _as_matrix(eta: Union[DensityOperator, np.ndarray]) -> np.ndarray:
    return eta.matrix if isinstance(eta, DensityOperator) else np.asarray(eta, dtype=complex)


def correlation_chi(
    L: Superoperator,
    eta: Union[DensityOperator, np.ndarray],
    A: np.ndarray,
    B: np.ndarray,
) -> float:
    """χ^{AB} = i ∫₀^∞ τ ⟨[A(τ), B(0)]⟩ dτ = i·Tr[A·L⁻²([B, η])]."""
    rho = _as_matrix(eta)
    X = B @ rho - rho @ B
    Y = resolvent_apply(L, X, 2)
    return _real_part(1j * np.trace(A @ Y), "chi")


def correlation_xi(
    L: Superoperator,
    eta: Union[DensityOperator, np.ndarray],
    A: np.ndarray,
    B: np.ndarray,
) -> float:
    """ξ^{AB} = ∫₀^∞ [½⟨{A(τ), B(0)}⟩ − ⟨A⟩⟨B⟩] dτ = −Tr[A·L⁻¹(½{B,η} − ⟨B⟩η)]."""
    rho = _as_matrix(eta)
    mean_B = float(np.real(np.trace(B @ rho)))
    X = 0.5 * (B @ rho + rho @ B) - mean_B * rho
    Y = resolvent_apply(L, X, 1)
    return _real_part(np.trace(A @ Y), "xi")


# ------------------------------------------------------------------
# Time-propagation oracle
# ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleSeries:
    """Samples of e^{Lτ}X on a uniform τ grid."""

    times: np.ndarray
    states: np.ndarray  # (n_times, dim, dim)

    def traces(self) -> np.ndarray:
        return np.trace(self.states, axis1=1, axis2=2)

    def norms(self) -> np.ndarray:
        return np.max(np.abs(self.states), axis=(1, 2))


def _max_rate(L: Superoperator, params: Optional[PhysicalParams]) -> float:
    if params is not None:
        return params.fastest_rate
    return float(np.max(np.abs(linalg.eigvals(L.matrix, check_finite=False))))


def _check_oracle_step(L: Superoperator, dt: float, params: Optional[PhysicalParams]) -> None:
    limit = ORACLE_STEP_FRACTION / _max_rate(L, params)
    if dt <= 0 or dt > limit:
        raise InvalidArgumentError(
            "Oracle step too large",
            details={"dt": dt, "limit": limit},
        )


def _rk4_step(M: np.ndarray, V: np.ndarray, dt: float) -> np.ndarray:
    k1 = M @ V
    k2 = M @ (V + 0.5 * dt * k1)
    k3 = M @ (V + 0.5 * dt * k2)
    k4 = M @ (V + dt * k3)
    return V + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def propagate_oracle(
    L: Superoperator,
    X: np.ndarray,
    T_max: float,
    dt: float,
    params: Optional[PhysicalParams] = None,
) -> OracleSeries:
    """Fixed-step RK4 series of e^{Lτ}X for τ ∈ [0, T_max].

    The step must satisfy dt ≤ 0.05·min{1/κ, 1/γ, 1/|Δ_p|, 1/g₀, 1/S_max}
    when ``params`` is given, or dt ≤ 0.05/max|eigenvalue of L| otherwise.
    """
    _check_oracle_step(L, dt, params)
    n_steps = int(np.ceil(T_max / dt - 1e-9))
    V = vec(np.asarray(X, dtype=complex))
    states = np.empty((n_steps + 1, L.dim, L.dim), dtype=complex)
    states[0] = unvec(V, L.dim)
    for i in range(n_steps):
        V = _rk4_step(L.matrix, V, dt)
        states[i + 1] = unvec(V, L.dim)
    return OracleSeries(times=dt * np.arange(n_steps + 1), states=states)


def _rk4_observables(
    L: Superoperator,
    columns: np.ndarray,
    observables: np.ndarray,
    dt: float,
    n_steps: int,
) -> np.ndarray:
    """Tr[A_q e^{Lτ} X_k] sampled every step, shape (n_steps + 1, q, k)."""
    # Tr[A Y] = vec(Aᵀ) · vec(Y)
    rows = np.stack([vec(A.T) for A in observables])
    V = columns.copy()
    out = np.empty((n_steps + 1, rows.shape[0], V.shape[1]), dtype=complex)
    out[0] = rows @ V
    for i in range(n_steps):
        V = _rk4_step(L.matrix, V, dt)
        out[i + 1] = rows @ V
    return out


def oracle_horizon(params: PhysicalParams) -> float:
    """T = 40·max{1/κ, 1/γ}."""
    return 40.0 / params.slowest_decay


def oracle_correlations(
    L: Superoperator,
    eta: Union[DensityOperator, np.ndarray],
    ops: OperatorSet,
    params: PhysicalParams,
    dt: Optional[float] = None,
    T_max: Optional[float] = None,
) -> Dict[str, float]:
    """Brute-force χ and ξ for all pairs in {Φ, Ψ}² by quantum regression.

    Integrands are sampled on an RK4 grid and integrated with composite
    Simpson quadrature. The returned mapping also holds ``tail``, the largest
    integrand magnitude at the horizon relative to its peak.
    """
    dt = dt if dt is not None else 0.02 / params.fastest_rate
    T_max = T_max if T_max is not None else oracle_horizon(params)
    _check_oracle_step(L, dt, params)
    n_steps = int(np.ceil(T_max / dt - 1e-9))
    times = dt * np.arange(n_steps + 1)

    rho = _as_matrix(eta)
    named = {"g": ops.Phi, "S": ops.Psi}
    results: Dict[str, float] = {}
    tail = 0.0
    for b_name, B in named.items():
        mean_B = float(np.real(np.trace(B @ rho)))
        commutator = B @ rho - rho @ B
        fluctuation = 0.5 * (B @ rho + rho @ B) - mean_B * rho
        columns = np.stack([vec(commutator), vec(fluctuation)], axis=1)
        series = _rk4_observables(L, columns, list(named.values()), dt, n_steps)
        for q, a_name in enumerate(named):
            chi_integrand = 1j * times * series[:, q, 0]
            xi_integrand = series[:, q, 1]
            results[f"chi_{a_name}{b_name}"] = _real_part(
                complex(simpson(chi_integrand, x=times)), "oracle chi"
            )
            results[f"xi_{a_name}{b_name}"] = _real_part(
                complex(simpson(xi_integrand, x=times)), "oracle xi"
            )
            for integrand in (chi_integrand, xi_integrand):
                peak = float(np.max(np.abs(integrand)))
                if peak > 0:
                    tail = max(tail, float(abs(integrand[-1])) / peak)
    results["tail"] = tail
    return results


def oracle_steady_state(
    L: Superoperator,
    params: PhysicalParams,
    dt: Optional[float] = None,
    T_max: Optional[float] = None,
) -> np.ndarray:
    """Long-time RK4 propagation of |g,0⟩⟨g,0| under ``L``."""
    dt = dt if dt is not None else 0.02 / params.fastest_rate
    T_max = T_max if T_max is not None else 60.0 / params.slowest_decay
    _check_oracle_step(L, dt, params)
    n_steps = int(np.ceil(T_max / dt - 1e-9))
    V = np.zeros(L.dim * L.dim, dtype=complex)
    V[0] = 1.0
    for _ in range(n_steps):
        V = _rk4_step(L.matrix, V, dt)
    return unvec(V, L.dim)


# ------------------------------------------------------------------
# Truncation diagnostic
# ------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationReport:
    n_max: int
    photons: float
    photons_next: float
    change: float
    converged: bool


def truncation_diagnostic(params: PhysicalParams, g: float, S: float) -> TruncationReport:
    """Photon-number change when the Fock truncation is raised by one."""

    def photons(n_max: int) -> float:
        local = params.model_copy(update={"n_max": n_max})
        eta = steady_state(liouvillian_at(local, g, S))
        return eta.photon_number(build_operators(n_max))

    base = photons(params.n_max)
    raised = photons(params.n_max + 1)
    change = abs(raised - base)
    return TruncationReport(
        n_max=params.n_max,
        photons=base,
        photons_next=raised,
        change=change,
        converged=change < TRUNCATION_TOL,
    )


def correlation_pairs(ops: OperatorSet) -> Sequence[Tuple[str, np.ndarray, np.ndarray]]:
    """(suffix, A, B) for the four ordered pairs in {Φ, Ψ}²."""
    return (
        ("gg", ops.Phi, ops.Phi),
        ("gS", ops.Phi, ops.Psi),
        ("Sg", ops.Psi, ops.Phi),
        ("SS", ops.Psi, ops.Psi),
    )
