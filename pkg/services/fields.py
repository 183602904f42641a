"""Cavity-mode and FORT-mode geometry, dressed detunings and validity checks.

Positions are Cartesian with x along the cavity axis and ρ² = y² + z².
Every function accepts positions of shape (3,) or (..., 3) and returns
values broadcast over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import factorial

from config import PhysicalParams
from exceptions import InvalidArgumentError
from schemas import QuasiclassicalReport

RECOIL_PASS_RATIO = 0.01
EPSILON_PASS = 0.1


@dataclass(frozen=True)
class FieldPoint:
    """Coupling and Stark shift with their Cartesian gradients."""

    g: np.ndarray
    grad_g: np.ndarray
    S: np.ndarray
    grad_S: np.ndarray


def _split(r: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    return r[..., 0], r[..., 1], r[..., 2]


def lg_intensity(rho, x, P: float, m: int, W: float, k_S: float):
    """Standing-wave LG(0,m) intensity in the nearly planar approximation.

    I = 4P·2^{m+1}/(π m!)·ρ^{2m}/W^{2(m+1)}·exp(−2ρ²/W²)·sin²(k_S x)
    """
    if W <= 0 or m < 1:
        raise InvalidArgumentError("LG mode needs W > 0 and m >= 1", details={"W": W, "m": m})
    rho = np.asarray(rho, dtype=float)
    x = np.asarray(x, dtype=float)
    prefactor = 4.0 * P * 2.0 ** (m + 1) / (math.pi * factorial(m, exact=True))
    return (
        prefactor
        * rho ** (2 * m)
        / W ** (2 * (m + 1))
        * np.exp(-2.0 * rho ** 2 / W ** 2)
        * np.sin(k_S * x) ** 2
    )


def stark_prefactor(power: float, alpha_over_hbar: float, m: int, W: float) -> float:
    """S₀ implied by a beam power: 2^{m+1}·P·α/(π m! ħ W^{2m+2})."""
    return 2.0 ** (m + 1) * power * alpha_over_hbar / (math.pi * factorial(m, exact=True) * W ** (2 * m + 2))


def stark_from_intensity(intensity, alpha_over_hbar: float):
    """S = α I / (4ħ)."""
    return alpha_over_hbar * np.asarray(intensity, dtype=float) / 4.0


def coupling(params: PhysicalParams, r) -> Tuple[np.ndarray, np.ndarray]:
    """Atom-cavity coupling g(r) and its gradient.

    The fundamental mode is g₀ sin(k_g x) e^{−ρ²/W_g²}; the ``lg01`` mode is
    g₀ √2 (ρ/W_g) sin(k_g x) e^{−ρ²/W_g²}.
    """
    x, y, z = _split(r)
    k = params.k_g
    W2 = params.W_g ** 2
    rho2 = y * y + z * z
    envelope = np.exp(-rho2 / W2)
    sin_kx = np.sin(k * x)
    cos_kx = np.cos(k * x)

    if params.cavity_mode == "gaussian":
        radial = envelope
        # ∂/∂y of e^{-ρ²/W²} is −2y/W² times the envelope
        d_radial_dy = -2.0 * y / W2 * envelope
        d_radial_dz = -2.0 * z / W2 * envelope
    else:
        rho = np.sqrt(rho2)
        radial = math.sqrt(2.0) * rho / params.W_g * envelope
        # d/dρ [ρ e^{-ρ²/W²}] / ρ, finite on the axis where the gradient is set to 0
        slope = math.sqrt(2.0) / params.W_g * envelope * (1.0 - 2.0 * rho2 / W2)
        inv_rho = np.divide(1.0, rho, out=np.zeros_like(rho), where=rho > 0)
        d_radial_dy = slope * y * inv_rho
        d_radial_dz = slope * z * inv_rho

    g = params.g0 * sin_kx * radial
    grad = np.stack(
        [
            params.g0 * k * cos_kx * radial,
            params.g0 * sin_kx * d_radial_dy,
            params.g0 * sin_kx * d_radial_dz,
        ],
        axis=-1,
    )
    return g, grad


def stark_shift(params: PhysicalParams, r) -> Tuple[np.ndarray, np.ndarray]:
    """FORT Stark shift S = S₀ ρ^{2m} sin²(k_S x) e^{−2ρ²/W_S²} and its gradient."""
    x, y, z = _split(r)
    k = params.k_S
    m = params.m
    W2 = params.W_S ** 2
    rho2 = y * y + z * z
    envelope = np.exp(-2.0 * rho2 / W2)
    sin2 = np.sin(k * x) ** 2
    power = rho2 ** m
    power_lower = rho2 ** (m - 1)

    S = params.S0 * power * sin2 * envelope
    # ∂/∂y of ρ^{2m} e^{-2ρ²/W²} is y (2m ρ^{2m-2} − 4ρ^{2m}/W²) e^{-2ρ²/W²}
    radial_slope = params.S0 * sin2 * envelope * (2.0 * m * power_lower - 4.0 * power / W2)
    grad = np.stack(
        [
            params.S0 * power * envelope * k * np.sin(2.0 * k * x),
            radial_slope * y,
            radial_slope * z,
        ],
        axis=-1,
    )
    return S, grad


def field_point(params: PhysicalParams, r) -> FieldPoint:
    g, grad_g = coupling(params, r)
    S, grad_S = stark_shift(params, r)
    return FieldPoint(g=g, grad_g=grad_g, S=S, grad_S=grad_S)


def dressed_detunings(params: PhysicalParams, r) -> Tuple[np.ndarray, np.ndarray]:
    """One-excitation dressed-state transition frequencies relative to ω_a.

    Case a: Δ± = S ± √(g² + S²). Case b: the equal shift of both levels
    cancels and the pair is ±g; it is returned as (|g|, −|g|) so that Δ₊ is
    always the upper branch, also where the mode function makes g negative.
    """
    g, _ = coupling(params, r)
    if params.stark_case == "b":
        return np.abs(g), -np.abs(g)
    S, _ = stark_shift(params, r)
    split = np.sqrt(g * g + S * S)
    return S + split, S - split


# ------------------------------------------------------------------
# Geometry helpers
# ------------------------------------------------------------------


def fort_rho_max(params: PhysicalParams) -> float:
    return params.rho_max


def well_centers(params: PhysicalParams) -> np.ndarray:
    """FORT antinodes x_n = (n − ½)·λ_S/2 for n = 1 … 30."""
    n = np.arange(1, params.cavity_half_wells + 1)
    return (n - 0.5) * params.lambda_S / 2.0


def axial_trap_frequency(params: PhysicalParams) -> float:
    """Harmonic axial angular frequency of −ħS about an antinode at ρ_max."""
    return math.sqrt(2.0 * params.hbar_over_mass * params.S_max) * params.k_S


def radial_trap_frequency(params: PhysicalParams) -> float:
    """Harmonic radial angular frequency of −ħS about ρ_max at an antinode."""
    curvature = params.S_max * 4.0 * params.m / params.rho_max ** 2
    return math.sqrt(params.hbar_over_mass * curvature)


def validate_quasiclassical(params: PhysicalParams, momentum_spread: float) -> QuasiclassicalReport:
    """Check the separation of scales behind the semiclassical treatment.

    Args:
        params: Physical parameters.
        momentum_spread: Momentum spread per unit mass Δp/M [μm/μs].

    Returns:
        QuasiclassicalReport with ε₁ = ħk/Δp, ε₂ = kΔp/(Mγ), ε₂κ = kΔp/(Mκ)
        and the recoil-to-linewidth ratios.
    """
    k = params.k_a
    recoil_velocity = params.recoil_velocity
    recoil_frequency = 0.5 * params.hbar_over_mass * k * k

    if momentum_spread > 0:
        eps1 = recoil_velocity / momentum_spread
    else:
        eps1 = math.inf
    eps2 = k * momentum_spread / params.gamma
    eps2_kappa = k * momentum_spread / params.kappa
    recoil_gamma = recoil_frequency / params.gamma
    recoil_kappa = recoil_frequency / params.kappa

    failures = [
        name
        for name, value, limit in (
            ("eps1", eps1, EPSILON_PASS),
            ("eps2", eps2, EPSILON_PASS),
            ("eps2_kappa", eps2_kappa, EPSILON_PASS),
            ("recoil_gamma", recoil_gamma, RECOIL_PASS_RATIO),
            ("recoil_kappa", recoil_kappa, RECOIL_PASS_RATIO),
        )
        if not value < limit
    ]
    return QuasiclassicalReport(
        momentum_spread=momentum_spread,
        eps1=eps1,
        eps2=eps2,
        eps2_kappa=eps2_kappa,
        recoil_frequency=recoil_frequency,
        recoil_gamma_ratio=recoil_gamma,
        recoil_kappa_ratio=recoil_kappa,
        balance_spread=math.sqrt(recoil_velocity * params.gamma / k),
        recoil_passed=recoil_gamma < RECOIL_PASS_RATIO and recoil_kappa < RECOIL_PASS_RATIO,
        failures=failures,
    )
