"""Fokker-Planck coefficients from steady-state expectations and correlations.

A ``BlochPoint`` holds everything the internal (atom + cavity) dynamics
contributes at one (g, S) pair. Local force, axial friction and diffusion
combine those numbers with the field gradients at a position. A
``CoefficientCache`` tabulates BlochPoints on a (g, S) grid and interpolates
them bicubically, so trajectories never solve the master equation per step.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RectBivariateSpline
from tqdm import tqdm

from config import PhysicalParams
from exceptions import (
    CacheBuildError,
    CavityTrapError,
    ConsistencyError,
    GridRangeError,
    InvalidArgumentError,
)
from services.fields import FieldPoint, field_point
from services.hilbert import (
    OperatorSet,
    build_hamiltonian,
    build_liouvillian,
    build_operators,
    correlation_chi,
    correlation_pairs,
    correlation_xi,
    steady_state,
)
from utils.output import log
from utils.timing import measure_time

BLOCH_FIELDS: Tuple[str, ...] = (
    "exp_Phi",
    "exp_Psi",
    "exp_ee",
    "chi_gg",
    "chi_gS",
    "chi_Sg",
    "chi_SS",
    "xi_gg",
    "xi_gS",
    "xi_Sg",
    "xi_SS",
)
# Odd under the atomic sign flip σ → −σ, which maps g → −g.
ODD_FIELDS = frozenset({"exp_Phi", "chi_gS", "chi_Sg", "xi_gS", "xi_Sg"})
CASE_FIELDS: Dict[str, Tuple[str, ...]] = {
    "a": BLOCH_FIELDS,
    "b": ("exp_Phi", "exp_ee", "chi_gg", "xi_gg"),
}

SPONTANEOUS_PATTERN = np.array([2.0 / 5.0, 3.0 / 10.0, 3.0 / 10.0])
XI_GG_FLOOR = -1e-9
CLAMP_TOL = 1e-9
# Cached lookups compare against the grid-wide ξ magnitudes.
CACHED_CLAMP_TOL = 1e-3
RANGE_TOL = 1e-9


@dataclass(frozen=True)
class BlochPoint:
    """Steady-state expectations and correlation integrals at one (g, S).

    Fields are floats for a direct solve, or arrays for vectorized lookups.
    Partial lookups leave the fields they did not request as ``None``.
    """

    exp_Phi: Optional[np.ndarray] = None
    exp_Psi: Optional[np.ndarray] = None
    exp_ee: Optional[np.ndarray] = None
    chi_gg: Optional[np.ndarray] = None
    chi_gS: Optional[np.ndarray] = None
    chi_Sg: Optional[np.ndarray] = None
    chi_SS: Optional[np.ndarray] = None
    xi_gg: Optional[np.ndarray] = None
    xi_gS: Optional[np.ndarray] = None
    xi_Sg: Optional[np.ndarray] = None
    xi_SS: Optional[np.ndarray] = None

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class LocalCoefficients:
    """Everything the Itô equations need at a position, per unit mass."""

    accel: np.ndarray  # φ/M [μm/μs²], shape (..., 3)
    gamma_xx: np.ndarray  # [1/μs]
    diffusion_xx: np.ndarray  # dipole D_xx/M² [μm²/μs³]
    spont_diffusion: np.ndarray  # (ħk/M)² γ ⟨σ†σ⟩ E_ii [μm²/μs³], shape (..., 3)
    exp_ee: np.ndarray
    g: np.ndarray


# ------------------------------------------------------------------
# Direct solves
# ------------------------------------------------------------------


def _check_range(params: PhysicalParams, g: float, S: float) -> None:
    g_ok = abs(g) <= params.g0 * (1.0 + RANGE_TOL)
    s_ok = -RANGE_TOL * params.S_max <= S <= params.S_max * (1.0 + RANGE_TOL) + RANGE_TOL
    if not (g_ok and s_ok):
        raise InvalidArgumentError(
            "(g, S) outside the physical range",
            details={"g": g, "S": S, "g0": params.g0, "S_max": params.S_max},
        )


def bloch_point(
    g: float,
    S: float,
    params: PhysicalParams,
    ops: Optional[OperatorSet] = None,
) -> BlochPoint:
    """Steady state, expectations and all eight χ/ξ integrals at (g, S).

    Args:
        g: Atom-cavity coupling, |g| ≤ g₀.
        S: FORT Stark shift, 0 ≤ S ≤ S_max.
        params: Physical parameters.
        ops: Operator set for ``params.n_max``; built when omitted.

    Raises:
        InvalidArgumentError: If (g, S) lies outside the physical range.
        NumericalError: Propagated from the steady-state or resolvent solves.
        ConsistencyError: If ξ^{gg} comes out negative.
    """
    _check_range(params, float(g), float(S))
    ops = ops if ops is not None else build_operators(params.n_max)
    L = build_liouvillian(build_hamiltonian(params, g, S, ops), params.kappa, params.gamma)
    eta = steady_state(L)

    values = {
        "exp_Phi": eta.expect(ops.Phi),
        "exp_Psi": eta.expect(ops.Psi),
        "exp_ee": eta.excited_population(ops),
    }
    for suffix, A, B in correlation_pairs(ops):
        values[f"chi_{suffix}"] = correlation_chi(L, eta, A, B)
        values[f"xi_{suffix}"] = correlation_xi(L, eta, A, B)

    if values["xi_gg"] < XI_GG_FLOOR:
        raise ConsistencyError(
            "Dipole fluctuation integral is negative",
            details={"g": float(g), "S": float(S), "xi_gg": values["xi_gg"]},
        )
    return BlochPoint(**values)


class DirectBlochSource:
    """Ground-truth Bloch source: one master-equation solve per point."""

    def __init__(self, params: PhysicalParams):
        self.params = params
        self.ops = build_operators(params.n_max)

    def lookup(self, g, S, names: Optional[Sequence[str]] = None) -> BlochPoint:
        g = np.asarray(g, dtype=float)
        S = np.asarray(S, dtype=float)
        g_flat, S_flat = np.broadcast_arrays(g, S)
        shape = g_flat.shape
        names = tuple(names or BLOCH_FIELDS)
        out = {name: np.empty(g_flat.size) for name in names}
        for i, (gi, si) in enumerate(zip(g_flat.ravel(), S_flat.ravel())):
            point = bloch_point(gi, si, self.params, self.ops)
            for name in names:
                out[name][i] = getattr(point, name)
        return BlochPoint(**{name: values.reshape(shape) for name, values in out.items()})


# ------------------------------------------------------------------
# Coefficient assembly
# ------------------------------------------------------------------


def _column(values) -> np.ndarray:
    return np.asarray(values, dtype=float)[..., None]


def assemble_force(params: PhysicalParams, field: FieldPoint, bloch: BlochPoint) -> np.ndarray:
    """Mean dipole force per unit mass.

    Case a: φ/M = −(ħ/M)(∇g⟨Φ⟩ + ∇S⟨Ψ⟩). Case b: φ/M = −(ħ/M)∇g⟨Φ⟩ + (ħ/M)∇S.
    """
    h = params.hbar_over_mass
    accel = -h * np.asarray(field.grad_g) * _column(bloch.exp_Phi)
    if params.stark_case == "a":
        return accel - h * np.asarray(field.grad_S) * _column(bloch.exp_Psi)
    return accel + h * np.asarray(field.grad_S)


def assemble_friction_xx(params: PhysicalParams, field: FieldPoint, bloch: BlochPoint) -> np.ndarray:
    """Axial friction rate Γ_xx [1/μs]; the FORT drops out in case b."""
    h = params.hbar_over_mass
    gx = np.asarray(field.grad_g)[..., 0]
    rate = gx * gx * bloch.chi_gg
    if params.stark_case == "a":
        sx = np.asarray(field.grad_S)[..., 0]
        rate = rate + gx * sx * (bloch.chi_gS + bloch.chi_Sg) + sx * sx * bloch.chi_SS
    return h * rate


def assemble_diffusion_xx(
    params: PhysicalParams,
    field: FieldPoint,
    bloch: BlochPoint,
    clamp_tol: float = CLAMP_TOL,
    xi_scales: Optional[Dict[str, float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Axial dipole diffusion and spontaneous-emission diffusion, per M².

    Returns:
        ``(dipole, spontaneous)`` where ``dipole`` is D_xx/M² and
        ``spontaneous`` has a trailing axis of three holding
        (ħk/M)²γ⟨σ†σ⟩·(E_xx, E_yy, E_zz).

    Raises:
        ConsistencyError: If the dipole part is negative beyond
            ``clamp_tol`` times the sum of its term magnitudes. With
            ``xi_scales`` each ξ enters that sum at its tabulated maximum
            magnitude instead of its local value.
    """
    h2 = params.hbar_over_mass ** 2
    gx = np.asarray(field.grad_g)[..., 0]
    terms = [gx * gx * bloch.xi_gg]
    if xi_scales is None:
        magnitudes = [np.abs(terms[0])]
    else:
        magnitudes = [gx * gx * xi_scales["xi_gg"]]
    if params.stark_case == "a":
        sx = np.asarray(field.grad_S)[..., 0]
        terms.append(gx * sx * (bloch.xi_gS + bloch.xi_Sg))
        terms.append(sx * sx * bloch.xi_SS)
        if xi_scales is None:
            magnitudes.extend(np.abs(t) for t in terms[1:])
        else:
            magnitudes.append(np.abs(gx * sx) * (xi_scales["xi_gS"] + xi_scales["xi_Sg"]))
            magnitudes.append(sx * sx * xi_scales["xi_SS"])
    dipole = h2 * sum(terms)
    scale = h2 * sum(magnitudes)

    violation = dipole < -clamp_tol * scale
    if np.any(violation):
        worst = float(np.min(np.where(violation, dipole, 0.0)))
        raise ConsistencyError(
            "Dipole diffusion is negative beyond tolerance",
            details={"min_value": worst, "tolerance": clamp_tol},
        )
    dipole = np.maximum(dipole, 0.0)

    exp_ee = np.asarray(bloch.exp_ee, dtype=float)
    spont = _column(params.recoil_velocity ** 2 * params.gamma * exp_ee) * SPONTANEOUS_PATTERN
    return dipole, spont


def local_coefficients(
    params: PhysicalParams,
    r,
    source,
    clamp_tol: float = CLAMP_TOL,
) -> LocalCoefficients:
    """Force, friction and diffusion at positions ``r`` (shape (3,) or (n, 3)).

    ``source`` is a ``DirectBlochSource`` or a ``CoefficientCache``; cache
    lookups outside the tabulated grid raise GridRangeError.
    """
    field = field_point(params, r)
    bloch = source.lookup(field.g, field.S, names=CASE_FIELDS[params.stark_case])
    xi_scales = source.field_scales if isinstance(source, CoefficientCache) else None
    dipole, spont = assemble_diffusion_xx(params, field, bloch, clamp_tol, xi_scales)
    return LocalCoefficients(
        accel=assemble_force(params, field, bloch),
        gamma_xx=assemble_friction_xx(params, field, bloch),
        diffusion_xx=dipole,
        spont_diffusion=spont,
        exp_ee=np.asarray(bloch.exp_ee, dtype=float),
        g=field.g,
    )


class CoefficientProvider:
    """Binds parameters to a Bloch source; the only physics input of the SDE."""

    def __init__(self, params: PhysicalParams, source, clamp_tol: Optional[float] = None):
        self.params = params
        self.source = source
        if clamp_tol is None:
            clamp_tol = CACHED_CLAMP_TOL if isinstance(source, CoefficientCache) else CLAMP_TOL
        self.clamp_tol = clamp_tol

    def local(self, r) -> LocalCoefficients:
        return local_coefficients(self.params, r, self.source, self.clamp_tol)


# ------------------------------------------------------------------
# Cache
# ------------------------------------------------------------------


class CoefficientCache:
    """Bicubic tables of every Bloch scalar over g ∈ [0, g₀], S ∈ [0, S_max]."""

    def __init__(
        self,
        g_nodes: np.ndarray,
        s_nodes: np.ndarray,
        values: Dict[str, np.ndarray],
        fingerprint: str = "",
        order: int = 3,
    ):
        self.g_nodes = np.asarray(g_nodes, dtype=float)
        self.s_nodes = np.asarray(s_nodes, dtype=float)
        self.values = {name: np.asarray(values[name], dtype=float) for name in BLOCH_FIELDS}
        self.fingerprint = fingerprint
        self.order = order
        self.field_scales = {name: float(np.max(np.abs(table))) for name, table in self.values.items()}
        self._splines = {
            name: RectBivariateSpline(self.g_nodes, self.s_nodes, table, kx=order, ky=order, s=0)
            for name, table in self.values.items()
        }

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.g_nodes.size, self.s_nodes.size)

    @property
    def g_max(self) -> float:
        return float(self.g_nodes[-1])

    @property
    def S_max(self) -> float:
        return float(self.s_nodes[-1])

    def node(self, i: int, j: int) -> BlochPoint:
        """Stored values at grid node (g_nodes[i], s_nodes[j])."""
        return BlochPoint(**{name: float(table[i, j]) for name, table in self.values.items()})

    def lookup(self, g, S, names: Optional[Sequence[str]] = None) -> BlochPoint:
        """Interpolated BlochPoint; negative g uses the parity extension."""
        g = np.asarray(g, dtype=float)
        S = np.asarray(S, dtype=float)
        abs_g = np.abs(g)

        g_limit = self.g_max * (1.0 + RANGE_TOL)
        s_limit = self.S_max * (1.0 + RANGE_TOL)
        outside = (abs_g > g_limit) | (S > s_limit) | (S < -RANGE_TOL * self.S_max)
        outside = outside | ~np.isfinite(g) | ~np.isfinite(S)
        if np.any(outside):
            idx = np.flatnonzero(np.ravel(outside))[0]
            g_bad = float(np.ravel(np.broadcast_to(g, outside.shape))[idx])
            s_bad = float(np.ravel(np.broadcast_to(S, outside.shape))[idx])
            raise GridRangeError(
                f"Point (g={g_bad:.6g}, S={s_bad:.6g}) outside cached grid",
                details={"g": g_bad, "S": s_bad, "g_max": self.g_max, "S_max": self.S_max},
            )

        abs_g = np.minimum(abs_g, self.g_max)
        S = np.clip(S, 0.0, self.S_max)
        sign = np.where(g < 0, -1.0, 1.0)
        out = {}
        for name in names or BLOCH_FIELDS:
            value = self._splines[name].ev(abs_g, S)
            out[name] = value * sign if name in ODD_FIELDS else value
        return BlochPoint(**out)

    # ------ Persistence ------

    def save(self, path) -> Path:
        """Write node tables to ``path`` (.npz) atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                np.savez(
                    f,
                    g_nodes=self.g_nodes,
                    s_nodes=self.s_nodes,
                    fingerprint=np.array(self.fingerprint),
                    **self.values,
                )
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def load(cls, path) -> "CoefficientCache":
        with np.load(path, allow_pickle=False) as data:
            return cls(
                g_nodes=data["g_nodes"],
                s_nodes=data["s_nodes"],
                values={name: data[name] for name in BLOCH_FIELDS},
                fingerprint=str(data["fingerprint"]),
            )


def _solve_row(params: PhysicalParams, g: float, s_nodes: np.ndarray) -> Dict[str, np.ndarray]:
    ops = build_operators(params.n_max)
    row = {name: np.empty(s_nodes.size) for name in BLOCH_FIELDS}
    for j, S in enumerate(s_nodes):
        try:
            point = bloch_point(g, S, params, ops)
        except CavityTrapError as e:
            raise CacheBuildError(
                f"Bloch solve failed at node (g={g:.6g}, S={S:.6g})",
                details={"g": float(g), "S": float(S), "error": e.message, **e.details},
            ) from e
        for name in BLOCH_FIELDS:
            row[name][j] = getattr(point, name)
    return row


@measure_time("build_cache")
def build_cache(
    params: PhysicalParams,
    n_g: int = 129,
    n_s: int = 129,
    workers: int = 1,
    verbose: bool = True,
) -> CoefficientCache:
    """Tabulate BlochPoints on a uniform (g, S) grid.

    Rows of constant g are solved in parallel when ``workers > 1``; any node
    failure aborts the build with the node coordinates.
    """
    if n_g < 33 or n_s < 33:
        raise InvalidArgumentError("Cache grid needs at least 33 nodes per axis", details={"n_g": n_g, "n_s": n_s})
    if params.S_max <= 0:
        raise InvalidArgumentError("Cache grid needs S_max > 0", details={"S_max": params.S_max})

    g_nodes = np.linspace(0.0, params.g0, n_g)
    s_nodes = np.linspace(0.0, params.S_max, n_s)
    values = {name: np.empty((n_g, n_s)) for name in BLOCH_FIELDS}

    def store(i: int, row: Dict[str, np.ndarray]) -> None:
        for name in BLOCH_FIELDS:
            values[name][i] = row[name]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_solve_row, params, g, s_nodes) for g in g_nodes]
            iterator = tqdm(futures, desc="Bloch grid") if verbose else futures
            for i, future in enumerate(iterator):
                store(i, future.result())
    else:
        iterator = tqdm(g_nodes, desc="Bloch grid") if verbose else g_nodes
        for i, g in enumerate(iterator):
            store(i, _solve_row(params, g, s_nodes))

    return CoefficientCache(g_nodes, s_nodes, values, fingerprint=params.bloch_fingerprint())


def cache_path(params: PhysicalParams, n_g: int, n_s: int, cache_dir) -> Path:
    return Path(cache_dir) / f"bloch_{params.bloch_fingerprint()}_{n_g}x{n_s}.npz"


def load_or_build_cache(
    params: PhysicalParams,
    n_g: int,
    n_s: int,
    cache_dir,
    workers: int = 1,
    verbose: bool = True,
) -> CoefficientCache:
    """Reuse a saved cache for these parameters, or build and save one."""
    path = cache_path(params, n_g, n_s, cache_dir)
    if path.exists():
        cache = CoefficientCache.load(path)
        if cache.fingerprint == params.bloch_fingerprint() and cache.shape == (n_g, n_s):
            if verbose:
                log("CACHE", f"Loaded {n_g}x{n_s} coefficient grid from {path}")
            return cache
    if verbose:
        log("CACHE", f"Building {n_g}x{n_s} coefficient grid with {workers} worker(s)")
    cache = build_cache(params, n_g, n_s, workers=workers, verbose=verbose)
    cache.save(path)
    if verbose:
        log("CACHE", f"Saved coefficient grid to {path}")
    return cache



def interpolation_errors(
    cache: CoefficientCache,
    params: PhysicalParams,
    points: int = 50,
    seed: int = 0,
    floor: float = 1e-3,
) -> Dict[str, float]:
    """Worst relative error of each cached scalar against direct solves.

    Points are drawn uniformly inside the grid. Each error is taken relative
    to ``max(|direct|, floor · grid-wide magnitude)`` so fields crossing zero
    are judged on their own scale.
    """
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.01, 0.99, points) * cache.g_max
    S = rng.uniform(0.01, 0.99, points) * cache.S_max
    ops = build_operators(params.n_max)
    interpolated = cache.lookup(g, S)
    worst = dict.fromkeys(BLOCH_FIELDS, 0.0)
    for k in range(points):
        direct = bloch_point(float(g[k]), float(S[k]), params, ops)
        for name in BLOCH_FIELDS:
            expected = getattr(direct, name)
            denominator = max(abs(expected), floor * cache.field_scales[name]) or 1.0
            error = abs(float(getattr(interpolated, name)[k]) - expected) / denominator
            worst[name] = max(worst[name], error)
    return worst
