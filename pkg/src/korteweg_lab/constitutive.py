"""Energy laws, capillarity laws, Korteweg stress and total energy.

The internal energy is a gamma-law plus an optional smooth bump with
compact support in (0, inf); the bump is what makes ``h`` non-convex.
Every capillary term carries the scalar ``eps`` (``kappa -> eps*kappa``),
so ``eps=1`` is the plain Euler-Korteweg system and ``eps=0`` is Euler.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import FieldError, ScalarField, TensorField, TorusGrid, VectorField, check_finite

__all__ = [
    "DomainError",
    "VacuumError",
    "BumpSpec",
    "EnergyLaw",
    "CapillarityLaw",
    "FluidState",
    "Set2Verdict",
    "energy_density",
    "pressure",
    "set2_check",
    "korteweg_stress",
    "total_energy",
    "variational_derivative",
]

DEFAULT_VACUUM_FLOOR = 1e-8


class DomainError(ValueError):
    """Argument outside the domain of a constitutive function."""


class VacuumError(FieldError):
    """Density fell below the vacuum floor where the model needs it positive."""


def _nonneg(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError(f"negative density (min {np.min(rho):.3e})")
    return rho


@dataclass(frozen=True)
class BumpSpec:
    """``e(rho) = A exp(-1/(1 - s^2))`` with ``s`` mapping the support to (-1, 1)."""

    amplitude: float
    support_lo: float
    support_hi: float

    def __post_init__(self):
        if not 0 < self.support_lo < self.support_hi:
            raise ValueError(f"need 0 < support_lo < support_hi, got [{self.support_lo}, {self.support_hi}]")

    @property
    def _scale(self) -> float:
        return 2.0 / (self.support_hi - self.support_lo)

    def _parts(self, rho):
        rho = np.asarray(rho, dtype=float)
        s = (2 * rho - (self.support_lo + self.support_hi)) / (self.support_hi - self.support_lo)
        inside = np.abs(s) < 1
        si = np.where(inside, s, 0.0)
        w = 1 - si**2
        g = np.where(inside, np.exp(-1 / w), 0.0)
        return si, w, g, inside

    def e(self, rho):
        _, _, g, _ = self._parts(rho)
        return self.amplitude * g

    def de(self, rho):
        s, w, g, _ = self._parts(rho)
        return self.amplitude * self._scale * g * (-2 * s / w**2)

    def d2e(self, rho):
        s, w, g, _ = self._parts(rho)
        q = -2 * s / w**2
        dq = -2 / w**2 - 8 * s**2 / w**3
        return self.amplitude * self._scale**2 * g * (q**2 + dq)

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        return rho * self.de(rho) - self.e(rho)


@dataclass(frozen=True)
class EnergyLaw:
    """``h(rho) = c rho^gamma + e(rho)``."""

    c: float = 1.0
    gamma: float = 2.0
    bump: BumpSpec | None = None

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 1:
            raise ValueError(f"need c > 0 and gamma > 1, got c={self.c}, gamma={self.gamma}")

    # gamma-law part
    def h_gamma(self, rho):
        return self.c * _nonneg(rho) ** self.gamma

    def dh_gamma(self, rho):
        return self.c * self.gamma * _nonneg(rho) ** (self.gamma - 1)

    def d2h_gamma(self, rho):
        rho = _nonneg(rho)
        with np.errstate(divide="ignore"):
            return self.c * self.gamma * (self.gamma - 1) * rho ** (self.gamma - 2)

    # full law
    def h(self, rho):
        out = self.h_gamma(rho)
        return out + self.bump.e(rho) if self.bump else out

    def dh(self, rho):
        out = self.dh_gamma(rho)
        return out + self.bump.de(rho) if self.bump else out

    def d2h(self, rho):
        out = self.d2h_gamma(rho)
        return out + self.bump.d2e(rho) if self.bump else out

    def pressure(self, rho):
        p = (self.gamma - 1) * self.h_gamma(rho)
        return p + self.bump.pressure(rho) if self.bump else p

    def dpressure(self, rho):
        return _nonneg(rho) * self.d2h(rho)

    def sound_speed(self, rho):
        return np.sqrt(np.maximum(self.dpressure(rho), 0.0))

    def min_curvature(self, samples: int = 4001) -> tuple[float, float, bool]:
        """Smallest ``h''`` over the bump support: (value, location, elliptic?)."""
        if self.bump is None:
            return np.inf, np.nan, False
        rho = np.linspace(self.bump.support_lo, self.bump.support_hi, samples)[1:-1]
        d2 = self.d2h(rho)
        i = int(np.argmin(d2))
        return float(d2[i]), float(rho[i]), bool(d2[i] < 0)


@dataclass(frozen=True)
class CapillarityLaw:
    """Capillarity coefficient ``kappa(rho)``.

    ``constant``: kappa = coefficient; ``qhd``: kappa = 1/rho;
    ``power``: kappa = coefficient * rho**exponent; ``custom``: three
    callables (kappa, kappa', kappa'').
    """

    kind: str
    coefficient: float = 1.0
    exponent: float = 0.0
    funcs: tuple[Callable, Callable, Callable] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "qhd", "power", "custom"):
            raise ValueError(f"unknown capillarity kind {self.kind!r}")
        if self.kind == "custom" and (self.funcs is None or len(self.funcs) != 3):
            raise ValueError("custom capillarity needs (kappa, dkappa, d2kappa)")
        if self.kind != "custom" and self.coefficient <= 0:
            raise ValueError("capillarity coefficient must be positive")
        if self.kind == "qhd":
            object.__setattr__(self, "exponent", -1.0)
            object.__setattr__(self, "coefficient", 1.0)
        if self.kind == "constant":
            object.__setattr__(self, "exponent", 0.0)

    @classmethod
    def constant(cls, C: float) -> "CapillarityLaw":
        return cls("constant", coefficient=C)

    @classmethod
    def qhd(cls) -> "CapillarityLaw":
        return cls("qhd")

    @classmethod
    def power(cls, exponent: float, coefficient: float = 1.0) -> "CapillarityLaw":
        return cls("power", coefficient=coefficient, exponent=exponent)

    @classmethod
    def custom(cls, kappa, dkappa, d2kappa) -> "CapillarityLaw":
        return cls("custom", funcs=(kappa, dkappa, d2kappa))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def singular_at_vacuum(self) -> bool:
        return self.kind == "custom" or self.exponent < 0

    def kappa(self, rho):
        if self.kind == "custom":
            return np.asarray(self.funcs[0](rho), dtype=float)
        rho = np.asarray(rho, dtype=float)
        if self.kind == "constant":
            return np.full_like(rho, self.coefficient)
        return self.coefficient * rho**self.exponent

    def dkappa(self, rho):
        if self.kind == "custom":
            return np.asarray(self.funcs[1](rho), dtype=float)
        rho = np.asarray(rho, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(rho)
        a = self.exponent
        return self.coefficient * a * rho ** (a - 1)

    def d2kappa(self, rho):
        if self.kind == "custom":
            return np.asarray(self.funcs[2](rho), dtype=float)
        rho = np.asarray(rho, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(rho)
        a = self.exponent
        return self.coefficient * a * (a - 1) * rho ** (a - 2)


@dataclass(frozen=True, eq=False)
class FluidState:
    """Density and momentum on one grid."""

    rho: ScalarField
    m: VectorField

    def __post_init__(self):
        if self.rho.grid != self.m.grid:
            raise FieldError("rho and m live on different grids")
        check_finite(self.rho.values, "rho")
        check_finite(self.m.components, "m")
        if np.min(self.rho.values) < 0:
            raise DomainError(f"negative density in state (min {np.min(self.rho.values):.3e})")

    @classmethod
    def from_arrays(cls, grid: TorusGrid, rho, m) -> "FluidState":
        m = np.asarray(m, dtype=float)
        if m.ndim == grid.dim:
            m = m[None]
        return cls(ScalarField(grid, rho), VectorField(grid, m))

    @property
    def grid(self) -> TorusGrid:
        return self.rho.grid

    @property
    def mass(self) -> float:
        return float(self.grid.integral(self.rho.values))

    def momentum(self) -> np.ndarray:
        return np.asarray(self.grid.integral(self.m.components))

    def velocity(self) -> np.ndarray:
        return self.m.components / self.rho.values


def energy_density(law: EnergyLaw, rho):
    return law.h(rho)


def pressure(law: EnergyLaw, rho):
    return law.pressure(rho)


def require_floor(rho: np.ndarray, floor: float, what: str = "density") -> None:
    i = int(np.argmin(rho))
    if rho.flat[i] < floor:
        idx = np.unravel_index(i, rho.shape)
        raise VacuumError(f"{what} {rho.flat[i]:.3e} below vacuum floor {floor:.1e} at node {tuple(int(j) for j in idx)}")


# -- Set2 admissibility --------------------------------------------------


@dataclass
class Set2Verdict:
    passed: bool
    hessian_margin: float  # min of (k k'' - 2 k'^2) / (k k'' + 2 k'^2), normalised
    hessian_min: float  # raw min of k k'' - 2 k'^2
    growth_constant: float  # smallest C with rho^2 kappa <= C (h + rho)
    slope_constant: float  # smallest C with |rho kappa'| <= C kappa
    rho_range: tuple[float, float]
    reasons: list[str] = field(default_factory=list)
    worst_location: float = float("nan")


def _set2_constants(cap: CapillarityLaw, energy: EnergyLaw, rho: np.ndarray):
    k, dk, d2k = cap.kappa(rho), cap.dkappa(rho), cap.d2kappa(rho)
    return k, dk, d2k, np.max(rho**2 * k / (energy.h(rho) + rho)), np.max(np.abs(rho * dk) / k)


def set2_check(cap: CapillarityLaw, energy: EnergyLaw, rho_range: tuple[float, float] = (0.0, np.inf),
               samples: int = 2001, tol: float = 1e-12) -> Set2Verdict:
    """Sampled check of the Set2 conditions on ``rho_range``.

    An end point at 0 or infinity is probed by widening log-spaced windows;
    a constant that keeps growing by more than a decade per widening is
    declared unbounded.
    """
    lo, hi = map(float, rho_range)
    if lo < 0 or hi <= lo:
        raise DomainError(f"bad density range {rho_range}")
    open_lo, open_hi = lo == 0.0, np.isinf(hi)
    reasons: list[str] = []

    def window(w):
        a = 10.0 ** (-w) if open_lo else lo
        b = 10.0**w if open_hi else hi
        if open_lo or open_hi:
            return np.geomspace(max(a, 1e-300), b, samples)
        return np.linspace(a, b, samples)

    rho = window(4)
    k, dk, d2k, growth, slope = _set2_constants(cap, energy, rho)
    if np.any(~(k > 0)):
        where = float(rho[np.argmax(~(k > 0))])
        return Set2Verdict(False, -np.inf, -np.inf, np.inf, np.inf, (lo, hi),
                           [f"kappa not positive at rho={where:.6g}"], where)

    if open_lo or open_hi:
        growth_w, slope_w = [], []
        for w in (2, 4, 6, 8):
            r = window(w)
            if np.any(~(cap.kappa(r) > 0)):
                where = float(r[np.argmax(~(cap.kappa(r) > 0))])
                return Set2Verdict(False, -np.inf, -np.inf, np.inf, np.inf, (lo, hi),
                                   [f"kappa not positive at rho={where:.6g}"], where)
            _, _, _, g, s = _set2_constants(cap, energy, r)
            growth_w.append(g)
            slope_w.append(s)
        if growth_w[-1] > 10 * growth_w[1]:
            growth = np.inf
            reasons.append("rho^2 kappa <= C (h + rho) has no uniform constant on the range")
        else:
            growth = growth_w[-1]
        if slope_w[-1] > 10 * slope_w[1]:
            slope = np.inf
            reasons.append("|rho kappa'| <= C kappa has no uniform constant on the range")
        else:
            slope = slope_w[-1]

    hess = k * d2k - 2 * dk**2
    scale = np.abs(k * d2k) + 2 * dk**2
    norm = np.where(scale > 0, hess / np.where(scale > 0, scale, 1.0), 0.0)
    i = int(np.argmin(norm))
    margin = float(norm[i])
    if margin < -tol:
        reasons.append(f"kappa kappa'' - 2 kappa'^2 < 0 (normalised margin {margin:.3g}, "
                       f"value {hess[i]:.3e} at rho={rho[i]:.6g})")
    return Set2Verdict(not reasons, margin, float(np.min(hess)), float(growth), float(slope),
                       (lo, hi), reasons, float(rho[i]))


# -- field-level constitutive operators ------------------------------------


def chemical_potential(grid: TorusGrid, rho: np.ndarray, energy: EnergyLaw, cap: CapillarityLaw,
                       eps: float) -> np.ndarray:
    """``h'(rho) + eps kappa'/2 |grad rho|^2 - eps div(kappa grad rho)`` on arrays."""
    mu = energy.dh(rho)
    if eps == 0:
        return mu
    g = grid.grad(rho)
    if cap.is_constant:
        return mu - eps * cap.coefficient * grid.div(g)
    k, dk = cap.kappa(rho), cap.dkappa(rho)
    return mu + 0.5 * eps * dk * np.sum(g**2, axis=0) - eps * grid.div(k * g)


def stress_array(grid: TorusGrid, rho: np.ndarray, energy: EnergyLaw, cap: CapillarityLaw,
                 eps: float) -> np.ndarray:
    d = grid.dim
    S = np.zeros((d, d) + grid.shape)
    iso = -energy.pressure(rho)
    if eps != 0:
        g = grid.grad(rho)
        k, dk = cap.kappa(rho), cap.dkappa(rho)
        iso = iso - 0.5 * eps * (rho * dk + k) * np.sum(g**2, axis=0) + eps * grid.div(rho * k * g)
        S -= eps * k * g[:, None] * g[None, :]
    for i in range(d):
        S[i, i] += iso
    return S


def _check_vacuum(rho: np.ndarray, cap: CapillarityLaw, vacuum_floor: float) -> None:
    if cap.singular_at_vacuum:
        require_floor(rho, vacuum_floor)


def korteweg_stress(state: FluidState, energy: EnergyLaw, cap: CapillarityLaw, eps: float = 1.0,
                    vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> TensorField:
    rho = state.rho.values
    _check_vacuum(rho, cap, vacuum_floor)
    return TensorField(state.grid, stress_array(state.grid, rho, energy, cap, eps), symmetric=True)


def kinetic_density(rho: np.ndarray, m: np.ndarray, vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> np.ndarray:
    """``|m|^2 / (2 rho)``, zero where both vanish below the floor."""
    m2 = np.sum(m**2, axis=0)
    low = rho < vacuum_floor
    if np.any(low & (m2 > 0)):
        raise VacuumError("kinetic energy undefined: momentum nonzero below the vacuum floor")
    return np.where(low, 0.0, 0.5 * m2 / np.where(low, 1.0, rho))


def energy_density_array(grid: TorusGrid, rho: np.ndarray, m: np.ndarray, energy: EnergyLaw,
                         cap: CapillarityLaw, eps: float, vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> np.ndarray:
    out = kinetic_density(rho, m, vacuum_floor) + energy.h(rho)
    if eps != 0:
        out = out + 0.5 * eps * cap.kappa(rho) * np.sum(grid.grad(rho) ** 2, axis=0)
    return out


def total_energy(state: FluidState, energy: EnergyLaw, cap: CapillarityLaw, eps: float = 1.0,
                 vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> float:
    grid = state.grid
    dens = energy_density_array(grid, state.rho.values, state.m.components, energy, cap, eps, vacuum_floor)
    return float(grid.integral(dens))


def variational_derivative(rho: ScalarField, energy: EnergyLaw, cap: CapillarityLaw, eps: float = 1.0,
                           vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> ScalarField:
    check_finite(rho.values, "rho")
    _check_vacuum(rho.values, cap, vacuum_floor)
    return ScalarField(rho.grid, chemical_potential(rho.grid, rho.values, energy, cap, eps))
