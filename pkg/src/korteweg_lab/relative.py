"""Relative quantities and relative-energy functionals.

A relative quantity is the value at one state minus the first-order
Taylor expansion about a reference state.  Pointwise functions here act
on arrays (vectors carry a leading component axis); the report functions
take :class:`FluidState` pairs or trajectory pairs and integrate over the
torus and, for the right-hand-side terms, in time by the trapezoid rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constitutive import (
    DEFAULT_VACUUM_FLOOR,
    CapillarityLaw,
    EnergyLaw,
    FluidState,
    VacuumError,
    chemical_potential,
    kinetic_density,
    require_floor,
)
from .grid import ScalarField, TorusGrid

__all__ = [
    "UnsupportedConfiguration",
    "RelativeEnergyReport",
    "RhsTermBreakdown",
    "LiftResult",
    "rel_scalar",
    "rel_K",
    "rel_F",
    "rel_s",
    "rel_r",
    "rel_H",
    "ek_relative_energy",
    "ek_rhs_terms",
    "bump_identity_residual",
    "reduced_relative_energy",
    "euler_relative_energy",
    "ch_lift",
    "write_reports_csv",
]


class UnsupportedConfiguration(ValueError):
    pass


def rel_scalar(f, fp, rho, rho_bar):
    """``f(rho) - f(rho_bar) - f'(rho_bar) (rho - rho_bar)``."""
    rho = np.asarray(rho, dtype=float)
    rho_bar = np.asarray(rho_bar, dtype=float)
    return f(rho) - f(rho_bar) - fp(rho_bar) * (rho - rho_bar)


def _ref_positive(rho_bar, floor):
    try:
        require_floor(np.asarray(rho_bar), floor, "reference density")
    except VacuumError as exc:
        raise VacuumError(f"{exc} (strong solution must stay bounded away from vacuum)") from None


def rel_K(state: FluidState, ref: FluidState, vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> np.ndarray:
    """``rho/2 |m/rho - m_bar/rho_bar|^2``."""
    return _rel_K(state.rho.values, state.m.components, ref.rho.values, ref.m.components, vacuum_floor)


def _rel_K(rho, m, rho_bar, m_bar, floor):
    _ref_positive(rho_bar, floor)
    u_bar = m_bar / rho_bar
    # rho/2 |m/rho - u_bar|^2 = |m|^2/(2 rho) - m.u_bar + rho |u_bar|^2/2, finite at vacuum
    return kinetic_density(rho, m, floor) - np.sum(m * u_bar, axis=0) + 0.5 * rho * np.sum(u_bar**2, axis=0)


# Capillary building blocks F, s, r, H as functions of (rho, q), all scaled by eps.

def _dot(a, b):
    return np.sum(a * b, axis=0)


def rel_F(rho, q, rho_bar, q_bar, cap: CapillarityLaw, eps: float = 1.0):
    """Relative capillary energy for ``F(rho, q) = eps kappa(rho) |q|^2 / 2``."""
    k, kb, dkb = cap.kappa(rho), cap.kappa(rho_bar), cap.dkappa(rho_bar)
    q2, qb2 = _dot(q, q), _dot(q_bar, q_bar)
    F = 0.5 * k * q2 - 0.5 * kb * qb2 - 0.5 * dkb * qb2 * (rho - rho_bar) - kb * _dot(q_bar, q - q_bar)
    return eps * F


def rel_s(rho, q, rho_bar, q_bar, cap: CapillarityLaw, eps: float = 1.0):
    """Relative quantity for ``s = eps (kappa + rho kappa') |q|^2 / 2``."""
    a = cap.kappa(rho) + rho * cap.dkappa(rho)
    ab = cap.kappa(rho_bar) + rho_bar * cap.dkappa(rho_bar)
    dab = 2 * cap.dkappa(rho_bar) + rho_bar * cap.d2kappa(rho_bar)
    q2, qb2 = _dot(q, q), _dot(q_bar, q_bar)
    s = 0.5 * a * q2 - 0.5 * ab * qb2 - 0.5 * dab * qb2 * (rho - rho_bar) - ab * _dot(q_bar, q - q_bar)
    return eps * s


def rel_r(rho, q, rho_bar, q_bar, cap: CapillarityLaw, eps: float = 1.0):
    """Relative quantity for ``r = eps rho kappa q`` (a vector)."""
    c = rho * cap.kappa(rho)
    cb = rho_bar * cap.kappa(rho_bar)
    dcb = cap.kappa(rho_bar) + rho_bar * cap.dkappa(rho_bar)
    r = c * q - cb * q_bar - dcb * q_bar * (rho - rho_bar) - cb * (q - q_bar)
    return eps * r


def rel_H(rho, q, rho_bar, q_bar, cap: CapillarityLaw, eps: float = 1.0):
    """Relative quantity for ``H = eps kappa q (x) q`` (a symmetric tensor)."""
    k, kb, dkb = cap.kappa(rho), cap.kappa(rho_bar), cap.dkappa(rho_bar)
    dq = q - q_bar
    outer = lambda a, b: a[:, None] * b[None, :]
    H = (k * outer(q, q) - kb * outer(q_bar, q_bar) - dkb * (rho - rho_bar) * outer(q_bar, q_bar)
         - kb * (outer(dq, q_bar) + outer(q_bar, dq)))
    return eps * H


@dataclass
class RelativeEnergyReport:
    kinetic: float
    internal_gamma: float
    internal_bump: float
    capillary: float
    total: float
    time: float = 0.0

    @property
    def internal(self) -> float:
        return self.internal_gamma + self.internal_bump


def ek_relative_energy(state: FluidState, ref: FluidState, energy: EnergyLaw, cap: CapillarityLaw,
                       eps: float = 1.0, time: float = 0.0,
                       vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> RelativeEnergyReport:
    """Integrated ``K(.|.) + h(.|.) + F(.|.)`` with the gamma/bump split of ``h(.|.)``."""
    grid = state.grid
    rho, m = state.rho.values, state.m.components
    rb, mb = ref.rho.values, ref.m.components
    kin = grid.integral(_rel_K(rho, m, rb, mb, vacuum_floor))
    ig = grid.integral(rel_scalar(energy.h_gamma, energy.dh_gamma, rho, rb))
    ib = grid.integral(rel_scalar(energy.bump.e, energy.bump.de, rho, rb)) if energy.bump else 0.0
    cp = grid.integral(rel_F(rho, grid.grad(rho), rb, grid.grad(rb), cap, eps)) if eps else 0.0
    parts = [float(v) for v in (kin, ig, ib, cp)]
    return RelativeEnergyReport(*parts, total=float(sum(parts)), time=time)


def reduced_relative_energy(state: FluidState, ref: FluidState, energy: EnergyLaw, cap: CapillarityLaw | float,
                            eps: float = 1.0, vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> float:
    """``int rho/2 |u - u_bar|^2 + h_gamma(rho|rho_bar) + eps C/2 |grad(rho - rho_bar)|^2``.

    The bump's relative energy is left out on purpose; only constant
    capillarity is meaningful here.
    """
    if isinstance(cap, CapillarityLaw):
        if not cap.is_constant:
            raise UnsupportedConfiguration(f"reduced relative energy needs constant capillarity, got {cap.kind}")
        C = cap.coefficient
    else:
        C = float(cap)
    grid = state.grid
    rho, rb = state.rho.values, ref.rho.values
    dens = (_rel_K(rho, state.m.components, rb, ref.m.components, vacuum_floor)
            + rel_scalar(energy.h_gamma, energy.dh_gamma, rho, rb)
            + 0.5 * eps * C * np.sum(grid.grad(rho - rb) ** 2, axis=0))
    return float(grid.integral(dens))


def euler_relative_energy(state_eps: FluidState, ref: FluidState, energy: EnergyLaw, cap: CapillarityLaw,
                          eps: float, vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> float:
    """Relative energy against a capillarity-free reference.

    The capillary part is the full ``eps kappa(rho) |grad rho|^2 / 2`` of
    the candidate; the reference carries no gradient energy.
    """
    grid = state_eps.grid
    rho, rb = state_eps.rho.values, ref.rho.values
    dens = (_rel_K(rho, state_eps.m.components, rb, ref.m.components, vacuum_floor)
            + rel_scalar(energy.h, energy.dh, rho, rb))
    if eps:
        dens = dens + 0.5 * eps * cap.kappa(rho) * np.sum(grid.grad(rho) ** 2, axis=0)
    return float(grid.integral(dens))


# -- right-hand-side terms along trajectory pairs ---------------------------


@dataclass
class RhsTermBreakdown:
    """Time-integrated right-hand-side contributions over ``[0, t]``.

    Each entry is signed as a contribution to the change of the relative
    energy, so for two smooth conservative trajectories
    ``report(t) - report(0) == total`` up to quadrature error.  ``rates``
    holds the instantaneous integrands at every snapshot time.
    """

    convective: float = 0.0
    div_pressure: float = 0.0
    hessian_H: float = 0.0
    grad_div_r: float = 0.0
    bump_correction: float = 0.0
    friction_dissipation: float = 0.0
    defect_E: float = 0.0
    times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    rates: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    TERMS = ("convective", "div_pressure", "hessian_H", "grad_div_r", "bump_correction",
             "friction_dissipation", "defect_E")

    @property
    def total(self) -> float:
        """Sum of the terms of the full relative energy (the bump correction excluded)."""
        return sum(getattr(self, k) for k in self.TERMS if k != "bump_correction")

    @property
    def reduced_total(self) -> float:
        """Terms driving the reduced functional: full terms minus the bump's own balance."""
        return self.total - self.bump_correction


def _grad_vec(grid: TorusGrid, v: np.ndarray) -> np.ndarray:
    """``G[i, j] = d_j v_i``."""
    return np.stack([grid.grad(v[i]) for i in range(grid.dim)])


def _check_pair(candidate, reference):
    if len(candidate.times) != len(reference.times) or np.max(np.abs(candidate.times - reference.times)) > 1e-12:
        raise ValueError("candidate and reference trajectories must share their time grid")


def _bump_rates(grid, energy, rho, m, rb, mb, scale=1.0):
    """Rate of ``int e(rho|rho_bar)``: the two integrals of the bump balance."""
    b = energy.bump
    if b is None:
        return 0.0
    e1 = b.de(rho) - b.de(rb) - b.d2e(rb) * (rho - rb)
    div_term = -grid.integral(grid.div(mb) * e1)
    flux = b.d2e(rho) * grid.grad(rho) - b.d2e(rb) * grid.grad(rb)
    flux_term = grid.integral(np.sum(flux * (m - mb), axis=0))
    return scale * float(div_term + flux_term)


def ek_rhs_terms(candidate, reference, energy: EnergyLaw, cap: CapillarityLaw, eps: float = 1.0,
                 relaxation: float | None = None, defect: list | None = None,
                 vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> RhsTermBreakdown:
    """Right-hand-side integrals of the relative-energy balance along two trajectories.

    With ``relaxation=eps_f`` the transport terms carry ``1/eps_f`` and the
    friction term ``-(1/eps_f^2) int rho |u - u_bar|^2`` is added; ``defect``
    (one momentum-defect array per snapshot) adds ``-int E (rho/rho_bar).(u - u_bar)``.
    """
    _check_pair(candidate, reference)
    grid = candidate.grid
    scale = 1.0 if relaxation is None else 1.0 / relaxation
    rates = {k: np.zeros(len(candidate.times)) for k in RhsTermBreakdown.TERMS}
    for n, (st, rf) in enumerate(zip(candidate.states, reference.states)):
        rho, m = st.rho.values, st.m.components
        rb, mb = rf.rho.values, rf.m.components
        _ref_positive(rb, vacuum_floor)
        ub = mb / rb
        w = m / rho - ub
        Gu = _grad_vec(grid, ub)
        divu = grid.div(ub)
        q, qb = grid.grad(rho), grid.grad(rb)
        rates["convective"][n] = -scale * grid.integral(np.einsum("i...,j...,ij...->...", rho * w, w, Gu))
        p_rel = rel_scalar(energy.pressure, energy.dpressure, rho, rb)
        s_rel = rel_s(rho, q, rb, qb, cap, eps) if eps else 0.0
        rates["div_pressure"][n] = -scale * grid.integral(divu * (s_rel + p_rel))
        if eps:
            H = rel_H(rho, q, rb, qb, cap, eps)
            r = rel_r(rho, q, rb, qb, cap, eps)
            rates["hessian_H"][n] = -scale * grid.integral(np.einsum("ij...,ij...->...", Gu, H))
            rates["grad_div_r"][n] = -scale * grid.integral(np.sum(grid.grad(divu) * r, axis=0))
        rates["bump_correction"][n] = _bump_rates(grid, energy, rho, m, rb, mb, scale)
        if relaxation is not None:
            rates["friction_dissipation"][n] = -grid.integral(rho * np.sum(w**2, axis=0)) / relaxation**2
        if defect is not None:
            rates["defect_E"][n] = -grid.integral(np.sum(defect[n] * (rho / rb) * w, axis=0))
    t = candidate.times
    totals = {k: float(np.trapezoid(v, t)) if len(t) > 1 else 0.0 for k, v in rates.items()}
    return RhsTermBreakdown(**totals, times=t.copy(), rates=rates)


def bump_identity_residual(candidate, reference, energy: EnergyLaw, relaxation: float | None = None) -> float:
    """``| [int e(rho|rho_bar)]_0^t - int_0^t (bump balance) |`` with trapezoid in time."""
    _check_pair(candidate, reference)
    if energy.bump is None:
        return 0.0
    grid = candidate.grid
    b = energy.bump
    scale = 1.0 if relaxation is None else 1.0 / relaxation
    vals, rates = [], []
    for st, rf in zip(candidate.states, reference.states):
        rho, rb = st.rho.values, rf.rho.values
        vals.append(grid.integral(rel_scalar(b.e, b.de, rho, rb)))
        rates.append(_bump_rates(grid, energy, rho, st.m.components, rb, rf.m.components, scale))
    change = vals[-1] - vals[0]
    return float(abs(change - np.trapezoid(rates, candidate.times)))


# -- Cahn-Hilliard lift ---------------------------------------------------


@dataclass
class LiftResult:
    times: np.ndarray
    m_bar: list
    E_bar: list
    m_norm: np.ndarray
    E_norm: np.ndarray

    def states(self, rho_bar: list, grid: TorusGrid) -> list[FluidState]:
        return [FluidState.from_arrays(grid, r, m) for r, m in zip(rho_bar, self.m_bar)]


def _time_derivative(times: np.ndarray, values: list) -> list:
    """Centred differences inside, second-order one-sided at the ends."""
    y = np.stack(values)
    return list(np.gradient(y, times, axis=0, edge_order=2))


def ch_lift(times, rho_bar: list, grid: TorusGrid, energy: EnergyLaw, C_kappa: float, eps: float,
            vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> LiftResult:
    """Momentum lift ``m_bar = -eps rho_bar grad(h'(rho_bar) - C Lap rho_bar)`` and its defect.

    The defect is the residual of the friction momentum equation evaluated
    on the lift, with ``m_bar_t`` from time differences of the snapshots.
    """
    times = np.asarray(times, dtype=float)
    rho_bar = [r.values if isinstance(r, ScalarField) else np.asarray(r) for r in rho_bar]
    cap = CapillarityLaw.constant(C_kappa)
    m_bar, forcing = [], []
    for r in rho_bar:
        _ref_positive(r, vacuum_floor)
        mu = chemical_potential(grid, r, energy, cap, 1.0)
        f = r * grid.grad(mu)
        m_bar.append(-eps * f)
        forcing.append(f)
    if len(times) >= 3:
        m_t = _time_derivative(times, m_bar)
    else:
        m_t = [np.zeros_like(m_bar[0]) for _ in m_bar]
    E_bar = []
    for r, mb, mt, f in zip(rho_bar, m_bar, m_t, forcing):
        flux = grid.div_tensor(mb[:, None] * (mb / r)[None, :])
        E_bar.append(mt + flux / eps + mb / eps**2 + f / eps)
    m_norm = np.array([np.max(np.abs(v)) for v in m_bar])
    E_norm = np.array([np.max(np.abs(v)) for v in E_bar])
    return LiftResult(times, m_bar, E_bar, m_norm, E_norm)


def write_reports_csv(path: str | Path, reports: list[RelativeEnergyReport],
                      breakdown: RhsTermBreakdown | None = None) -> None:
    """Rows ``t,kinetic,internal_gamma,internal_bump,capillary,total[,term rates]``."""
    cols = ["t", "kinetic", "internal_gamma", "internal_bump", "capillary", "total"]
    terms = list(RhsTermBreakdown.TERMS) if breakdown is not None else []
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(cols + terms) + "\n")
        for n, r in enumerate(reports):
            row = [r.time, r.kinetic, r.internal_gamma, r.internal_bump, r.capillary, r.total]
            row += [breakdown.rates[k][n] for k in terms]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
