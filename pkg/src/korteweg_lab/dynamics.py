"""Right-hand sides and time steppers.

Four systems share one driver:

* Euler-Korteweg with capillarity ``eps * kappa`` (``EKSystem``),
* compressible Euler, i.e. ``EKSystem`` with ``eps = 0``,
* the time-rescaled Euler-Korteweg system with friction ``-m/eps^2``
  (``FrictionEKSystem``),
* Cahn-Hilliard ``rho_t = div(rho grad(h'(rho) - C Lap rho))`` (``CahnHilliardSystem``).

Momentum systems are packed as ``y = stack([rho, m_1, ..., m_d])``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .constitutive import (
    DEFAULT_VACUUM_FLOOR,
    CapillarityLaw,
    DomainError,
    EnergyLaw,
    FluidState,
    VacuumError,
    chemical_potential,
    energy_density_array,
    stress_array,
)
from .grid import ScalarField, TorusGrid, VectorField, write_field_csv

__all__ = [
    "SolverConfig",
    "Trajectory",
    "SolverAbort",
    "StiffnessError",
    "EKSystem",
    "FrictionEKSystem",
    "CahnHilliardSystem",
    "ek_rhs",
    "euler_rhs",
    "ekf_rhs",
    "ch_rhs",
    "integrate",
    "load_trajectory",
]


class SolverAbort(RuntimeError):
    """Integration stopped early; ``trajectory`` holds the snapshots so far."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


class StiffnessError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    dt: float | str = "auto"
    cfl_advective: float = 0.4
    cfl_dispersive: float = 0.2
    vacuum_floor: float = DEFAULT_VACUUM_FLOOR
    scheme: str = "RK4"
    snapshot_every: int = 10
    exact_friction: bool = True
    gradient_blowup: float | None = 50.0
    spectral_tail: float | None = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ValueError(f"dt must be positive or 'auto', got {self.dt!r}")
        if self.scheme not in ("RK4", "IMEX-CH"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class Trajectory:
    """Snapshots of one run.  ``states`` are FluidStates, or ScalarFields for CH."""

    grid: TorusGrid
    times: np.ndarray
    states: list
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("one state per time required")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def rho(self) -> np.ndarray:
        """Densities stacked along a leading time axis."""
        return np.stack([s.rho.values if isinstance(s, FluidState) else s.values for s in self.states])

    @property
    def m(self) -> np.ndarray:
        return np.stack([s.m.components for s in self.states])

    def subsample(self, every: int) -> "Trajectory":
        idx = np.arange(0, len(self), every)
        if idx[-1] != len(self) - 1 and (len(self) - 1) % every:
            raise ValueError(f"{len(self) - 1} intervals not divisible by {every}")
        return Trajectory(self.grid, self.times[idx], [self.states[i] for i in idx],
                          {k: v[idx] for k, v in self.diagnostics.items()})

    def write(self, directory: str | Path) -> None:
        """Snapshot CSVs plus ``diagnostics.csv`` (one row per snapshot)."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(self.states):
            if isinstance(s, FluidState):
                write_field_csv(out / f"rho_{i:05d}.csv", s.rho)
                write_field_csv(out / f"m_{i:05d}.csv", s.m)
            else:
                write_field_csv(out / f"rho_{i:05d}.csv", s)
        keys = [k for k in ("mass", "energy", "min_rho") if k in self.diagnostics]
        extra = [k for k in self.diagnostics if k not in keys]
        with open(out / "diagnostics.csv", "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(["t"] + keys + extra) + "\n")
            for i, t in enumerate(self.times):
                row = [t] + [self.diagnostics[k][i] for k in keys + extra]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_trajectory(directory: str | Path, grid: TorusGrid) -> Trajectory:
    from .grid import read_field_csv

    src = Path(directory)
    with open(src / "diagnostics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    times = data[:, 0]
    diags = {k: data[:, j] for j, k in enumerate(header) if j > 0}
    states = []
    for i in range(len(times)):
        rho = read_field_csv(src / f"rho_{i:05d}.csv", grid)
        mpath = src / f"m_{i:05d}.csv"
        states.append(FluidState(rho, read_field_csv(mpath, grid)) if mpath.exists() else rho)
    return Trajectory(grid, times, states, diags)


# -- right-hand sides ------------------------------------------------------


def _flux_div(grid: TorusGrid, rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    """div(m (x) m / rho)."""
    u = m / rho
    return grid.div_tensor(m[:, None] * u[None, :])


def _ek_rates(grid, rho, m, energy, cap, eps, conservative=False):
    rho_t = -grid.div(m)
    if conservative:
        m_t = -_flux_div(grid, rho, m) + grid.div_tensor(stress_array(grid, rho, energy, cap, eps))
    else:
        mu = chemical_potential(grid, rho, energy, cap, eps)
        m_t = -_flux_div(grid, rho, m) - rho * grid.grad(mu)
    return rho_t, m_t


def _floor(rho: np.ndarray, floor: float, t: float | None = None) -> None:
    i = int(np.argmin(rho))
    if not rho.flat[i] >= floor:
        where = tuple(int(j) for j in np.unravel_index(i, rho.shape))
        when = "" if t is None else f" at t={t:.6g}"
        raise VacuumError(f"density {rho.flat[i]:.3e} below vacuum floor {floor:.1e}{when}, node {where}")


def ek_rhs(state: FluidState, energy: EnergyLaw, cap: CapillarityLaw, eps: float = 1.0,
           conservative: bool = False, vacuum_floor: float = DEFAULT_VACUUM_FLOOR):
    """``(rho_t, m_t)`` for Euler-Korteweg; ``conservative`` evaluates ``div S`` instead of ``-rho grad mu``."""
    _floor(state.rho.values, vacuum_floor)
    return _ek_rates(state.grid, state.rho.values, state.m.components, energy, cap, eps, conservative)


def euler_rhs(state: FluidState, energy: EnergyLaw, vacuum_floor: float = DEFAULT_VACUUM_FLOOR):
    return ek_rhs(state, energy, CapillarityLaw.constant(1.0), 0.0, vacuum_floor=vacuum_floor)


def ekf_rhs(state: FluidState, energy: EnergyLaw, C_kappa: float, eps: float,
            vacuum_floor: float = DEFAULT_VACUUM_FLOOR):
    """Friction-rescaled EK: transport scaled by ``1/eps``, friction ``-m/eps^2``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _floor(state.rho.values, vacuum_floor)
    rho_t, m_t = _ek_rates(state.grid, state.rho.values, state.m.components, energy,
                           CapillarityLaw.constant(C_kappa), 1.0)
    return rho_t / eps, m_t / eps - state.m.components / eps**2


def ch_rhs(rho: ScalarField, energy: EnergyLaw, C_kappa: float, vacuum_floor: float = DEFAULT_VACUUM_FLOOR):
    _floor(rho.values, vacuum_floor)
    grid = rho.grid
    return _ch_rate(grid, rho.values, energy, C_kappa)


def _ch_rate(grid, rho, energy, C):
    mu = energy.dh(rho) - C * grid.lap(rho)
    return grid.div(rho * grid.grad(mu))


# -- systems ---------------------------------------------------------------


class EKSystem:
    """Euler-Korteweg with capillarity ``eps*kappa``; ``eps=0`` is compressible Euler."""

    kind = "EK"

    def __init__(self, energy: EnergyLaw, cap: CapillarityLaw | None = None, eps: float = 1.0,
                 conservative: bool = False):
        self.energy = energy
        self.cap = cap if cap is not None else CapillarityLaw.constant(1.0)
        self.eps = 0.0 if cap is None else float(eps)
        self.conservative = conservative

    time_scale = 1.0

    def rate(self, grid, y):
        rho_t, m_t = _ek_rates(grid, y[0], y[1:], self.energy, self.cap, self.eps, self.conservative)
        return np.concatenate([rho_t[None], m_t])

    def stable_dt(self, grid, y, cfg: SolverConfig) -> float:
        rho, m = y[0], y[1:]
        dx = min(grid.spacing)
        speed = np.max(np.sqrt(np.sum((m / rho) ** 2, axis=0)) + self.energy.sound_speed(rho))
        dt = cfg.cfl_advective * dx / (math.sqrt(grid.dim) * max(speed, 1e-300))
        if self.eps > 0:
            # |k|^2 reaches dim * k_max^2 on a square grid
            disp = np.sqrt(self.eps * np.max(self.cap.kappa(rho)) * np.max(rho))
            dt = min(dt, cfg.cfl_dispersive * dx**2 / (grid.dim * disp))
        return dt / self.time_scale

    def energy_of(self, grid, y, cfg):
        cap_eps = self.eps
        return grid.integral(energy_density_array(grid, y[0], y[1:], self.energy, self.cap, cap_eps, cfg.vacuum_floor))

    def diagnostics(self, grid, y, cfg) -> dict[str, float]:
        out = {"mass": float(grid.integral(y[0])), "energy": float(self.energy_of(grid, y, cfg)),
               "min_rho": float(np.min(y[0]))}
        mom = grid.integral(y[1:])
        for i, p in enumerate(np.atleast_1d(mom)):
            out[f"momentum_{i + 1}"] = float(p)
        return out

    def pack(self, state: FluidState) -> np.ndarray:
        return np.concatenate([state.rho.values[None], state.m.components])

    def unpack(self, grid, y) -> FluidState:
        return FluidState(ScalarField(grid, y[0]), VectorField(grid, y[1:]))

    def step(self, grid, y, dt, cfg):
        return _rk4(lambda z: self.rate(grid, z), y, dt)


class FrictionEKSystem(EKSystem):
    """Time-rescaled EK with friction, constant capillarity ``C_kappa``."""

    kind = "EKF"

    def __init__(self, energy: EnergyLaw, C_kappa: float, eps: float):
        super().__init__(energy, CapillarityLaw.constant(C_kappa), 1.0)
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.relax = float(eps)

    @property
    def time_scale(self):
        return 1.0 / self.relax

    def rate(self, grid, y, with_friction=False):
        out = super().rate(grid, y) / self.relax
        if with_friction:
            out[1:] -= y[1:] / self.relax**2
        return out

    def diagnostics(self, grid, y, cfg):
        out = super().diagnostics(grid, y, cfg)
        out["dissipation"] = float(grid.integral(np.sum(y[1:] ** 2, axis=0) / y[0]) / self.relax**2)
        return out

    def step(self, grid, y, dt, cfg):
        if not cfg.exact_friction:
            if dt > self.relax**2 / 2:
                raise StiffnessError(f"dt={dt:.3e} exceeds eps^2/2={self.relax**2 / 2:.3e} with explicit friction")
            return _rk4(lambda z: self.rate(grid, z, with_friction=True), y, dt)
        # Strang: half exact friction, full transport RK4, half exact friction
        damp = math.exp(-0.5 * dt / self.relax**2)
        z = y.copy()
        z[1:] *= damp
        z = _rk4(lambda w: self.rate(grid, w), z, dt)
        z[1:] *= damp
        return z


class CahnHilliardSystem:
    """Cahn-Hilliard with first-order stabilised IMEX stepping.

    The biharmonic part ``-C M Lap^2`` with constant mobility ``M`` (max of
    the initial density unless given) is implicit; the rest is explicit.
    """

    kind = "CH"
    time_scale = 1.0

    def __init__(self, energy: EnergyLaw, C_kappa: float, mobility: float | None = None):
        self.energy = energy
        self.C = float(C_kappa)
        self.mobility = mobility

    def rate(self, grid, y):
        return _ch_rate(grid, y, self.energy, self.C)

    def stable_dt(self, grid, y, cfg):
        # explicit second-order part: rho h'' Lap; the fourth-order part is implicit
        kmax2 = float(np.max(grid.ksq))
        curv = float(np.max(np.abs(y * self.energy.d2h(y))))
        return cfg.cfl_dispersive / max(curv * kmax2, 1e-300)

    def free_energy(self, grid, y):
        return float(grid.integral(self.energy.h(y) + 0.5 * self.C * np.sum(grid.grad(y) ** 2, axis=0)))

    def diagnostics(self, grid, y, cfg):
        return {"mass": float(grid.integral(y)), "energy": self.free_energy(grid, y), "min_rho": float(np.min(y))}

    def pack(self, state):
        return np.array(state.values if isinstance(state, ScalarField) else state, dtype=float)

    def unpack(self, grid, y):
        return ScalarField(grid, y)

    def step(self, grid, y, dt, cfg):
        M = self.mobility
        stab = self.C * M * grid.ksq**2
        rhs = grid.fft(y) + dt * (grid.fft(self.rate(grid, y)) + stab * grid.fft(y))
        return grid.ifft(rhs / (1 + dt * stab))


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _tail_ratio(grid, rho):
    fh = np.abs(grid.fft(rho))
    k = np.sqrt(grid.ksq)
    kmax = np.max(k)
    tail = fh[k > 2 * kmax / 3]
    return float(np.max(tail) / max(fh.flat[0], 1e-300)) if tail.size else 0.0


def _max_velocity_gradient(grid, y) -> float:
    return max(float(np.max(np.abs(grid.grad(y[i] / y[0])))) for i in range(1, y.shape[0]))


def integrate(system, initial, cfg: SolverConfig, grid: TorusGrid | None = None) -> Trajectory:
    """Step ``system`` from ``initial`` to ``cfg.t_end``.

    The step size is fixed for the whole run (``auto`` is evaluated on the
    initial data and shrunk so that it divides ``t_end``).  Snapshots are
    taken every ``snapshot_every`` steps and at the end.  Failures raise
    :class:`SolverAbort` carrying the partial trajectory.
    """
    if grid is None:
        grid = initial.grid
    if isinstance(system, CahnHilliardSystem):
        if cfg.scheme != "IMEX-CH":
            cfg = replace(cfg, scheme="IMEX-CH")
        y = system.pack(initial)
        if system.mobility is None:
            system = CahnHilliardSystem(system.energy, system.C, float(np.max(y)))
    else:
        y = system.pack(initial)
    _floor(y[0] if y.ndim > grid.dim else y, cfg.vacuum_floor, 0.0)

    if cfg.dt == "auto":
        dt_lim = system.stable_dt(grid, y, cfg)
    else:
        dt_lim = float(cfg.dt)
    nsteps = max(1, math.ceil(cfg.t_end / dt_lim - 1e-9))
    dt = cfg.t_end / nsteps

    rho_of = (lambda z: z[0]) if y.ndim > grid.dim else (lambda z: z)
    grad_u0 = None
    if cfg.gradient_blowup is not None and y.ndim > grid.dim:
        # a state at rest has no gradient to compare with; use one unit per period instead
        grad_u0 = max(_max_velocity_gradient(grid, y), 1.0 / min(grid.period))

    times, states, diags = [], [], {}

    def record(t, z):
        times.append(t)
        states.append(system.unpack(grid, z.copy()))
        for k, v in system.diagnostics(grid, z, cfg).items():
            diags.setdefault(k, []).append(v)

    def partial():
        return Trajectory(grid, np.array(times), list(states), {k: np.array(v) for k, v in diags.items()})

    record(0.0, y)
    for n in range(1, nsteps + 1):
        t = n * dt
        try:
            y = system.step(grid, y, dt, cfg)
        except (DomainError, VacuumError) as exc:
            raise SolverAbort(f"step failed at t={t:.6g}: {exc}", partial()) from exc
        if not np.all(np.isfinite(y)):
            raise SolverAbort(f"non-finite values at t={t:.6g}", partial())
        try:
            _floor(rho_of(y), cfg.vacuum_floor, t)
        except VacuumError as exc:
            raise SolverAbort(str(exc), partial()) from exc
        if n % cfg.snapshot_every == 0 or n == nsteps:
            if grad_u0 is not None:
                gu = _max_velocity_gradient(grid, y)
                if gu > cfg.gradient_blowup * grad_u0:
                    raise SolverAbort(f"velocity gradient grew {gu / grad_u0:.1f}x by t={t:.6g}; "
                                      "smooth regime lost, shorten t_end", partial())
            if cfg.spectral_tail is not None and _tail_ratio(grid, rho_of(y)) > cfg.spectral_tail:
                raise SolverAbort(f"spectral tail above {cfg.spectral_tail:g} at t={t:.6g}; under-resolved",
                                  partial())
            record(t, y)
    traj = partial()
    traj.diagnostics["dt"] = np.full(len(traj), dt)
    return traj
