"""Space-time mollification of trajectories.

The kernel is the standard smooth bump rescaled to ``[0, 1]``; the scaled
kernel is ``phi_n(x) = n phi(n x)``.  The support is one-sided, so the
temporal convolution only looks backwards and trajectories are first
extended to negative times with ``rho = rho_0`` and ``m = 0``.

In space the convolution is a discrete circular convolution with the
sampled (nonnegative, unit-sum) kernel, done as a Fourier multiplier.  In
time it is the trapezoid rule over stored snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .constitutive import DEFAULT_VACUUM_FLOOR, FluidState, require_floor
from .dynamics import Trajectory
from .grid import TorusGrid

__all__ = [
    "MollifierSpec",
    "kernel",
    "ExtendedTrajectory",
    "extend_negative_time",
    "restrict_nonnegative",
    "mollify_series",
    "mollify_pair",
    "continuity_residual",
    "jensen_gap",
]

MIN_SNAPSHOTS_PER_WIDTH = 8


def _raw_bump(tau):
    tau = np.asarray(tau, dtype=float)
    s = 2 * tau - 1
    inside = np.abs(s) < 1
    w = np.where(inside, 1 - s**2, 1.0)
    return np.where(inside, np.exp(-1 / w), 0.0)


@lru_cache(maxsize=None)
def _bump_mass() -> float:
    halves = [quad(lambda t: float(_raw_bump(t)), a, b, epsabs=1e-14, limit=200)[0]
              for a, b in ((0.0, 0.5), (0.5, 1.0))]
    return sum(halves)


def kernel(tau):
    """Unit-mass smooth bump supported on ``[0, 1]``."""
    return _raw_bump(tau) / _bump_mass()


@dataclass(frozen=True)
class MollifierSpec:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"mollifier scale must be a positive integer, got {self.n}")

    @property
    def width(self) -> float:
        return 1.0 / self.n

    def __call__(self, x):
        return self.n * kernel(self.n * np.asarray(x, dtype=float))

    def space_symbol(self, grid: TorusGrid) -> np.ndarray:
        """Fourier multiplier of the sampled, normalised product kernel."""
        sym = np.ones(grid.spectral_shape, dtype=complex)
        npts = grid.points_per_axis
        for axis, (h, length) in enumerate(zip(grid.spacing, grid.period)):
            if self.width >= length:
                raise ValueError(f"kernel width {self.width} not smaller than period {length}")
            w = self(np.arange(npts) * h) * h
            w /= w.sum()
            wh = np.fft.rfft(w) if axis == grid.dim - 1 else np.fft.fft(w)
            shape = [1] * grid.dim
            shape[axis] = wh.size
            sym = sym * wh.reshape(shape)
        return sym


def _spacing(times: np.ndarray) -> float:
    d = np.diff(times)
    if d.size == 0 or np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
        raise ValueError("mollification needs uniformly spaced snapshots")
    return float(d[0])


@dataclass
class ExtendedTrajectory(Trajectory):
    """Trajectory with a prepended rest segment.

    ``junction`` is the index of ``t = 0``.  The momentum jumps there from 0
    to ``m_0``, so time quadrature uses the mean of the one-sided limits at
    that node (composite trapezoid for a piecewise smooth integrand).
    """

    junction: int = field(default=0)


def extend_negative_time(traj: Trajectory, n: int) -> ExtendedTrajectory:
    """Prepend ``rho = rho_0, m = 0`` on a segment of length at least ``1/n``."""
    if abs(traj.times[0]) > 1e-14:
        raise ValueError("trajectory must start at t = 0")
    dt = _spacing(traj.times)
    k = int(np.ceil((1.0 / n) / dt - 1e-9))
    s0 = traj.states[0]
    still = FluidState.from_arrays(traj.grid, s0.rho.values, np.zeros_like(s0.m.components))
    times = np.concatenate([-dt * np.arange(k, 0, -1), traj.times])
    states = [still] * k + list(traj.states)
    return ExtendedTrajectory(traj.grid, times, states, junction=k)


def restrict_nonnegative(traj: Trajectory) -> Trajectory:
    keep = traj.times >= -1e-14
    idx = np.flatnonzero(keep)
    return Trajectory(traj.grid, traj.times[idx], [traj.states[i] for i in idx],
                      {k: v[idx] for k, v in traj.diagnostics.items() if len(v) == len(traj)})


def _time_weights(spec: MollifierSpec, times: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    lag = t - times
    idx = np.flatnonzero((lag >= -1e-12) & (lag <= spec.width + 1e-12))
    w = spec(lag[idx])
    total = w.sum()
    if total <= 0:
        raise ValueError(f"no snapshots inside the kernel window at t={t}")
    return idx, w / total


def _check_coverage(spec: MollifierSpec, times: np.ndarray, out_times: np.ndarray) -> float:
    dt = _spacing(times)
    if spec.width / dt < MIN_SNAPSHOTS_PER_WIDTH:
        raise ValueError(f"need >= {MIN_SNAPSHOTS_PER_WIDTH} snapshots per kernel width; "
                         f"have {spec.width / dt:.2f} (spacing {dt:g}, width {spec.width:g})")
    need = np.min(out_times) - spec.width
    if times[0] > need + 1e-12:
        raise ValueError(f"trajectory starts at t={times[0]:g} but mollified output at t={np.min(out_times):g} "
                         f"needs data back to t={need:g}; extend to negative times first")
    return dt


def mollify_series(grid: TorusGrid, times: np.ndarray, values: np.ndarray, spec: MollifierSpec,
                   out_times: np.ndarray) -> np.ndarray:
    """Space-time mollify a stacked series ``values[time, ...]``; returns ``out[len(out_times), ...]``."""
    times = np.asarray(times, dtype=float)
    out_times = np.asarray(out_times, dtype=float)
    _check_coverage(spec, times, out_times)
    sym = spec.space_symbol(grid)
    out = np.empty((len(out_times),) + values.shape[1:])
    for k, t in enumerate(out_times):
        idx, w = _time_weights(spec, times, t)
        avg = np.tensordot(w, values[idx], axes=(0, 0))
        out[k] = grid.multiplier(sym, avg)
    return out


def _halve_at_junction(traj: Trajectory, values: np.ndarray) -> np.ndarray:
    j = getattr(traj, "junction", None)
    if j is None:
        return values
    out = values.copy()
    out[j] *= 0.5
    return out


def _default_out_times(spec: MollifierSpec, times: np.ndarray) -> np.ndarray:
    return times[times >= times[0] + spec.width - 1e-12]


def mollify_pair(traj: Trajectory, spec: MollifierSpec, out_times=None) -> Trajectory:
    """Mollified pair ``(rho_n, m_n)`` as a trajectory on ``out_times``.

    By default the output times are the snapshot times with a full kernel
    window behind them.
    """
    out_times = _default_out_times(spec, traj.times) if out_times is None else np.asarray(out_times, float)
    rho_n = mollify_series(traj.grid, traj.times, traj.rho, spec, out_times)
    m_n = mollify_series(traj.grid, traj.times, _halve_at_junction(traj, traj.m), spec, out_times)
    states = [FluidState.from_arrays(traj.grid, r, m) for r, m in zip(rho_n, m_n)]
    return Trajectory(traj.grid, out_times, states)


def continuity_residual(mollified: Trajectory) -> float:
    """Max over interior times of ``|centred d_t rho_n + div m_n|``."""
    if len(mollified) < 3:
        raise ValueError("need at least three mollified snapshots")
    dt = _spacing(mollified.times)
    rho, m = mollified.rho, mollified.m
    grid = mollified.grid
    worst = 0.0
    for k in range(1, len(mollified) - 1):
        res = (rho[k + 1] - rho[k - 1]) / (2 * dt) + grid.div(m[k])
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def jensen_gap(traj: Trajectory, spec: MollifierSpec, out_times=None,
               vacuum_floor: float = DEFAULT_VACUUM_FLOOR) -> np.ndarray:
    """Nodewise ``(|m|^2/rho)_n - |m_n|^2/rho_n``; nonnegative by convexity."""
    out_times = _default_out_times(spec, traj.times) if out_times is None else np.asarray(out_times, float)
    rho, m = traj.rho, traj.m
    require_floor(rho, vacuum_floor)
    kin = _halve_at_junction(traj, np.sum(m**2, axis=1) / rho)
    m = _halve_at_junction(traj, m)
    grid = traj.grid
    kin_n = mollify_series(grid, traj.times, kin, spec, out_times)
    rho_n = mollify_series(grid, traj.times, rho, spec, out_times)
    m_n = mollify_series(grid, traj.times, m, spec, out_times)
    return kin_n - np.sum(m_n**2, axis=1) / rho_n
