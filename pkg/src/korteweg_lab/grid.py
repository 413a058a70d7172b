"""Periodic grids on the flat torus and Fourier-spectral calculus.

Fields are stored as real numpy arrays with the spatial axes last:
scalars have shape ``grid.shape``, vectors ``(dim, *grid.shape)`` and
tensors ``(dim, dim, *grid.shape)``.  The array-level operators live on
:class:`TorusGrid` (they are what the solvers call in their inner loops);
the module-level functions wrap them for the immutable field containers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "FieldError",
    "GridMismatchError",
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "TensorField",
    "gradient",
    "divergence",
    "laplacian",
    "div_tensor",
    "integrate",
    "resample",
    "write_field_csv",
    "read_field_csv",
]


class FieldError(ValueError):
    """Invalid field data (wrong shape, non-finite values)."""


class GridMismatchError(FieldError):
    """Operands live on different grids."""


def check_finite(values: np.ndarray, what: str = "field") -> None:
    """Raise :class:`FieldError` naming the first non-finite node."""
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise FieldError(f"non-finite value in {what} at node {idx}: {values[idx]!r}")


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the ``dim``-dimensional torus.

    ``points_per_axis`` must be a power of two no smaller than 16.  Nodes
    sit at ``x_i = i * period / points_per_axis``.
    """

    dim: int
    points_per_axis: int
    period: tuple[float, ...] | float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.points_per_axis
        if n < 16 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 16, got {n}")
        period = self.period
        if np.isscalar(period):
            period = (float(period),) * self.dim
        period = tuple(float(p) for p in period)
        if len(period) != self.dim or min(period) <= 0:
            raise ValueError(f"need {self.dim} positive periods, got {self.period}")
        object.__setattr__(self, "period", period)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(p / self.points_per_axis for p in self.period)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.period))

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one broadcast array per axis (``ij`` indexing)."""
        axes = [np.arange(self.points_per_axis) * h for h in self.spacing]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    # -- Fourier machinery -------------------------------------------------

    @cached_property
    def _wavenumbers(self) -> tuple[np.ndarray, ...]:
        n = self.points_per_axis
        ks = []
        for axis, length in enumerate(self.period):
            if axis == self.dim - 1:
                k = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
            else:
                k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
            shape = [1] * self.dim
            shape[axis] = k.size
            ks.append(k.reshape(shape))
        return tuple(ks)

    @cached_property
    def _ik(self) -> tuple[np.ndarray, ...]:
        # first-derivative symbols; the Nyquist mode has no real derivative
        n = self.points_per_axis
        out = []
        for axis, k in enumerate(self._wavenumbers):
            k = k.copy()
            idx = [slice(None)] * self.dim
            idx[axis] = n // 2
            k[tuple(idx)] = 0.0
            out.append(1j * k)
        return tuple(out)

    @cached_property
    def ksq(self) -> np.ndarray:
        """|k|^2 on the half-spectrum (rfftn layout)."""
        return sum(k**2 for k in self._wavenumbers)

    @cached_property
    def _dealias_mask(self) -> np.ndarray:
        n = self.points_per_axis
        mask = np.ones(self.spectral_shape, dtype=bool)
        for axis, length in enumerate(self.period):
            kmax = (2 * np.pi / length) * (n // 3)
            mask &= np.abs(self._wavenumbers[axis]) <= kmax
        return mask

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        n = self.points_per_axis
        return (n,) * (self.dim - 1) + (n // 2 + 1,)

    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=self._axes(f))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.shape, axes=self._axes(fh))

    def _axes(self, a: np.ndarray) -> tuple[int, ...]:
        return tuple(range(a.ndim - self.dim, a.ndim))

    # -- array-level differential operators ---------------------------------

    def grad(self, f: np.ndarray) -> np.ndarray:
        fh = self.fft(f)
        return np.stack([self.ifft(ik * fh) for ik in self._ik])

    def div(self, v: np.ndarray) -> np.ndarray:
        vh = self.fft(v)
        return self.ifft(sum(self._ik[i] * vh[i] for i in range(self.dim)))

    def lap(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(-self.ksq * self.fft(f))

    def div_tensor(self, T: np.ndarray) -> np.ndarray:
        # (div T)_i = sum_j d_j T_ij
        Th = self.fft(T)
        return np.stack(
            [self.ifft(sum(self._ik[j] * Th[i, j] for j in range(self.dim))) for i in range(self.dim)]
        )

    def integral(self, f: np.ndarray) -> float | np.ndarray:
        axes = self._axes(np.asarray(f))
        return np.mean(f, axis=axes) * self.volume

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """2/3-rule filter; opt-in for nonlinear products."""
        return self.ifft(self.fft(f) * self._dealias_mask)

    def multiplier(self, symbol: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Apply a Fourier multiplier given on the half-spectrum."""
        return self.ifft(symbol * self.fft(f))


def _check_shape(grid: TorusGrid, values: np.ndarray, lead: tuple[int, ...], kind: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    expected = lead + grid.shape
    if arr.shape != expected:
        raise FieldError(f"{kind} values have shape {arr.shape}, grid needs {expected}")
    check_finite(arr, f"{kind} field")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _check_shape(self.grid, self.values, (), "scalar"))


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: TorusGrid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        lead = (self.grid.dim,)
        object.__setattr__(self, "components", _check_shape(self.grid, self.components, lead, "vector"))


@dataclass(frozen=True, eq=False)
class TensorField:
    grid: TorusGrid
    components: np.ndarray = field(repr=False)
    symmetric: bool = False

    def __post_init__(self):
        d = self.grid.dim
        comps = _check_shape(self.grid, self.components, (d, d), "tensor")
        if self.symmetric and d > 1:
            asym = np.max(np.abs(comps - np.swapaxes(comps, 0, 1)))
            if asym > 1e-12:
                raise FieldError(f"tensor flagged symmetric but asymmetry is {asym:.3e}")
        object.__setattr__(self, "components", comps)


def _same_grid(*grids: TorusGrid) -> TorusGrid:
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {g}")
    return first


def gradient(f: ScalarField) -> VectorField:
    check_finite(f.values)
    return VectorField(f.grid, f.grid.grad(f.values))


def divergence(v: VectorField) -> ScalarField:
    check_finite(v.components)
    return ScalarField(v.grid, v.grid.div(v.components))


def laplacian(f: ScalarField) -> ScalarField:
    check_finite(f.values)
    return ScalarField(f.grid, f.grid.lap(f.values))


def div_tensor(T: TensorField) -> VectorField:
    check_finite(T.components)
    return VectorField(T.grid, T.grid.div_tensor(T.components))


def integrate(f: ScalarField) -> float:
    """Trapezoid rule on the torus: mean value times volume."""
    check_finite(f.values)
    return float(f.grid.integral(f.values))


def resample(values: np.ndarray, src: TorusGrid, dst: TorusGrid) -> np.ndarray:
    """Spectral restriction/prolongation between grids of equal period.

    Only modes representable on both grids are kept; the Nyquist mode of
    the smaller grid is dropped.  Leading (component) axes are preserved.
    """
    if src.dim != dst.dim or src.period != dst.period:
        raise GridMismatchError(f"cannot resample {src} onto {dst}")
    if src == dst:
        return np.array(values, dtype=float)
    ns, nd = src.points_per_axis, dst.points_per_axis
    nmin = min(ns, nd)
    fh = src.fft(np.asarray(values, dtype=float))
    lead = fh.shape[: fh.ndim - src.dim]
    out = np.zeros(lead + dst.spectral_shape, dtype=complex)
    half = nmin // 2
    # keep |index| < nmin/2 on full axes, index < nmin/2 on the rfft axis
    full_idx = np.r_[0:half, -half + 1 : 0]
    if src.dim == 1:
        out[..., :half] = fh[..., :half]
    else:
        sub = fh[..., full_idx, :half]
        out[..., full_idx, :half] = sub
    return dst.ifft(out) * (dst.size / src.size)


# -- snapshot CSV --------------------------------------------------------


def write_field_csv(path: str | Path, fld: ScalarField | VectorField) -> None:
    """Write ``x[,y],value`` or ``x[,y],v1[,v2]`` rows in row-major node order."""
    grid = fld.grid
    coords = [c.ravel() for c in grid.coords()]
    names = ["x", "y"][: grid.dim]
    if isinstance(fld, ScalarField):
        cols = [fld.values.ravel()]
        names += ["value"]
    else:
        cols = [c.ravel() for c in fld.components]
        names += [f"v{i + 1}" for i in range(grid.dim)]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*coords, *cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_field_csv(path: str | Path, grid: TorusGrid) -> ScalarField | VectorField:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    ncoord = grid.dim
    if data.shape[0] != grid.size:
        raise FieldError(f"{path}: {data.shape[0]} rows, grid has {grid.size} nodes")
    vals = data[:, ncoord:]
    if header[ncoord:] == ["value"]:
        return ScalarField(grid, vals[:, 0].reshape(grid.shape))
    return VectorField(grid, vals.T.reshape((grid.dim,) + grid.shape))


def as_array(f: ScalarField | VectorField | TensorField | np.ndarray) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.values
    if isinstance(f, (VectorField, TensorField)):
        return f.components
    return np.asarray(f)


def random_bandlimited(grid: TorusGrid, rng: np.random.Generator, modes: int = 4,
                       amplitude: float = 1.0, lead: Sequence[int] = ()) -> np.ndarray:
    """Random real trigonometric polynomial with wavenumbers up to ``modes``."""
    fh = np.zeros(tuple(lead) + grid.spectral_shape, dtype=complex)
    n = grid.points_per_axis
    if grid.dim == 1:
        sl = (..., slice(0, modes + 1))
    else:
        rows = np.r_[0 : modes + 1, n - modes : n]
        sl = (..., rows[:, None], np.arange(modes + 1)[None, :])
    block = fh[sl]
    noise = rng.standard_normal(block.shape) + 1j * rng.standard_normal(block.shape)
    fh[sl] = noise
    f = grid.ifft(fh)
    scale = np.max(np.abs(f)) or 1.0
    return amplitude * f / scale
