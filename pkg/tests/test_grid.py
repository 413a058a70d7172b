import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from korteweg_lab.grid import (FieldError, GridMismatchError, ScalarField, TensorField, TorusGrid, VectorField,
                               div_tensor, divergence, gradient, integrate, laplacian, random_bandlimited,
                               read_field_csv, resample, write_field_csv)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1, 48)
    with pytest.raises(ValueError):
        TorusGrid(1, 8)
    with pytest.raises(ValueError):
        TorusGrid(3, 16)
    g = TorusGrid(2, 16, (1.0, 2.0))
    assert g.cell_volume == pytest.approx(2.0 / 256)
    assert g.shape == (16, 16)


def test_field_shapes_checked():
    g = TorusGrid(1, 16)
    with pytest.raises(FieldError):
        ScalarField(g, np.zeros(17))
    with pytest.raises(FieldError):
        VectorField(g, np.zeros((2, 16)))
    with pytest.raises(FieldError):
        ScalarField(g, np.full(16, np.nan))
    g2 = TorusGrid(2, 16)
    T = np.zeros((2, 2, 16, 16))
    T[0, 1] = 1.0
    with pytest.raises(FieldError):
        TensorField(g2, T, symmetric=True)


def test_fields_are_immutable():
    g = TorusGrid(1, 16)
    arr = np.ones(16)
    f = ScalarField(g, arr)
    arr[0] = 5.0
    assert f.values[0] == 1.0
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_gradient_of_constant_and_sine():
    g = TorusGrid(1, 64)
    (x,) = g.coords()
    assert np.max(np.abs(gradient(ScalarField(g, np.full(64, 3.0))).components)) == 0.0
    d = gradient(ScalarField(g, np.sin(2 * np.pi * x))).components[0]
    assert np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * x))) <= 1e-12


def test_gradient_spectral_convergence():
    ref_grid = TorusGrid(1, 256)

    def err(n):
        g = TorusGrid(1, n)
        (x,) = g.coords()
        d = g.grad(np.exp(4 * np.sin(2 * np.pi * x)))[0]
        (xr,) = ref_grid.coords()
        dr = ref_grid.grad(np.exp(4 * np.sin(2 * np.pi * xr)))[0]
        return np.max(np.abs(d - dr[:: 256 // n]))

    assert err(32) / err(64) > 1e3


def test_divergence_and_laplacian_of_sine():
    g = TorusGrid(1, 64)
    (x,) = g.coords()
    f = ScalarField(g, np.sin(2 * np.pi * x))
    expect = -4 * np.pi**2 * np.sin(2 * np.pi * x)
    assert np.max(np.abs(divergence(gradient(f)).values - expect)) <= 1e-10
    assert np.max(np.abs(laplacian(f).values - expect)) <= 1e-10


def test_div_tensor_constant_is_zero():
    g = TorusGrid(2, 16)
    T = np.zeros((2, 2, 16, 16))
    T[0, 0] = T[1, 1] = 2.5
    assert np.max(np.abs(div_tensor(TensorField(g, T, symmetric=True)).components)) <= 1e-14


def test_div_tensor_matches_symbolic_oracle_2d():
    X, Y = sp.symbols("x y")
    rho = sp.sin(2 * sp.pi * X) * sp.cos(2 * sp.pi * Y)
    grad = [sp.diff(rho, X), sp.diff(rho, Y)]
    div = [sp.diff(grad[0] * grad[0], X) + sp.diff(grad[0] * grad[1], Y),
           sp.diff(grad[1] * grad[0], X) + sp.diff(grad[1] * grad[1], Y)]
    g = TorusGrid(2, 32)
    x, y = g.coords()
    r = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    q = g.grad(r)
    out = div_tensor(TensorField(g, q[:, None] * q[None, :], symmetric=True)).components
    for i in range(2):
        exact = sp.lambdify((X, Y), div[i], "numpy")(x, y)
        assert np.max(np.abs(out[i] - exact)) <= 1e-9


def test_integrate_examples():
    g = TorusGrid(1, 64)
    (x,) = g.coords()
    assert integrate(ScalarField(g, np.full(64, 3.0))) == pytest.approx(3.0, abs=1e-15)
    assert abs(integrate(ScalarField(g, np.sin(2 * np.pi * x)))) <= 1e-14
    assert abs(integrate(ScalarField(g, np.sin(2 * np.pi * x) ** 2)) - 0.5) <= 1e-13


def test_operator_mismatch_raises():
    a = ScalarField(TorusGrid(1, 16), np.zeros(16))
    with pytest.raises(GridMismatchError):
        resample(a.values, TorusGrid(1, 16), TorusGrid(1, 32, 2.0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([1, 2]), modes=st.integers(1, 6))
def test_properties_on_random_bandlimited(seed, dim, modes):
    g = TorusGrid(dim, 32, 1.0 if dim == 1 else (1.0, 1.5))
    rng = np.random.default_rng(seed)
    f = random_bandlimited(g, rng, modes)
    assert np.max(np.abs(g.div(g.grad(f)) - g.lap(f))) <= 1e-11
    v = random_bandlimited(g, rng, modes, lead=(dim,))
    assert abs(g.integral(g.div(v))) <= 1e-12
    # translation by k nodes commutes with differentiation
    k = int(rng.integers(1, 31))
    axes = tuple(range(-dim, 0))
    shifted = np.roll(f, k, axis=axes[0])
    assert np.max(np.abs(g.grad(shifted) - np.roll(g.grad(f), k, axis=-dim))) <= 1e-13 * max(1, np.max(np.abs(g.grad(f))))


def test_resample_roundtrip_and_truncation():
    coarse, fine = TorusGrid(1, 32), TorusGrid(1, 128)
    rng = np.random.default_rng(1)
    f = random_bandlimited(coarse, rng, 10)
    up = resample(f, coarse, fine)
    assert np.max(np.abs(resample(up, fine, coarse) - f)) <= 1e-13
    (xf,) = fine.coords()
    (xc,) = coarse.coords()
    assert np.max(np.abs(resample(np.cos(2 * np.pi * 3 * xf), fine, coarse) - np.cos(2 * np.pi * 3 * xc))) <= 1e-13


def test_csv_roundtrip(tmp_path):
    g = TorusGrid(2, 16)
    rng = np.random.default_rng(3)
    s = ScalarField(g, random_bandlimited(g, rng))
    v = VectorField(g, random_bandlimited(g, rng, lead=(2,)))
    write_field_csv(tmp_path / "s.csv", s)
    write_field_csv(tmp_path / "v.csv", v)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x,y,value"
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "x,y,v1,v2"
    assert np.array_equal(read_field_csv(tmp_path / "s.csv", g).values, s.values)
    assert np.array_equal(read_field_csv(tmp_path / "v.csv", g).components, v.components)
    with pytest.raises(FieldError):
        read_field_csv(tmp_path / "s.csv", TorusGrid(2, 32))
