import numpy as np
import pytest
import sympy as sp
from scipy.integrate import simpson

from korteweg_lab.constitutive import (BumpSpec, CapillarityLaw, DomainError, EnergyLaw, FluidState, VacuumError,
                                       energy_density, korteweg_stress, pressure, set2_check, total_energy,
                                       variational_derivative)
from korteweg_lab.grid import ScalarField, TorusGrid, random_bandlimited

BUMP = BumpSpec(0.8, 0.5, 1.7)


def sym_bump(A, lo, hi):
    r = sp.Symbol("rho")
    s = (2 * r - (lo + hi)) / (hi - lo)
    return r, A * sp.exp(-1 / (1 - s**2))


def test_energy_density_examples():
    law = EnergyLaw(1, 2)
    assert energy_density(law, 3.0) == 9.0
    assert energy_density(EnergyLaw(1, 2, BUMP), 0.0) == 0.0
    assert pressure(law, 2.0) == pytest.approx(4.0)
    assert pressure(EnergyLaw(1, 1.5), 1.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        law.h(-1.0)
    with pytest.raises(ValueError):
        EnergyLaw(1, 1.0)


def test_bump_matches_symbolic_derivatives():
    r, e = sym_bump(0.8, 0.5, 1.7)
    rho = np.linspace(0.55, 1.65, 57)
    for order, fn in enumerate((BUMP.e, BUMP.de, BUMP.d2e)):
        exact = sp.lambdify(r, sp.diff(e, r, order), "numpy")(rho)
        assert np.max(np.abs(fn(rho) - exact)) <= 1e-12 * max(1, np.max(np.abs(exact)))


def test_bump_vanishes_outside_support():
    rho = np.r_[np.linspace(0.01, 0.5, 20), np.linspace(1.7, 5, 20)]
    for fn in (BUMP.e, BUMP.de, BUMP.d2e):
        assert np.all(fn(rho) == 0.0)


def test_bump_derivatives_consistent_with_finite_differences():
    rho = np.linspace(0.6, 1.6, 23)
    d = 1e-5
    fd1 = (BUMP.e(rho + d) - BUMP.e(rho - d)) / (2 * d)
    fd2 = (BUMP.de(rho + d) - BUMP.de(rho - d)) / (2 * d)
    assert np.max(np.abs(fd1 - BUMP.de(rho))) <= 1e-6 * np.max(np.abs(BUMP.de(rho)))
    assert np.max(np.abs(fd2 - BUMP.d2e(rho))) <= 1e-6 * np.max(np.abs(BUMP.d2e(rho)))


@pytest.mark.parametrize("law", [EnergyLaw(1, 2), EnergyLaw(2, 1.5), EnergyLaw(1, 2, BUMP), EnergyLaw(1, 3, BUMP)])
def test_pressure_energy_compatibility(law):
    rho = np.linspace(0.6, 1.6, 31)
    d = 1e-6
    p_fd = rho * (law.h(rho + d) - law.h(rho - d)) / (2 * d) - law.h(rho)
    assert np.max(np.abs(p_fd - law.pressure(rho))) <= 1e-6 * max(1, np.max(np.abs(law.pressure(rho))))
    dp_fd = (law.pressure(rho + 1e-5) - law.pressure(rho - 1e-5)) / 2e-5
    assert np.max(np.abs(dp_fd - rho * law.d2h(rho))) <= 1e-6 * np.max(np.abs(rho * law.d2h(rho)))
    h2_fd = (law.h(rho + 1e-4) - 2 * law.h(rho) + law.h(rho - 1e-4)) / 1e-8
    assert np.max(np.abs(h2_fd - law.d2h(rho))) <= 1e-6 * np.max(np.abs(law.d2h(rho))) + 1e-6


def test_convex_without_bump_nonconvex_with():
    assert EnergyLaw(1, 2).min_curvature()[0] > 0
    hmin, where, elliptic = EnergyLaw(1, 2, BUMP).min_curvature()
    assert elliptic and hmin < 0 and 0.5 < where < 1.7


def test_capillarity_laws():
    rho = np.linspace(0.5, 2, 7)
    q = CapillarityLaw.qhd()
    assert np.allclose(q.kappa(rho), 1 / rho)
    assert np.allclose(q.dkappa(rho), -1 / rho**2)
    assert np.allclose(q.d2kappa(rho), 2 / rho**3)
    p = CapillarityLaw.power(-2.0, 3.0)
    assert np.allclose(p.d2kappa(rho), 18 / rho**4)
    c = CapillarityLaw.constant(0.5)
    assert c.is_constant and np.all(c.dkappa(rho) == 0)


def test_set2_qhd_passes_with_zero_margin():
    v = set2_check(CapillarityLaw.qhd(), EnergyLaw(1, 2))
    assert v.passed
    assert abs(v.hessian_margin) <= 1e-12
    rho = np.geomspace(1e-3, 1e3, 101)
    q = CapillarityLaw.qhd()
    assert np.allclose(np.abs(rho * q.dkappa(rho)), q.kappa(rho), rtol=1e-14, atol=0)


def test_set2_inverse_square_fails():
    v = set2_check(CapillarityLaw.power(-2.0), EnergyLaw(1, 2), rho_range=(0.1, 10))
    assert not v.passed
    assert v.hessian_min < 0
    assert any("kappa kappa''" in r for r in v.reasons)


def test_set2_constant_depends_on_range():
    law = EnergyLaw(1, 1.5)
    unbounded = set2_check(CapillarityLaw.constant(0.3), law)
    assert not unbounded.passed
    bounded = set2_check(CapillarityLaw.constant(0.3), law, rho_range=(0.2, 5.0))
    assert bounded.passed
    # oracle: sampled max of rho^2 C / (h + rho) on the range
    rho = np.linspace(0.2, 5.0, 20001)
    expect = np.max(rho**2 * 0.3 / (law.h(rho) + rho))
    assert bounded.growth_constant == pytest.approx(expect, rel=1e-4)


@pytest.mark.parametrize("cap", [CapillarityLaw.qhd(), CapillarityLaw.constant(1.0), CapillarityLaw.power(-0.5)])
def test_set2_pass_implies_psd_hessian(cap):
    if not set2_check(cap, EnergyLaw(1, 2), rho_range=(0.1, 10)).passed:
        pytest.skip("law does not pass")
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.1, 10, 1000)
    q = rng.normal(size=1000)
    k, dk, d2k = cap.kappa(rho), cap.dkappa(rho), cap.d2kappa(rho)
    # F(rho, q) = kappa |q|^2 / 2: Hessian [[k'' q^2/2, k' q], [k' q, k]]
    det = 0.5 * d2k * q**2 * k - dk**2 * q**2
    assert np.all(det >= -1e-12 * (np.abs(0.5 * d2k * q**2 * k) + dk**2 * q**2))
    assert np.all(d2k * q**2 >= -1e-12) and np.all(k > 0)


def test_stress_for_constant_density():
    g = TorusGrid(2, 16)
    law = EnergyLaw(1, 2, BUMP)
    st = FluidState.from_arrays(g, np.full(g.shape, 1.1), np.ones((2,) + g.shape))
    S = korteweg_stress(st, law, CapillarityLaw.qhd(), 0.3).components
    p = law.pressure(1.1)
    assert np.allclose(S[0, 0], -p, atol=1e-13) and np.allclose(S[0, 1], 0, atol=1e-13)


def test_stress_matches_symbolic_oracle_1d():
    X = sp.Symbol("x")
    C, eps = 0.7, 1.0
    r = 1 + sp.Rational(1, 10) * sp.sin(2 * sp.pi * X)
    p = r**2  # gamma=2, c=1
    rx = sp.diff(r, X)
    # 1-D Korteweg stress: -p + eps C (rho rho_xx + |rho_x|^2/2) - eps C |rho_x|^2
    S = -p + eps * C * (r * sp.diff(r, X, 2) + rx**2 / 2) - eps * C * rx**2
    g = TorusGrid(1, 128)
    (x,) = g.coords()
    st = FluidState.from_arrays(g, 1 + 0.1 * np.sin(2 * np.pi * x), np.zeros((1, 128)))
    out = korteweg_stress(st, EnergyLaw(1, 2), CapillarityLaw.constant(C), eps).components[0, 0]
    assert np.max(np.abs(out - sp.lambdify(X, S, "numpy")(x))) <= 1e-9


@pytest.mark.parametrize("cap", [CapillarityLaw.constant(0.05), CapillarityLaw.qhd(), CapillarityLaw.power(-0.5, 0.1)])
def test_stress_equivalence(cap):
    g = TorusGrid(1, 128)
    law = EnergyLaw(1, 2, BumpSpec(0.8, 0.5, 1.7))
    rng = np.random.default_rng(5)
    for _ in range(10):
        rho = 1.1 + random_bandlimited(g, rng, 4, 0.3)
        st = FluidState.from_arrays(g, rho, np.zeros((1, 128)))
        divS = g.div_tensor(korteweg_stress(st, law, cap, 0.5).components)
        mu = variational_derivative(st.rho, law, cap, 0.5).values
        assert np.max(np.abs(divS + rho * g.grad(mu))) <= 1e-8


def test_total_energy_examples():
    g = TorusGrid(1, 64)
    law = EnergyLaw(1, 2)
    cap = CapillarityLaw.constant(1.0)
    one = np.ones(64)
    assert total_energy(FluidState.from_arrays(g, one, np.zeros((1, 64))), law, cap, 3.0) == pytest.approx(1.0)
    assert total_energy(FluidState.from_arrays(g, one, one[None]), law, cap) == pytest.approx(1.5)
    (x,) = g.coords()
    val = total_energy(FluidState.from_arrays(g, 1 + 0.1 * np.sin(2 * np.pi * x), np.zeros((1, 64))), law, cap)
    xs = np.linspace(0, 1, 1_000_001)
    dens = (1 + 0.1 * np.sin(2 * np.pi * xs)) ** 2 + 0.5 * (0.2 * np.pi * np.cos(2 * np.pi * xs)) ** 2
    assert val == pytest.approx(simpson(dens, x=xs), rel=1e-12)


def test_variational_derivative_constant_and_gateaux():
    g = TorusGrid(1, 64)
    law = EnergyLaw(1, 2, BUMP)
    cap = CapillarityLaw.qhd()
    mu = variational_derivative(ScalarField(g, np.full(64, 1.2)), law, cap).values
    assert np.allclose(mu, law.dh(1.2), atol=1e-13)
    rng = np.random.default_rng(2)
    rho = 1.1 + random_bandlimited(g, rng, 3, 0.2)
    phi = random_bandlimited(g, rng, 3)
    zero = np.zeros((1, 64))
    E = lambda r: total_energy(FluidState.from_arrays(g, r, zero), law, cap, 0.3)
    d = 1e-5
    fd = (E(rho + d * phi) - E(rho - d * phi)) / (2 * d)
    exact = g.integral(variational_derivative(ScalarField(g, rho), law, cap, 0.3).values * phi)
    assert abs(fd - exact) <= 1e-6 * abs(exact)


def test_variational_derivative_qhd_symbolic():
    X = sp.Symbol("x")
    r = 1 + sp.Rational(1, 5) * sp.sin(2 * sp.pi * X)
    k, dk = 1 / r, -1 / r**2
    rx = sp.diff(r, X)
    mu = 2 * r + dk / 2 * rx**2 - sp.diff(k * rx, X)
    g = TorusGrid(1, 128)
    (x,) = g.coords()
    out = variational_derivative(ScalarField(g, 1 + 0.2 * np.sin(2 * np.pi * x)), EnergyLaw(1, 2),
                                 CapillarityLaw.qhd()).values
    assert np.max(np.abs(out - sp.lambdify(X, mu, "numpy")(x))) <= 1e-9


def test_vacuum_floor_for_singular_capillarity():
    g = TorusGrid(1, 16)
    rho = np.full(16, 1e-10)
    with pytest.raises(VacuumError):
        variational_derivative(ScalarField(g, rho), EnergyLaw(), CapillarityLaw.qhd())
