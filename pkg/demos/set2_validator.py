"""Which capillarity laws admit the Set2 relative-energy argument.

The validator samples kappa kappa'' - 2 kappa'^2 (the convexity condition
on the capillary energy) together with the growth and slope constants.
QHD sits exactly on the boundary, kappa = rho^-2 violates it, and constant
kappa satisfies it with growth constants that depend on the density range.
"""
from korteweg_lab.constitutive import CapillarityLaw, EnergyLaw, set2_check

cases = [
    ("QHD kappa = 1/rho", CapillarityLaw.qhd(), EnergyLaw(1, 2), (0.0, float("inf"))),
    ("kappa = rho^-2", CapillarityLaw.power(-2.0), EnergyLaw(1, 2), (0.1, 10.0)),
    ("constant, gamma=1.5, [0.2, 5]", CapillarityLaw.constant(0.3), EnergyLaw(1, 1.5), (0.2, 5.0)),
    ("constant, gamma=1.5, (0, inf)", CapillarityLaw.constant(0.3), EnergyLaw(1, 1.5), (0.0, float("inf"))),
]
for label, cap, law, rng in cases:
    v = set2_check(cap, law, rho_range=rng)
    print(f"{label:32s} {'accepted' if v.passed else 'rejected'}  margin={v.hessian_margin:+.2e} "
          f"C_growth={v.growth_constant:.3g} C_slope={v.slope_constant:.3g}")
    for r in v.reasons:
        print(f"    {r}")
