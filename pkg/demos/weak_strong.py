"""Relative energy between a reference run and perturbed copies of it.

The energy has a non-convex bump, so the plain relative energy can be
negative.  The reduced functional adds back the bump contribution and stays
controlled: it starts at the square of the perturbation size and its growth
ratio over the run is the same for every amplitude.
"""
from _common import load, show_checks

from korteweg_lab.lab import run_weak_strong

cfg = load("weak_strong.toml")
rep = run_weak_strong(cfg, jobs=1)
m = rep.metrics
amps = [a for a in cfg.amplitudes if a != 0]
print("amplitude   psi(0)       max psi / psi(0)   growth rate")
psi0 = {r["amplitude"]: r["psi"] for r in rep.rows if r["t"] == 0.0}
for a, ratio, c in zip(amps, m["sup_ratios"], m["c_hat"]):
    print(f"{a:9.0e}   {psi0[a]:.3e}    {ratio:.4f}             {c:.3f}")
print(f"psi(0) scales like amplitude^{m['psi0_slope']:.3f}")
print(f"balance residual orders {[round(o, 3) for o in m['balance_orders']]}")
print(f"bump identity orders    {[round(o, 3) for o in m['bump_orders']]}")
show_checks(rep)
