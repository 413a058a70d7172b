"""Euler-Korteweg solutions approach Euler as the capillarity coefficient shrinks.

With constant capillarity the distance to the Euler solution, measured in
the relative energy, falls like eps^2.  For the quantum (QHD) law the
frozen functional carries a term linear in eps, which limits the rate.
The demo uses four eps values and a coarse grid so it runs quickly; the
shipped configs use the full sweep.
"""
from _common import load, show_checks

from korteweg_lab.lab import run_vanishing_capillarity

cfg = load("set1.toml", "grid.points=64", "experiment.eps_values=[0.125, 0.0625, 0.03125, 0.015625]")
rep = run_vanishing_capillarity(cfg, jobs=1)
print("eps        sup error   floor?")
for e, s, f in rep.metrics["rate_rows"]:
    print(f"{e:.5f}    {s:.3e}   {'yes' if f else 'no'}")
print(f"fitted slope {rep.metrics['slope']:.3f} (r^2 {rep.metrics['r2']:.5f})")
show_checks(rep)
