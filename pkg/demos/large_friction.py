"""Strong friction drives Euler-Korteweg towards Cahn-Hilliard.

In diffusive time scaling the momentum relaxes on a time eps^2 and the
density follows the Cahn-Hilliard flow.  The relative energy against the
lifted Cahn-Hilliard solution decays like eps^4.  Friction is applied
exactly in a Strang split; the step is capped at a fixed multiple of eps^2
so the splitting error stays small.  Four moderate eps values keep the demo short.
"""
from _common import load, show_checks

from korteweg_lab.lab import run_large_friction

cfg = load("friction.toml", "experiment.eps_values=[0.4, 0.2, 0.1, 0.05]")
rep = run_large_friction(cfg, jobs=1)
for e, s, f in rep.metrics["rate_rows"]:
    print(f"eps={e:<6} sup psi={s:.3e}{'  (floor)' if f else ''}")
print(f"slope {rep.metrics['slope']:.2f}, lift defect slope {rep.metrics['lift_defect_slope']:.3f}")
show_checks(rep)
