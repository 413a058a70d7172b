"""Acceptance suite: ten end-to-end criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` or directly with
``python3 tests/test_acceptance.py``.  Each criterion returns
``(ok, detail)``; the detail line carries the measured numbers.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from korteweg_lab.config import parse_config
from korteweg_lab.constitutive import (BumpSpec, CapillarityLaw, EnergyLaw, FluidState, set2_check, total_energy,
                                       variational_derivative)
from korteweg_lab.dynamics import EKSystem, ek_rhs
from korteweg_lab.grid import ScalarField, TorusGrid, random_bandlimited
from korteweg_lab.lab import (_auto_dt, _fixed_run, _order_ok, relative_balance_residuals, run_energy_balance,
                              run_large_friction, run_mollify_check, run_simulation, run_spinodal,
                              run_vanishing_capillarity, run_weak_strong)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BUMP = BumpSpec(0.8, 0.5, 1.7)


def _cfg(name, *overrides):
    return parse_config(CONFIGS / name, list(overrides))


def _timed(limit):
    """Wrap a criterion so that its runtime limit (seconds) joins the verdict."""
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            took = time.perf_counter() - t0
            if limit is not None:
                ok = ok and took < limit
                detail += f"; {took:.1f}s (limit {limit:.0f}s)"
            else:
                detail += f"; {took:.1f}s"
            return ok, detail
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


@_timed(60)
def criterion_1():
    """Conservation of mass, momentum and energy; energy-drift order in dt."""
    rep = run_energy_balance(_cfg("conservation.toml"), jobs=1)
    m = rep.metrics
    detail = (f"mass {m['mass_drift']:.2e}, momentum {m['momentum_drift']:.2e}, "
              f"energy {m['energy_drift']:.2e}, order {m['order']:.2f}")
    return rep.passed, detail


@_timed(None)
def criterion_2():
    """Conservative and potential forms agree; variational derivative matches Gateaux differences."""
    g = TorusGrid(1, 128)
    law = EnergyLaw(1, 2, BUMP)
    caps = [CapillarityLaw.constant(0.05), CapillarityLaw.qhd(), CapillarityLaw.power(-0.5, 0.1)]
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        rho = 1.1 + random_bandlimited(g, rng, 4, 0.3)
        m = random_bandlimited(g, rng, 4, 0.3, lead=(1,))
        st = FluidState.from_arrays(g, rho, m)
        a = ek_rhs(st, law, caps[i % 3], 0.5)
        b = ek_rhs(st, law, caps[i % 3], 0.5, conservative=True)
        scale = max(1.0, float(np.max(np.abs(a[1]))))
        worst = max(worst, float(np.max(np.abs(a[1] - b[1]))) / scale, float(np.max(np.abs(a[0] - b[0]))))
    gateaux = 0.0
    zero = np.zeros((1, 128))
    for i in range(6):
        cap = caps[i % 3]
        rho = 1.1 + random_bandlimited(g, rng, 3, 0.2)
        phi = random_bandlimited(g, rng, 3)
        E = lambda r: total_energy(FluidState.from_arrays(g, r, zero), law, cap, 0.3)
        d = 1e-5
        fd = (E(rho + d * phi) - E(rho - d * phi)) / (2 * d)
        exact = g.integral(variational_derivative(ScalarField(g, rho), law, cap, 0.3).values * phi)
        gateaux = max(gateaux, abs(fd - exact) / abs(exact))
    return worst <= 1e-8 and gateaux <= 1e-6, f"max scaled form gap {worst:.2e}, Gateaux rel err {gateaux:.2e}"


@_timed(None)
def criterion_3():
    """Relative-energy balance and bump balance residuals converge at second order."""
    cfg = _cfg("weak_strong.toml")
    system = EKSystem(cfg.energy, cfg.capillarity, cfg.eps)
    base = cfg.initial.state(cfg.grid)
    cand = cfg.initial.state(cfg.grid, max(cfg.amplitudes))
    dt = min(_auto_dt(system, cfg.grid, s, cfg.solver) for s in (base, cand))
    snaps = cfg.snapshots * 2 ** (cfg.balance_levels - 1)
    a = _fixed_run(system, cand, cfg.solver.t_end, dt, snaps, cfg.solver)
    b = _fixed_run(system, base, cfg.solver.t_end, dt, snaps, cfg.solver)
    res = relative_balance_residuals(a, b, cfg.energy, cfg.capillarity, cfg.eps, cfg.balance_levels)
    ok = _order_ok(res["balance"]) and _order_ok(res["bump"])
    return ok, (f"balance orders {np.round(res['balance_orders'], 3).tolist()}, "
                f"bump orders {np.round(res['bump_orders'], 3).tolist()}")


@_timed(None)
def criterion_4():
    """Mollifier: Jensen nodewise, continuity residual order, negative control."""
    rep = run_mollify_check(_cfg("mollify.toml"), jobs=1)
    m = rep.metrics
    detail = (f"Jensen min gap {m['jensen_min_gap']:.2e}, residual orders "
              f"{np.round(m['continuity_orders'], 3).tolist()}, control {m['control_residual']:.3g} "
              f"vs 0.1*max|div m| = {0.1 * m['max_div_m']:.3g}")
    return rep.passed, detail


@_timed(300)
def criterion_5():
    """Weak-strong stability with an active bump."""
    rep = run_weak_strong(_cfg("weak_strong.toml"), jobs=1)
    m = rep.metrics
    detail = (f"psi(0) slope {m['psi0_slope']:.4f}, sup-ratio spread {100 * m['sup_ratio_spread']:.2f}%, "
              f"Gronwall {'holds' if rep.checks['gronwall_bound_holds'] else 'violated'}, "
              f"C_hat {np.round(m['c_hat'], 3).tolist()}")
    return rep.passed, detail


@_timed(600)
def criterion_6():
    """Vanishing capillarity, constant kappa: slope in [1.8, 2.2]."""
    rep = run_vanishing_capillarity(_cfg("set1.toml"), jobs=1)
    m = rep.metrics
    flags = sum(f for _, _, f in m["rate_rows"])
    detail = (f"slope {m['slope']:.3f}, r2 {m['r2']:.5f}, floor flags {flags}, "
              f"dt-halving change {m['dt_halving_change']:.1e}")
    return rep.passed, detail


@_timed(600)
def criterion_7():
    """Vanishing capillarity, QHD kappa: slope >= 0.9."""
    rep = run_vanishing_capillarity(_cfg("set2_qhd.toml"), jobs=1)
    m = rep.metrics
    detail = (f"slope {m['slope']:.3f}, r2 {m['r2']:.4f}, curvature flag {m['curvature_flag']}, "
              f"dt-halving change {m['dt_halving_change']:.1e}")
    return rep.passed, detail


@_timed(600)
def criterion_8():
    """Large friction against Cahn-Hilliard: slope >= 3, lift defect slope 1."""
    rep = run_large_friction(_cfg("friction.toml"), jobs=1)
    m = rep.metrics
    sups = [f"{s:.2e}" + ("*" if f else "") for _, s, f in m["rate_rows"]]
    detail = (f"sup psi {sups}, slope {m['slope']:.3f}, psi(0) {m['psi0_max']:.1e}, "
              f"lift defect slope {m['lift_defect_slope']:.3f}, dt-halving change {m['dt_halving_change']:.1e}")
    failed = [k for k, v in rep.checks.items() if not v]
    if failed:
        detail += f"; failed: {failed}"
    return rep.passed, detail


@_timed(None)
def criterion_9():
    """Spinodal growth rates of the three most unstable modes; CH free energy non-increasing."""
    law = EnergyLaw(1, 2, BUMP)
    out = run_spinodal(law, 0.01, 0.8, TorusGrid(1, 64, 2 * np.pi), 0.5, 20000)
    rates_ok = bool(np.max(out["rel_error"]) <= 0.02) and law.d2h(0.8) < 0
    rep = run_simulation(_cfg("spinodal_ch.toml", "solver.snapshot_every=100"))
    f = rep.trajectories["trajectory"].diagnostics["energy"]
    rise = float(np.max(np.diff(f)))
    mono = rise <= 1e-14 * abs(f[0])
    detail = (f"modes {out['modes'].tolist()}, rel errors {np.round(100 * out['rel_error'], 3).tolist()}%, "
              f"free energy {f[0]:.6f} -> {f[-1]:.6f}, largest step {rise:.2e}")
    return rates_ok and mono, detail


@_timed(None)
def criterion_10():
    """Set2 validator verdicts."""
    law = EnergyLaw(1, 2)
    qhd = set2_check(CapillarityLaw.qhd(), law)
    inv_sq = set2_check(CapillarityLaw.power(-2.0), law, rho_range=(0.1, 10))
    # with gamma < 2 the growth bound for constant kappa only holds on a bounded density range
    sub = EnergyLaw(1, 1.5)
    bounded = set2_check(CapillarityLaw.constant(0.3), sub, rho_range=(0.2, 5.0))
    unbounded = set2_check(CapillarityLaw.constant(0.3), sub)
    ok = (qhd.passed and abs(qhd.hessian_margin) <= 1e-12 and not inv_sq.passed and bounded.passed
          and math.isfinite(bounded.growth_constant) and not unbounded.passed)
    detail = (f"QHD margin {qhd.hessian_margin:.1e}, rho^-2 min {inv_sq.hessian_min:.3g} "
              f"({'fails' if not inv_sq.passed else 'passes'}), constant on [0.2, 5]: C_growth "
              f"{bounded.growth_constant:.4g}, C_slope {bounded.slope_constant:.3g}; unbounded "
              f"{'fails' if not unbounded.passed else 'passes'}")
    return ok, detail


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10]


def _line(i, fn, ok, detail):
    return f"{'PASS' if ok else 'FAIL'}  criterion {i:2d}: {fn.__doc__.strip()} [{detail}]"


@pytest.mark.slow
@pytest.mark.parametrize("index", range(1, len(CRITERIA) + 1))
def test_criterion(index, capsys):
    fn = CRITERIA[index - 1]
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + _line(index, fn, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        results.append(ok)
        print(_line(i, fn, ok, detail), flush=True)
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
