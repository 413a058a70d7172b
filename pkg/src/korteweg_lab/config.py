"""TOML configuration files for experiments.

A config has the sections ``grid``, ``law``, ``capillarity``, ``solver``,
``experiment`` and ``initial``.  Every key has a documented default (see
``DEFAULTS``); unknown sections or keys are errors.  Overrides of the form
``section.key=value`` are applied after the file is parsed, with the value
read as a TOML literal (bare words fall back to strings).
"""
from __future__ import annotations

import copy
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib
import tomli_w

from .constitutive import BumpSpec, CapillarityLaw, EnergyLaw
from .dynamics import SolverConfig
from .grid import TorusGrid
from .lab import ConfigError, ExperimentConfig, InitialRecipe

__all__ = ["DEFAULTS", "load_raw", "apply_overrides", "build_config", "parse_config", "resolved_dict",
           "write_resolved"]

DEFAULTS: dict[str, dict] = {
    "grid": {"dim": 1, "points": 128, "period": 1.0},
    "law": {"c": 1.0, "gamma": 2.0, "bump_amplitude": 0.0, "bump_lo": 0.5, "bump_hi": 1.7},
    "capillarity": {"kind": "constant", "coefficient": 0.01, "exponent": -1.0, "eps": 1.0},
    "solver": {"t_end": 0.5, "dt": "auto", "cfl_advective": 0.4, "cfl_dispersive": 0.2,
               "vacuum_floor": 1e-8, "snapshot_every": 10, "exact_friction": True,
               "gradient_blowup": 50.0},
    "experiment": {"system": "EK", "eps_values": [], "amplitudes": [], "setting": "Set1",
                   "snapshots": 40, "ref_space_factor": 2, "ref_time_factor": 4,
                   "floor_tolerance": 0.1, "order_points": 32, "order_levels": 3,
                   "balance_levels": 4, "mollifier_n": 4, "ch_steps": 8000,
                   "friction_dt_ratio": 0.02},
    "initial": {"rho_mean": 1.0, "rho_modes": [], "u_modes": [], "v_modes": [],
                "perturb_rho_modes": [], "perturb_u_modes": [], "perturb_v_modes": []},
}


def load_raw(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"config file not found: {p}")
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError("config", f"{p} is not valid UTF-8: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line L, column C)"
        raise ConfigError("parse", f"{p}: {exc}") from exc


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override", f"expected section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError("override", f"override key must be section.key, got {key!r}")
        out.setdefault(parts[0], {})[parts[1]] = _parse_value(value.strip())
    return out


def _merged(raw: dict) -> dict:
    merged = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise ConfigError("unknown section", f"[{section}] is not one of {sorted(DEFAULTS)}")
        if not isinstance(body, dict):
            raise ConfigError("unknown section", f"{section} must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError("unknown key", f"{section}.{key} is not a recognised key; "
                                  f"known keys: {sorted(DEFAULTS[section])}")
            merged[section][key] = value
    return merged


def _capillarity(sec: dict) -> CapillarityLaw:
    kind = sec["kind"]
    if kind == "constant":
        return CapillarityLaw.constant(float(sec["coefficient"]))
    if kind == "qhd":
        return CapillarityLaw.qhd()
    if kind == "power":
        return CapillarityLaw.power(float(sec["exponent"]), float(sec["coefficient"]))
    raise ConfigError("capillarity.kind", f"expected constant, qhd or power, got {kind!r}")


def build_config(merged: dict, output_dir: str | Path | None = None) -> ExperimentConfig:
    g, law, cap, sol, exp, ini = (merged[k] for k in ("grid", "law", "capillarity", "solver", "experiment", "initial"))
    try:
        grid = TorusGrid(int(g["dim"]), int(g["points"]), g["period"])
        bump = None
        if float(law["bump_amplitude"]) != 0.0:
            bump = BumpSpec(float(law["bump_amplitude"]), float(law["bump_lo"]), float(law["bump_hi"]))
        energy = EnergyLaw(float(law["c"]), float(law["gamma"]), bump)
        dt = sol["dt"] if sol["dt"] == "auto" else float(sol["dt"])
        solver = SolverConfig(t_end=float(sol["t_end"]), dt=dt, cfl_advective=float(sol["cfl_advective"]),
                              cfl_dispersive=float(sol["cfl_dispersive"]), vacuum_floor=float(sol["vacuum_floor"]),
                              snapshot_every=int(sol["snapshot_every"]), exact_friction=bool(sol["exact_friction"]),
                              gradient_blowup=float(sol["gradient_blowup"]))
        initial = InitialRecipe(**{k: (float(v) if k == "rho_mean" else [list(map(float, e)) for e in v])
                                   for k, v in ini.items()})
        cfg = ExperimentConfig(
            grid=grid, energy=energy, capillarity=_capillarity(cap), solver=solver, initial=initial,
            system=str(exp["system"]), eps=float(cap["eps"]),
            eps_values=tuple(float(e) for e in exp["eps_values"]),
            amplitudes=tuple(float(a) for a in exp["amplitudes"]),
            setting=str(exp["setting"]), snapshots=int(exp["snapshots"]),
            ref_space_factor=int(exp["ref_space_factor"]), ref_time_factor=int(exp["ref_time_factor"]),
            floor_tolerance=float(exp["floor_tolerance"]), order_points=int(exp["order_points"]),
            order_levels=int(exp["order_levels"]), balance_levels=int(exp["balance_levels"]),
            mollifier_n=int(exp["mollifier_n"]), ch_steps=int(exp["ch_steps"]),
            friction_dt_ratio=float(exp["friction_dt_ratio"]),
            output_dir=str(output_dir) if output_dir is not None else "out")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("validation", str(exc)) from exc
    return cfg


def parse_config(path: str | Path, overrides: list[str] | None = None, output_dir: str | Path | None = None,
                 experiment: str | None = None) -> ExperimentConfig:
    """Parse, merge defaults, apply overrides and validate.

    When ``output_dir`` is given the resolved config is echoed there as
    ``resolved.toml`` and the overrides are logged verbatim to
    ``overrides.txt``.
    """
    overrides = list(overrides or [])
    merged = _merged(apply_overrides(load_raw(path), overrides))
    cfg = build_config(merged, output_dir)
    cfg.validate(experiment)
    if output_dir is not None:
        write_resolved(merged, output_dir, overrides)
    return cfg


def resolved_dict(path: str | Path, overrides: list[str] | None = None) -> dict:
    return _merged(apply_overrides(load_raw(path), list(overrides or [])))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_resolved(merged: dict, output_dir: str | Path, overrides: list[str] | None = None) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved.toml"
    with open(path, "wb") as fh:
        tomli_w.dump(_plain(merged), fh)
    with open(out / "overrides.txt", "w", newline="\n", encoding="utf-8") as fh:
        for item in overrides or []:
            fh.write(item + "\n")
    return path
