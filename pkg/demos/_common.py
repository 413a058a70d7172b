"""Shared helpers for the demo scripts."""
from pathlib import Path

from korteweg_lab.config import parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name, *overrides):
    """Parse a shipped config with ``section.key=value`` overrides."""
    return parse_config(CONFIGS / name, list(overrides))


def show_checks(report):
    for name, ok in report.checks.items():
        print(f"  {'PASS' if ok else 'FAIL'}  {name}")
