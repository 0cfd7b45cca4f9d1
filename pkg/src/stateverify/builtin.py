"""Packaged example problems and the closed-form targets of the density example."""

from __future__ import annotations

from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping

from .document import ProblemDocument, read_document

__all__ = ["EXAMPLES", "example_path", "load_example", "density_targets"]

EXAMPLES = ("atoms", "density", "atoms_c")


def example_path(name: str) -> Path:
    if name not in EXAMPLES:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    return Path(str(resources.files("stateverify") / "data" / f"{name}.ocp"))


def load_example(name: str, overrides: Mapping[str, float] | None = None) -> ProblemDocument:
    return read_document(example_path(name), overrides)


def density_targets(a=1, b=2, T=3) -> dict[str, Fraction]:
    """Targets that make ``psi_z1 = -1`` consistent, ``psi_z2`` continuous and ``psi_x`` jump-free.

    Exact when the inputs are integers or fractions. With ``u0 = (-1, 0, 1)``
    and ``x0 = a - t`` before the arc:

    * ``psi_z2(a - 0) = psi_z2(b + 0)`` fixes ``z2h``;
    * ``psi_x(a - 0) = 0`` fixes ``x0h``;
    * ``psi_x(b + 0) = 0`` fixes ``xTh``.
    """
    a, b, T = Fraction(a), Fraction(b), Fraction(T)
    left = -Fraction(2, 3) * a ** 3 + (3 * a + b) / 2 * a ** 2 - a * (a + b) * a
    right = Fraction(2, 3) * (b ** 3 - T ** 3) - (a + 3 * b) / 2 * (b ** 2 - T ** 2) + b * (a + b) * (b - T)
    z2h = (left - right) / 2
    x0h = a + (a ** 3 / 3 - (a + b) / 2 * a ** 2 + a * b * a) / 2
    xTh = T - b - ((b ** 3 - T ** 3) / 3 - (a + b) / 2 * (b ** 2 - T ** 2) + a * b * (b - T)) / 2
    return {"z1h": Fraction(1, 2), "z2h": z2h, "x0h": x0h, "xTh": xTh}
