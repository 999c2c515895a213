"""Asymmetric kernels supported on [0, 1].

Distances between curves are nonnegative, so kernels only need the half line;
each family below is normalised to integrate to one over [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fvol.errors import OutOfSupport

FAMILIES = ("quadratic", "triangular", "uniform")


@dataclass(frozen=True)
class Kernel:
    family: str = "quadratic"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")

    def __call__(self, u):
        return kernel_eval(self, u)

    def power(self, j: int, u):
        """``K(u) ** j``."""
        return kernel_eval(self, u) ** j

    def power_deriv(self, j: int, u):
        return kernel_deriv(self, j, u)


QUADRATIC = Kernel("quadratic")


def get_kernel(name) -> Kernel:
    if isinstance(name, Kernel):
        return name
    return Kernel(str(name).strip().lower())


def _closed_form(family: str, u):
    if family == "quadratic":
        return 1.5 * (1.0 - u * u)
    if family == "triangular":
        return 2.0 * (1.0 - u)
    return np.ones_like(u)


def _closed_form_deriv(family: str, u):
    if family == "quadratic":
        return -3.0 * u
    if family == "triangular":
        return np.full_like(u, -2.0)
    return np.zeros_like(u)


def kernel_eval(k: Kernel, u):
    """Kernel value, zero outside [0, 1]. Accepts scalars or arrays."""
    arr = np.asarray(u, dtype=float)
    inside = (arr >= 0.0) & (arr <= 1.0)
    out = np.where(inside, _closed_form(k.family, np.where(inside, arr, 0.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_deriv(k: Kernel, j: int, u):
    """Derivative of ``K(u) ** j`` on [0, 1] (one-sided at the endpoints)."""
    if j not in (1, 2):
        raise ValueError(f"j must be 1 or 2, got {j}")
    arr = np.asarray(u, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise OutOfSupport("kernel derivative requested outside [0, 1]")
    d1 = _closed_form_deriv(k.family, arr)
    out = d1 if j == 1 else 2.0 * _closed_form(k.family, arr) * d1
    return float(out) if np.ndim(out) == 0 else out
