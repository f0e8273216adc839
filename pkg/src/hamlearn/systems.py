"""The four benchmark Hamiltonians and their analytic gradients.

States are ordered ``(q_1..q_m, p_1..p_m)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["SystemSpec", "SYSTEMS", "get_system", "true_hamiltonian"]


@dataclass(frozen=True)
class SystemSpec:
    id: str
    m: int
    hamiltonian: Callable
    grad_hamiltonian: Callable
    y0: tuple
    kernels: tuple  # state-kernel families the benchmark tables use

    @property
    def dim(self) -> int:
        return 2 * self.m


def _ms_H(y):
    q, p = y[0], y[1]
    return 0.5 * (q * q + p * p)


def _ms_grad(y):
    return np.array([y[0], y[1]], dtype=float)


def _tm_H(y):
    q1, q2, p1, p2 = y
    return 0.5 * (p1**2 + p2**2) + 0.5 * (q1**2 + q2**2 + (q2 - q1) ** 2)


def _tm_grad(y):
    q1, q2, p1, p2 = y
    return np.array([2 * q1 - q2, 2 * q2 - q1, p1, p2], dtype=float)


def _hh_H(y):
    q1, q2, p1, p2 = y
    return 0.5 * (p1**2 + p2**2) + 0.5 * (q1**2 + q2**2) + q1**2 * q2 - q2**3 / 3


def _hh_grad(y):
    q1, q2, p1, p2 = y
    return np.array([q1 + 2 * q1 * q2, q2 + q1**2 - q2**2, p1, p2], dtype=float)


def _pd_H(y):
    return 0.5 * y[1] ** 2 - np.cos(y[0])


def _pd_grad(y):
    return np.array([np.sin(y[0]), y[1]], dtype=float)


SYSTEMS = {
    "mass_spring": SystemSpec("mass_spring", 1, _ms_H, _ms_grad, (0.0, 1.0), ("gaussian_state", "separable_polynomial")),
    "two_mass_three_spring": SystemSpec(
        "two_mass_three_spring", 2, _tm_H, _tm_grad, (0.2, -0.1, 0.1, -0.1), ("gaussian_state", "separable_polynomial")
    ),
    "henon_heiles": SystemSpec(
        "henon_heiles", 2, _hh_H, _hh_grad, (0.2, -0.1, 0.1, -0.1), ("gaussian_state", "separable_polynomial")
    ),
    "pendulum": SystemSpec("pendulum", 1, _pd_H, _pd_grad, (0.95 * np.pi, 0.0), ("gaussian_state", "additive_poly_gaussian")),
}


def get_system(system) -> SystemSpec:
    if isinstance(system, SystemSpec):
        return system
    try:
        return SYSTEMS[system]
    except KeyError:
        raise KeyError(f"unknown system {system!r}; expected one of {sorted(SYSTEMS)}") from None


def true_hamiltonian(system, y) -> float:
    s = get_system(system)
    y = np.asarray(y, dtype=float)
    if y.shape != (s.dim,):
        raise ValueError(f"{s.id} states have dimension {s.dim}, got shape {y.shape}")
    return float(s.hamiltonian(y))
