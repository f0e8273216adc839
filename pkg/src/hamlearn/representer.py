"""Kernel interpolants of trajectory components in time.

An :class:`Interpolant` is a finite kernel expansion over two kinds of
anchors: point evaluations at times ``S`` and first time-derivative
evaluations at times ``T``.  The plain fit uses only ``S``; the one-step
method also pins the derivative at the collocation grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import ContractError, KernelSpec, get_kernel
from .linalg import RegularizedSystem

__all__ = [
    "Interpolant",
    "extended_gram",
    "extended_cross",
    "fit_values",
    "fit_values_and_derivatives",
    "eval",
    "eval_derivative",
    "DUPLICATE_TOL",
]

DUPLICATE_TOL = 1e-9


def _times(t, what):
    t = np.asarray(t, dtype=float).reshape(-1)
    if not np.all(np.isfinite(t)):
        raise ContractError(f"{what} contain non-finite entries")
    order = np.argsort(t, kind="stable")
    ts = t[order]
    if ts.size > 1 and np.min(np.diff(ts)) < DUPLICATE_TOL:
        raise ContractError(f"{what} contain duplicates (closer than {DUPLICATE_TOL:g})")
    return ts, order


def _values(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] != n:
        raise ContractError(f"{what} must have {n} rows, got shape {v.shape}")
    return v


def extended_gram(kernel: KernelSpec, S, T) -> np.ndarray:
    """Gram matrix of point evaluations at ``S`` followed by derivatives at ``T``."""
    k = get_kernel(kernel, 1)
    S = np.asarray(S, dtype=float).reshape(-1, 1)
    T = np.asarray(T, dtype=float).reshape(-1, 1)
    KSS = k.value(S, S)
    if T.shape[0] == 0:
        return KSS
    KST = k.grad2(S, T)[..., 0]
    KTT = k.cross_hessian(T, T)[..., 0, 0]
    G = np.block([[KSS, KST], [KST.T, KTT]])
    return 0.5 * (G + G.T)


def extended_cross(kernel: KernelSpec, tau, S, T, derivative: bool = False) -> np.ndarray:
    """Rows ``[K(tau, S), d_t' K(tau, T)]``, or their ``d/dtau`` if ``derivative``."""
    k = get_kernel(kernel, 1)
    tau = np.asarray(tau, dtype=float).reshape(-1, 1)
    S = np.asarray(S, dtype=float).reshape(-1, 1)
    T = np.asarray(T, dtype=float).reshape(-1, 1)
    if derivative:
        left = k.grad1(tau, S)[..., 0]
        right = k.cross_hessian(tau, T)[..., 0, 0] if T.shape[0] else np.zeros((tau.shape[0], 0))
    else:
        left = k.value(tau, S)
        right = k.grad2(tau, T)[..., 0] if T.shape[0] else np.zeros((tau.shape[0], 0))
    return np.hstack([left, right])


@dataclass(frozen=True)
class Interpolant:
    """Kernel expansion ``f(t) = K(t, S) a + d_t' K(t, T) b`` with one column per component."""

    kernel: KernelSpec
    anchors: np.ndarray
    coefficients: np.ndarray
    ridge: float
    derivative_anchors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_components(self) -> int:
        return self.coefficients.shape[1]

    def __call__(self, times) -> np.ndarray:
        return eval(self, times)

    def derivative(self, times) -> np.ndarray:
        return eval_derivative(self, times)


def fit_values_and_derivatives(kernel: KernelSpec, S, values, T, derivative_values, ridge: float) -> Interpolant:
    """Ridge fit to point values at ``S`` and first derivatives at ``T``."""
    if kernel.family != "gaussian_time":
        raise ContractError(f"trajectory interpolants need a time kernel, got {kernel.family}")
    S_sorted, s_order = _times(S, "value anchors")
    T_sorted, t_order = _times(T, "derivative anchors")
    if S_sorted.size == 0:
        raise ContractError("at least one value anchor is required")
    values = _values(values, S_sorted.size, "values")[s_order]
    dvals = np.asarray(derivative_values, dtype=float)
    if T_sorted.size == 0:
        dvals = np.zeros((0, values.shape[1]))
    else:
        dvals = _values(dvals, T_sorted.size, "derivative values")[t_order]
        if dvals.shape[1] != values.shape[1]:
            raise ContractError("values and derivative values have different component counts")
    G = extended_gram(kernel, S_sorted, T_sorted)
    system = RegularizedSystem(G, ridge)
    coef = system.solve(np.vstack([values, dvals]))
    return Interpolant(kernel, S_sorted, coef, system.ridge_eff, T_sorted)


def fit_values(kernel: KernelSpec, S, values, ridge: float) -> Interpolant:
    """Ridge-regularised kernel interpolant of ``values`` observed at times ``S``."""
    return fit_values_and_derivatives(kernel, S, values, np.zeros(0), None, ridge)


def eval(interp: Interpolant, times) -> np.ndarray:
    rows = extended_cross(interp.kernel, times, interp.anchors, interp.derivative_anchors)
    return rows @ interp.coefficients


def eval_derivative(interp: Interpolant, times) -> np.ndarray:
    rows = extended_cross(interp.kernel, times, interp.anchors, interp.derivative_anchors, derivative=True)
    return rows @ interp.coefficients
