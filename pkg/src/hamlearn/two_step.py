"""Sequential identification: interpolate ``q`` and ``p``, then regress ``H``.

The Hamiltonian is recovered from derivative functionals only:
``d_p H(y_i) ~ dq/dt(t_i)`` and ``d_q H(y_i) ~ -dp/dt(t_i)``.  The fitted
model is ``H(x) = Psi(phi, x) . alpha`` with
``alpha = (Psi(phi, phi) + Lambda)^{-1} z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    ContractError,
    FunctionalLayout,
    KernelSpec,
    get_kernel,
    gram_derivative_functionals,
)
from .linalg import RegularizedSystem
from .representer import Interpolant, eval as interp_eval, eval_derivative, fit_values

__all__ = [
    "Ridges",
    "LearnedHamiltonian",
    "TwoStepResult",
    "fit_hamiltonian",
    "fit_two_step",
    "eval_H",
    "grad_H",
]


@dataclass(frozen=True)
class Ridges:
    """Regularisation parameters.

    ``lam_q``/``lam_p`` regularise the trajectory fits (both methods),
    ``lam_1``/``lam_2`` are the block ridges of the two-step ``H`` regression,
    ``lam`` is the ``H`` ridge of the one-step objective.
    """

    lam_q: float = 1e-5
    lam_p: float = 1e-5
    lam_1: float = 1e-3
    lam_2: float = 1e-3
    lam: float = 1e-3

    def __post_init__(self):
        for k, v in self.to_dict().items():
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"ridge {k} must be a nonnegative number, got {v}")

    def to_dict(self) -> dict:
        return {"lam_q": self.lam_q, "lam_p": self.lam_p, "lam_1": self.lam_1, "lam_2": self.lam_2, "lam": self.lam}


@dataclass(frozen=True)
class LearnedHamiltonian:
    kernel: KernelSpec
    anchors: np.ndarray  # (N, 2m), q then p per row
    coefficients: np.ndarray  # (2Nm,) in layout order
    targets: np.ndarray
    ridge: tuple

    @property
    def layout(self) -> FunctionalLayout:
        N, D = self.anchors.shape
        return FunctionalLayout(N, D // 2)

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def _natural_coefficients(self):
        return self.layout.to_natural(self.coefficients)

    def energy(self, X) -> np.ndarray:
        """``H*`` at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        g = get_kernel(self.kernel, self.dim).grad1(self.anchors, X)  # (N, n, D)
        return np.einsum("ia,ina->n", self._natural_coefficients(), g)

    def gradient(self, X) -> np.ndarray:
        """``grad H*`` at each row of ``X``, shape ``(n, 2m)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        h = get_kernel(self.kernel, self.dim).cross_hessian(self.anchors, X)  # (N, n, D, D)
        return np.einsum("ia,inab->nb", self._natural_coefficients(), h)

    def residual(self) -> float:
        """Max-abs residual of the stored ridge system, for re-checking a fit."""
        G = gram_derivative_functionals(self.kernel, self.anchors, self.layout)
        diag = np.asarray(self.ridge, dtype=float)
        if diag.size == 1:
            diag = np.full(G.shape[0], diag.item())
        else:
            half = G.shape[0] // 2
            diag = np.r_[np.full(half, diag[0]), np.full(half, diag[1])]
        return float(np.max(np.abs(G @ self.coefficients + diag * self.coefficients - self.targets)))


def eval_H(model: LearnedHamiltonian, x) -> float:
    return float(model.energy(np.asarray(x, dtype=float)[None, :])[0])


def grad_H(model: LearnedHamiltonian, x) -> np.ndarray:
    return model.gradient(np.asarray(x, dtype=float)[None, :])[0]


def fit_hamiltonian(kernel: KernelSpec, states, z, ridge_p: float, ridge_q: float | None = None) -> LearnedHamiltonian:
    """Kernel ridge fit of ``H`` to derivative targets ``z`` in layout order.

    The p-derivative block is regularised with ``ridge_p`` and the q-derivative
    block with ``ridge_q`` (defaults to ``ridge_p``).
    """
    states = np.asarray(states, dtype=float)
    N, D = states.shape
    layout = FunctionalLayout(N, D // 2)
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != layout.size:
        raise ContractError(f"targets have length {z.size}, expected {layout.size}")
    ridge_q = ridge_p if ridge_q is None else ridge_q
    G = gram_derivative_functionals(kernel, states, layout)
    if ridge_q == ridge_p:
        system = RegularizedSystem(G, ridge_p)
        ridge = (system.ridge_eff,)
    else:
        # non-uniform block ridge: fold the difference into the matrix
        half = layout.size // 2
        shift = np.r_[np.zeros(half), np.full(half, ridge_q - ridge_p)]
        system = RegularizedSystem(G + np.diag(shift), ridge_p)
        extra = system.ridge_eff - ridge_p
        ridge = (ridge_p + extra, ridge_q + extra)
    alpha = system.solve(z)
    return LearnedHamiltonian(kernel, states.copy(), alpha, z.copy(), ridge)


@dataclass(frozen=True)
class TwoStepResult:
    q: Interpolant
    p: Interpolant
    hamiltonian: LearnedHamiltonian


def fit_two_step(dataset, time_kernel: KernelSpec, state_kernel: KernelSpec, ridges: Ridges = Ridges()) -> TwoStepResult:
    """Interpolate the observed trajectory, then fit ``H`` on the collocation grid."""
    if not state_kernel.is_state_kernel:
        raise ContractError(f"{state_kernel.family} is not a state kernel")
    S = dataset.t_obs
    if S.size == 0:
        raise ContractError("dataset has no observations")
    m = dataset.m
    y_obs = dataset.y_obs
    q_star = fit_values(time_kernel, S, y_obs[:, :m], ridges.lam_q)
    p_star = fit_values(time_kernel, S, y_obs[:, m:], ridges.lam_p)
    T = dataset.t_col
    states = np.hstack([interp_eval(q_star, T), interp_eval(p_star, T)])
    z = np.concatenate([eval_derivative(q_star, T).ravel(), -eval_derivative(p_star, T).ravel()])
    H = fit_hamiltonian(state_kernel, states, z, ridges.lam_1, ridges.lam_2)
    return TwoStepResult(q_star, p_star, H)
