"""Ridge-regularised symmetric solves with a deterministic jitter ladder."""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import KernelSpec, gram

__all__ = [
    "SingularSystemError",
    "RegularizedSystem",
    "solve_ridge",
    "quadratic_form",
    "norm_identity_check",
    "JITTER_LADDER",
]

# multiples of tr(A)/n added on top of the requested ridge, in order
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, *, ridge=None, trace=None, diag_min=None, n=None):
        super().__init__(message)
        self.ridge = ridge
        self.trace = trace
        self.diag_min = diag_min
        self.n = n


class RegularizedSystem:
    """Cholesky factorisation of ``A + lam_eff I`` for symmetric ``A``.

    ``lam_eff`` starts at the requested ridge and is escalated along
    :data:`JITTER_LADDER` (scaled by ``tr(A)/n``) only if the factorisation
    fails.
    """

    def __init__(self, A, ridge: float = 0.0):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        if ridge < 0:
            raise ValueError(f"ridge must be nonnegative, got {ridge}")
        self.n = A.shape[0]
        self.A = 0.5 * (A + A.T)
        self.ridge = float(ridge)
        scale = np.trace(self.A) / self.n if self.n else 0.0
        self.factor = None
        self.ridge_eff = self.ridge
        if self.n == 0:
            return
        for mult in JITTER_LADDER:
            if mult > 0 and scale <= 0:
                break
            lam = self.ridge + mult * scale
            try:
                self.factor = cho_factor(self.A + lam * np.eye(self.n), lower=True)
            except (LinAlgError, ValueError):
                continue
            self.ridge_eff = lam
            break
        if self.factor is None:
            diag = np.diag(self.A)
            raise SingularSystemError(
                f"factorisation of {self.n}x{self.n} system failed at maximum jitter "
                f"(ridge={self.ridge:.3e}, tr/n={scale:.3e}, min diag={diag.min():.3e})",
                ridge=self.ridge,
                trace=float(np.trace(self.A)),
                diag_min=float(diag.min()),
                n=self.n,
            )

    @property
    def lower(self) -> np.ndarray:
        return np.tril(self.factor[0])

    def solve(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if self.n == 0:
            return np.zeros_like(B)
        return cho_solve(self.factor, B, check_finite=False)

    def quadratic_form(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(np.sum(xi * self.solve(xi)))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))


def solve_ridge(A, ridge, B):
    """Solve ``(A + lam_eff I) X = B``; returns ``(X, lam_eff)``."""
    system = RegularizedSystem(A, ridge)
    return system.solve(B), system.ridge_eff


def quadratic_form(A, ridge, xi) -> float:
    """``xi^T (A + lam_eff I)^{-1} xi``."""
    return RegularizedSystem(A, ridge).quadratic_form(xi)


def norm_identity_check(spec: KernelSpec, anchors, ridge: float, xi):
    """Both sides of the penalised norm identity for a kernel regressor.

    ``lhs = a^T K a + |K a - xi|^2 / ridge`` with ``a = (K + ridge I)^{-1} xi``
    and ``rhs = xi^T (K + ridge I)^{-1} xi``.  At ``ridge == 0`` the residual
    term is dropped (exact interpolation).
    """
    K = gram(spec, anchors, anchors)
    system = RegularizedSystem(K, ridge)
    xi = np.asarray(xi, dtype=float)
    alpha = system.solve(xi)
    lhs = float(alpha @ K @ alpha)
    if system.ridge_eff > 0:
        resid = K @ alpha - xi
        lhs += float(resid @ resid) / system.ridge_eff
    return lhs, system.quadratic_form(xi)
