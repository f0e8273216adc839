"""Kernel families with closed-form derivatives and Gram assembly.

Four families are supported:

``gaussian_time``
    ``exp(-(t - t')**2 / (2 theta**2))`` on scalar times.
``gaussian_state``
    ``exp(-|x - x'|**2 / (2 theta**2))`` on the concatenated state ``x = (q, p)``.
``separable_polynomial``
    ``(q.q' + c)**d + (p.p' + c)**d``.
``additive_poly_gaussian``
    ``exp(-|q - q'|**2 / (2 theta**2)) + (p.p' + c)**d``.

The polynomial offset ``c`` defaults to the lengthscale ``theta``.

Every family is a sum of *atoms*, each acting on a contiguous slice of the
coordinates.  An atom knows its value, first derivative in the first
argument, the mixed second derivative ``d2K/dx_a dx'_b`` and a contracted
third derivative used by the one-step gradient.  All evaluations are
vectorised over point pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "FAMILIES",
    "STATE_FAMILIES",
    "ContractError",
    "KernelSpec",
    "FunctionalLayout",
    "Kernel",
    "kernel_eval",
    "kernel_grad_first",
    "kernel_cross_hessian",
    "gram",
    "gram_derivative_functionals",
    "cross_derivative_functionals",
]

FAMILIES = ("gaussian_time", "gaussian_state", "separable_polynomial", "additive_poly_gaussian")
STATE_FAMILIES = FAMILIES[1:]


class ContractError(ValueError):
    """Raised when inputs violate a documented shape or parameter contract."""


@dataclass(frozen=True)
class KernelSpec:
    family: str
    lengthscale: float = 1.0
    degree: int = 3
    offset: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ContractError(f"lengthscale must be positive, got {self.lengthscale}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ContractError(f"degree must be a positive integer, got {self.degree}")

    @property
    def is_state_kernel(self) -> bool:
        return self.family in STATE_FAMILIES

    @property
    def poly_offset(self) -> float:
        return self.lengthscale if self.offset is None else float(self.offset)

    @property
    def name(self) -> str:
        """Short label used in file names and reports."""
        return {
            "gaussian_time": "gaussian_time",
            "gaussian_state": "gaussian",
            "separable_polynomial": "poly",
            "additive_poly_gaussian": "addpolygauss",
        }[self.family]

    def to_dict(self) -> dict:
        d = {"family": self.family, "lengthscale": self.lengthscale}
        if self.family in ("separable_polynomial", "additive_poly_gaussian"):
            d["degree"] = int(self.degree)
            if self.offset is not None:
                d["offset"] = self.offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        unknown = set(d) - {"family", "lengthscale", "degree", "offset"}
        if unknown:
            raise ContractError(f"unknown kernel keys {sorted(unknown)}")
        if "family" not in d:
            raise ContractError("kernel descriptor needs a 'family'")
        return cls(
            family=d["family"],
            lengthscale=float(d.get("lengthscale", 1.0)),
            degree=int(d.get("degree", 3)),
            offset=None if d.get("offset") is None else float(d["offset"]),
        )


@dataclass(frozen=True)
class FunctionalLayout:
    """Ordering of the ``2Nm`` derivative functionals at ``N`` anchor states.

    Index ``b*N*m + i*m + j`` holds ``d/dp_j`` (block ``b = 0``) or ``d/dq_j``
    (block ``b = 1``) evaluated at anchor ``i``.  States themselves are stored
    naturally as ``(q_1..q_m, p_1..p_m)``.
    """

    N: int
    m: int

    def __post_init__(self):
        if self.N < 1 or self.m < 1:
            raise ContractError(f"layout needs N >= 1 and m >= 1, got N={self.N}, m={self.m}")

    @property
    def size(self) -> int:
        return 2 * self.N * self.m

    @property
    def coordinate_order(self) -> np.ndarray:
        """State coordinates in functional-block order (p first, then q)."""
        m = self.m
        return np.r_[np.arange(m, 2 * m), np.arange(m)]

    def index(self, block: str, i: int, j: int) -> int:
        b = {"p": 0, "q": 1}[block]
        return b * self.N * self.m + i * self.m + j

    def to_natural(self, vec) -> np.ndarray:
        """Map a layout vector to an ``(N, 2m)`` array indexed like the states."""
        v = np.asarray(vec, dtype=float).reshape(2, self.N, self.m)
        return np.concatenate([v[1], v[0]], axis=1)

    def from_natural(self, arr) -> np.ndarray:
        a = np.asarray(arr, dtype=float).reshape(self.N, 2 * self.m)
        m = self.m
        return np.concatenate([a[:, m:].ravel(), a[:, :m].ravel()])


def _pow(base, k):
    # base**k with a zero result for negative k (the coefficient vanishes there)
    if k < 0:
        return np.zeros_like(base)
    return base**k


class _GaussianAtom:
    def __init__(self, theta: float, sl: slice):
        self.theta = float(theta)
        self.sl = sl

    def value(self, X, Y):
        r = X[:, None, self.sl] - Y[None, :, self.sl]
        return np.exp(-0.5 * np.einsum("ijk,ijk->ij", r, r) / self.theta**2)

    def grad1(self, X, Y, out):
        r = X[:, None, self.sl] - Y[None, :, self.sl]
        K = np.exp(-0.5 * np.einsum("ijk,ijk->ij", r, r) / self.theta**2)
        out[:, :, self.sl] += -r * (K / self.theta**2)[..., None]

    def cross_hessian(self, X, Y, out):
        t2 = self.theta**2
        r = X[:, None, self.sl] - Y[None, :, self.sl]
        K = np.exp(-0.5 * np.einsum("ijk,ijk->ij", r, r) / t2)
        d = r.shape[-1]
        block = np.eye(d) / t2 - r[..., :, None] * r[..., None, :] / t2**2
        out[:, :, self.sl, self.sl] += K[..., None, None] * block

    def third_contract(self, X, Y, U, V):
        # sum_j sum_ab U[i,a] V[j,b] d/dx_c d2K/dx_a dx'_b (X_i, Y_j)
        t2 = self.theta**2
        r = X[:, None, self.sl] - Y[None, :, self.sl]
        K = np.exp(-0.5 * np.einsum("ijk,ijk->ij", r, r) / t2)
        u = U[:, None, self.sl]
        v = V[None, :, self.sl]
        uv = np.sum(u * v, axis=-1)
        ur = np.sum(u * r, axis=-1)
        vr = np.sum(v * r, axis=-1)
        D = -(r / t2) * (uv / t2 - ur * vr / t2**2)[..., None] - (u * vr[..., None] + v * ur[..., None]) / t2**2
        res = np.zeros((X.shape[0], X.shape[1]))
        res[:, self.sl] = np.einsum("ij,ijc->ic", K, D)
        return res


class _PolyAtom:
    def __init__(self, offset: float, degree: int, sl: slice):
        self.c = float(offset)
        self.d = int(degree)
        self.sl = sl

    def _P(self, X, Y):
        return X[:, self.sl] @ Y[:, self.sl].T + self.c

    def value(self, X, Y):
        return self._P(X, Y) ** self.d

    def grad1(self, X, Y, out):
        P = self._P(X, Y)
        out[:, :, self.sl] += (self.d * _pow(P, self.d - 1))[..., None] * Y[None, :, self.sl]

    def cross_hessian(self, X, Y, out):
        d = self.d
        P = self._P(X, Y)
        x = X[:, None, self.sl]
        y = Y[None, :, self.sl]
        k = x.shape[-1]
        # d2/dx_a dx'_b = d(d-1) P^(d-2) x'_a x_b + d P^(d-1) delta_ab
        outer = y[..., :, None] * x[..., None, :]
        block = (d * (d - 1) * _pow(P, d - 2))[..., None, None] * outer
        block = block + (d * _pow(P, d - 1))[..., None, None] * np.eye(k)
        out[:, :, self.sl, self.sl] += block

    def third_contract(self, X, Y, U, V):
        d = self.d
        P = self._P(X, Y)
        x = X[:, None, self.sl]
        y = Y[None, :, self.sl]
        u = U[:, None, self.sl]
        v = V[None, :, self.sl]
        uy = np.sum(u * y, axis=-1)
        vx = np.sum(v * x, axis=-1)
        uv = np.sum(u * v, axis=-1)
        c3 = d * (d - 1) * (d - 2) * _pow(P, d - 3)
        c2 = d * (d - 1) * _pow(P, d - 2)
        D = (c3 * uy * vx)[..., None] * y + c2[..., None] * (uy[..., None] * v + uv[..., None] * y)
        res = np.zeros((X.shape[0], X.shape[1]))
        res[:, self.sl] = D.sum(axis=1)
        return res


class Kernel:
    """Vectorised evaluator for a :class:`KernelSpec` on points of dimension ``dim``.

    All array methods take ``X`` of shape ``(n1, dim)`` and ``Y`` of shape
    ``(n2, dim)``.
    """

    def __init__(self, spec: KernelSpec, dim: int):
        self.spec = spec
        self.dim = int(dim)
        theta, c, deg = spec.lengthscale, spec.poly_offset, spec.degree
        if spec.family == "gaussian_time":
            if dim != 1:
                raise ContractError(f"gaussian_time acts on scalar times, got dimension {dim}")
            self.atoms = [_GaussianAtom(theta, slice(0, 1))]
            return
        if dim < 2 or dim % 2:
            raise ContractError(f"state kernels need an even dimension 2m, got {dim}")
        m = dim // 2
        q, p = slice(0, m), slice(m, 2 * m)
        if spec.family == "gaussian_state":
            self.atoms = [_GaussianAtom(theta, slice(0, dim))]
        elif spec.family == "separable_polynomial":
            self.atoms = [_PolyAtom(c, deg, q), _PolyAtom(c, deg, p)]
        else:
            self.atoms = [_GaussianAtom(theta, q), _PolyAtom(c, deg, p)]

    def _check(self, *arrs):
        for a in arrs:
            if a.ndim != 2 or a.shape[1] != self.dim:
                raise ContractError(f"expected points of dimension {self.dim}, got array of shape {a.shape}")

    def value(self, X, Y) -> np.ndarray:
        self._check(X, Y)
        return sum(a.value(X, Y) for a in self.atoms)

    def grad1(self, X, Y) -> np.ndarray:
        """``dK/dx`` at each pair, shape ``(n1, n2, dim)``."""
        self._check(X, Y)
        out = np.zeros((X.shape[0], Y.shape[0], self.dim))
        for a in self.atoms:
            a.grad1(X, Y, out)
        return out

    def grad2(self, X, Y) -> np.ndarray:
        """``dK/dx'`` at each pair, shape ``(n1, n2, dim)``."""
        return self.grad1(Y, X).transpose(1, 0, 2)

    def cross_hessian(self, X, Y) -> np.ndarray:
        """``d2K/dx_a dx'_b`` at each pair, shape ``(n1, n2, dim, dim)``."""
        self._check(X, Y)
        out = np.zeros((X.shape[0], Y.shape[0], self.dim, self.dim))
        for a in self.atoms:
            a.cross_hessian(X, Y, out)
        return out

    def third_contract(self, X, Y, U, V) -> np.ndarray:
        """``sum_j sum_ab U[i,a] V[j,b] d/dx_c d2K/dx_a dx'_b (X_i, Y_j)``, shape ``(n1, dim)``."""
        self._check(X, Y, U, V)
        return sum(a.third_contract(X, Y, U, V) for a in self.atoms)


@lru_cache(maxsize=64)
def _kernel(spec: KernelSpec, dim: int) -> Kernel:
    return Kernel(spec, dim)


def get_kernel(spec: KernelSpec, dim: int) -> Kernel:
    return _kernel(spec, int(dim))


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X[:, None]
    return X


def _vector(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _pair(x, xp):
    x, xp = _vector(x), _vector(xp)
    if x.shape != xp.shape or x.ndim != 1:
        raise ContractError(f"point dimensions differ: {x.shape} vs {xp.shape}")
    return x[None, :], xp[None, :]


def kernel_eval(spec: KernelSpec, x, xp) -> float:
    X, Y = _pair(x, xp)
    return float(get_kernel(spec, X.shape[1]).value(X, Y)[0, 0])


def kernel_grad_first(spec: KernelSpec, x, xp) -> np.ndarray:
    X, Y = _pair(x, xp)
    return get_kernel(spec, X.shape[1]).grad1(X, Y)[0, 0]


def kernel_cross_hessian(spec: KernelSpec, x, xp) -> np.ndarray:
    X, Y = _pair(x, xp)
    return get_kernel(spec, X.shape[1]).cross_hessian(X, Y)[0, 0]


def gram(spec: KernelSpec, X, Y) -> np.ndarray:
    """Plain Gram matrix ``K(X_i, Y_j)``.

    For ``gaussian_time`` the point lists may be 1-D arrays of times.
    """
    X, Y = _points(X), _points(Y)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    return get_kernel(spec, X.shape[1]).value(X, Y)


def _state_setup(spec, states, layout):
    if not spec.is_state_kernel:
        raise ContractError(f"{spec.family} is not a state kernel")
    Y = np.asarray(states, dtype=float)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ContractError(f"states must be a non-empty (N, 2m) array, got shape {Y.shape}")
    N, D = Y.shape
    if D % 2:
        raise ContractError(f"state dimension must be even, got {D}")
    if layout is None:
        layout = FunctionalLayout(N, D // 2)
    elif (layout.N, 2 * layout.m) != (N, D):
        raise ContractError(f"layout (N={layout.N}, m={layout.m}) does not match states of shape {Y.shape}")
    return Y, layout


def gram_derivative_functionals(spec: KernelSpec, states, layout: FunctionalLayout | None = None) -> np.ndarray:
    """Gram matrix of the ``2Nm`` first-derivative functionals at ``states``.

    Entry ``(k, l)`` is ``d2K/dx_a dx'_b`` between the anchors and coordinates
    that the layout assigns to ``k`` and ``l``.
    """
    Y, layout = _state_setup(spec, states, layout)
    N, m = layout.N, layout.m
    perm = layout.coordinate_order
    H = get_kernel(spec, 2 * m).cross_hessian(Y, Y)[:, :, perm][:, :, :, perm]
    G = H.reshape(N, N, 2, m, 2, m).transpose(2, 0, 3, 4, 1, 5).reshape(2 * N * m, 2 * N * m)
    return 0.5 * (G + G.T)


def cross_derivative_functionals(spec: KernelSpec, states, x, layout: FunctionalLayout | None = None) -> np.ndarray:
    """Vector ``(d_p K(y_i, x); d_q K(y_i, x))`` in layout order."""
    Y, layout = _state_setup(spec, states, layout)
    x = _vector(x)
    if x.shape != (Y.shape[1],):
        raise ContractError(f"query point has shape {x.shape}, expected ({Y.shape[1]},)")
    g = get_kernel(spec, Y.shape[1]).grad1(Y, x[None, :])[:, 0, :]
    return layout.from_natural(g)
