"""Joint identification of trajectories and Hamiltonian through slack derivatives.

With latent derivatives ``z1 ~ dq/dt`` and ``z2 ~ dp/dt`` on the
collocation grid ``T``, the reduced objective is

    f(z) = uq^T (Gq + lam_q I)^{-1} uq + up^T (Gp + lam_p I)^{-1} up
           + w^T (Psi(phi, phi)[y(z)] + lam I)^{-1} w

with ``uq = (q(S); z1)``, ``up = (p(S); z2)``, ``w = (z1; -z2)`` and ``Gq``,
``Gp`` the Gram matrices of point evaluations at ``S`` and time derivatives
at ``T``.  The anchor states ``y(z)`` are the trajectory fits evaluated on
``T``, which makes the last term non-convex in ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .kernels import ContractError, FunctionalLayout, KernelSpec, get_kernel, gram_derivative_functionals
from .linalg import RegularizedSystem, SingularSystemError
from .optimize import LBFGSOptions, lbfgs
from .representer import Interpolant, eval_derivative, extended_cross, extended_gram, fit_values_and_derivatives
from .two_step import LearnedHamiltonian, Ridges, TwoStepResult, fit_hamiltonian, fit_two_step

__all__ = [
    "SlackVariables",
    "OneStepOptions",
    "OneStepProblem",
    "Diagnostics",
    "OneStepResult",
    "reduced_objective",
    "reduced_gradient",
    "warm_start",
    "minimize",
    "extract_model",
    "frozen_minimizer",
    "fit_one_step",
]

GRADIENT_MODES = ("full", "frozen")


@dataclass(frozen=True)
class SlackVariables:
    z1: np.ndarray  # (N, m)
    z2: np.ndarray  # (N, m)

    def __post_init__(self):
        if self.z1.shape != self.z2.shape or self.z1.ndim != 2:
            raise ContractError(f"slack blocks must share an (N, m) shape, got {self.z1.shape} and {self.z2.shape}")
        if not (np.all(np.isfinite(self.z1)) and np.all(np.isfinite(self.z2))):
            raise ContractError("slack variables must be finite")

    @property
    def shape(self):
        return self.z1.shape

    def flat(self) -> np.ndarray:
        return np.concatenate([self.z1.ravel(), self.z2.ravel()])

    @classmethod
    def from_flat(cls, z, N: int, m: int) -> "SlackVariables":
        z = np.asarray(z, dtype=float)
        return cls(z[: N * m].reshape(N, m).copy(), z[N * m:].reshape(N, m).copy())


@dataclass(frozen=True)
class OneStepOptions:
    gradient_mode: str = "full"
    lbfgs: LBFGSOptions = LBFGSOptions()

    def __post_init__(self):
        if self.gradient_mode not in GRADIENT_MODES:
            raise ContractError(f"gradient_mode must be one of {GRADIENT_MODES}, got {self.gradient_mode!r}")


class OneStepProblem:
    """Cached pieces of the reduced objective for one dataset.

    The trajectory systems depend only on the observation and collocation
    times, so they are factorised once.  Passing ``frozen_states`` fixes the
    anchor states of the Hamiltonian term, which turns the objective into a
    convex quadratic in ``z``.
    """

    def __init__(self, t_obs, y_obs, t_col, time_kernel: KernelSpec, state_kernel: KernelSpec,
                 ridges: Ridges = Ridges(), gradient_mode: str = "full", frozen_states=None):
        if gradient_mode not in GRADIENT_MODES:
            raise ContractError(f"gradient_mode must be one of {GRADIENT_MODES}, got {gradient_mode!r}")
        if not state_kernel.is_state_kernel:
            raise ContractError(f"{state_kernel.family} is not a state kernel")
        self.S = np.asarray(t_obs, dtype=float).reshape(-1)
        self.T = np.asarray(t_col, dtype=float).reshape(-1)
        y_obs = np.asarray(y_obs, dtype=float).reshape(self.S.size, -1)
        self.m = y_obs.shape[1] // 2
        self.q_obs, self.p_obs = y_obs[:, : self.m], y_obs[:, self.m:]
        self.N = self.T.size
        self.n_obs = self.S.size
        self.layout = FunctionalLayout(self.N, self.m)
        self.time_kernel = time_kernel
        self.state_kernel = state_kernel
        self.ridges = ridges
        self.gradient_mode = gradient_mode
        self.frozen_states = None if frozen_states is None else np.asarray(frozen_states, dtype=float)

        G = extended_gram(time_kernel, self.S, self.T)
        self.sys_q = RegularizedSystem(G, ridges.lam_q)
        self.sys_p = self.sys_q if ridges.lam_p == ridges.lam_q else RegularizedSystem(G, ridges.lam_p)
        # maps from stacked (values; derivatives) to trajectory values on T
        cross = extended_cross(time_kernel, self.T, self.S, self.T)
        self.map_q = self.sys_q.solve(cross.T).T
        self.map_p = self.map_q if self.sys_p is self.sys_q else self.sys_p.solve(cross.T).T
        self._kernel = get_kernel(state_kernel, 2 * self.m)

    @classmethod
    def from_dataset(cls, dataset, time_kernel, state_kernel, ridges=Ridges(), gradient_mode="full", frozen_states=None):
        return cls(dataset.t_obs, dataset.y_obs, dataset.t_col, time_kernel, state_kernel, ridges, gradient_mode,
                   frozen_states)

    @property
    def n_vars(self) -> int:
        return 2 * self.N * self.m

    def _split(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_vars:
            raise ContractError(f"expected {self.n_vars} slack entries, got {z.size}")
        Nm = self.N * self.m
        return z[:Nm].reshape(self.N, self.m), z[Nm:].reshape(self.N, self.m)

    def states(self, slack) -> np.ndarray:
        """Reconstructed states on the collocation grid, ``(N, 2m)``."""
        z = slack.flat() if isinstance(slack, SlackVariables) else slack
        z1, z2 = self._split(z)
        q = self.map_q @ np.vstack([self.q_obs, z1])
        p = self.map_p @ np.vstack([self.p_obs, z2])
        return np.hstack([q, p])

    def anchor_states(self, z) -> np.ndarray:
        return self.frozen_states if self.frozen_states is not None else self.states(z)

    def terms(self, z) -> tuple:
        """The three quadratic forms of the objective at flat slack ``z``."""
        z1, z2 = self._split(z)
        f1 = self.sys_q.quadratic_form(np.vstack([self.q_obs, z1]))
        f2 = self.sys_p.quadratic_form(np.vstack([self.p_obs, z2]))
        w = np.concatenate([z1.ravel(), -z2.ravel()])
        G = gram_derivative_functionals(self.state_kernel, self.anchor_states(z), self.layout)
        f3 = self._h_system(G).quadratic_form(w)
        return f1, f2, f3

    def _h_system(self, G):
        try:
            return RegularizedSystem(G, self.ridges.lam)
        except SingularSystemError as exc:
            raise SingularSystemError(f"Hamiltonian system during one-step objective: {exc}", ridge=exc.ridge,
                                      trace=exc.trace, diag_min=exc.diag_min, n=exc.n) from exc

    def objective(self, z) -> float:
        return float(sum(self.terms(z)))

    def objective_and_gradient(self, z):
        z1, z2 = self._split(z)
        m, n_obs = self.m, self.n_obs
        uq = np.vstack([self.q_obs, z1])
        up = np.vstack([self.p_obs, z2])
        cq = self.sys_q.solve(uq)
        cp = self.sys_p.solve(up)
        f = float(np.sum(uq * cq) + np.sum(up * cp))
        g1 = 2 * cq[n_obs:]
        g2 = 2 * cp[n_obs:]

        Y = self.anchor_states(z)
        G = gram_derivative_functionals(self.state_kernel, Y, self.layout)
        system = self._h_system(G)
        w = np.concatenate([z1.ravel(), -z2.ravel()])
        beta = system.solve(w)
        f += float(w @ beta)
        Nm = self.N * m
        g1 += 2 * beta[:Nm].reshape(self.N, m)
        g2 -= 2 * beta[Nm:].reshape(self.N, m)
        if self.gradient_mode == "full" and self.frozen_states is None:
            # d(w^T (G(Y) + lam I)^{-1} w)/dY = -d(beta^T G(Y) beta)/dY
            B = self.layout.to_natural(beta)
            gY = -2 * self._kernel.third_contract(Y, Y, B, B)
            g1 += self.map_q[:, n_obs:].T @ gY[:, :m]
            g2 += self.map_p[:, n_obs:].T @ gY[:, m:]
        return f, np.concatenate([g1.ravel(), g2.ravel()])


def reduced_objective(problem: OneStepProblem, slack: SlackVariables) -> float:
    return problem.objective(slack.flat())


def reduced_gradient(problem: OneStepProblem, slack: SlackVariables) -> np.ndarray:
    return problem.objective_and_gradient(slack.flat())[1]


def warm_start(two_step_result: TwoStepResult, T) -> SlackVariables:
    """Slack initialised at the time derivatives of the two-step interpolants."""
    return SlackVariables(eval_derivative(two_step_result.q, T), eval_derivative(two_step_result.p, T))


@dataclass
class Diagnostics:
    iterations: int
    n_evals: int
    objective_initial: float
    objective_final: float
    grad_norm: float
    reason: str
    line_search_failed: bool
    history: list

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("history")
        return d


def minimize(problem: OneStepProblem, init: SlackVariables, opts: LBFGSOptions = LBFGSOptions()):
    """L-BFGS on the reduced objective; returns ``(slack, Diagnostics)``."""
    z0 = init.flat()
    res = lbfgs(problem.objective_and_gradient, z0, opts)
    f0 = res.history[0]
    if res.fun > f0:
        raise AssertionError(f"optimizer increased the objective: {f0} -> {res.fun}")
    diag = Diagnostics(res.iterations, res.n_evals, f0, res.fun, res.grad_norm, res.reason,
                       res.line_search_failed, res.history)
    return SlackVariables.from_flat(res.x, problem.N, problem.m), diag


def frozen_minimizer(problem: OneStepProblem) -> SlackVariables:
    """Exact minimiser of the frozen-state objective by a direct least-squares solve.

    Each quadratic form ``u^T A^{-1} u`` is written as ``|L^{-1} u|^2`` with a
    fresh Cholesky factor, and the stacked residual is minimised with
    ``lstsq``.  This shares no solve path with
    :meth:`OneStepProblem.objective_and_gradient`.
    """
    if problem.frozen_states is None:
        raise ContractError("frozen_minimizer needs a problem with frozen_states")
    n_obs, m, N = problem.n_obs, problem.m, problem.N
    Im = np.eye(m)

    def inv_factor(A, ridge):
        L = cholesky(A + ridge * np.eye(A.shape[0]), lower=True)
        return solve_triangular(L, np.eye(A.shape[0]), lower=True)

    Lq = inv_factor(problem.sys_q.A, problem.sys_q.ridge_eff)
    Lp = inv_factor(problem.sys_p.A, problem.sys_p.ridge_eff)
    G = gram_derivative_functionals(problem.state_kernel, problem.frozen_states, problem.layout)
    Lh = inv_factor(G, problem.ridges.lam)
    Z = np.zeros((Lq.shape[0] * m, N * m))
    sign = np.r_[np.ones(N * m), -np.ones(N * m)]
    B = np.block([[np.kron(Lq[:, n_obs:], Im), Z], [Z, np.kron(Lp[:, n_obs:], Im)], [Lh * sign[None, :]]])
    r = np.r_[np.kron(Lq[:, :n_obs], Im) @ problem.q_obs.ravel(), np.kron(Lp[:, :n_obs], Im) @ problem.p_obs.ravel(),
              np.zeros(G.shape[0])]
    z = np.linalg.lstsq(B, -r, rcond=None)[0]
    return SlackVariables.from_flat(z, N, m)


@dataclass(frozen=True)
class OneStepResult:
    q: Interpolant
    p: Interpolant
    hamiltonian: LearnedHamiltonian
    slack: SlackVariables
    diagnostics: Diagnostics | None = None
    warm: TwoStepResult | None = None


def extract_model(problem: OneStepProblem, slack: SlackVariables):
    """Trajectory fits and Hamiltonian defined by a slack vector; returns ``(q, p, H)``."""
    q = fit_values_and_derivatives(problem.time_kernel, problem.S, problem.q_obs, problem.T, slack.z1,
                                   problem.ridges.lam_q)
    p = fit_values_and_derivatives(problem.time_kernel, problem.S, problem.p_obs, problem.T, slack.z2,
                                   problem.ridges.lam_p)
    Y = problem.anchor_states(slack.flat())
    w = np.concatenate([slack.z1.ravel(), -slack.z2.ravel()])
    H = fit_hamiltonian(problem.state_kernel, Y, w, problem.ridges.lam)
    return q, p, H


def fit_one_step(dataset, time_kernel: KernelSpec, state_kernel: KernelSpec, ridges: Ridges = Ridges(),
                 opts: OneStepOptions = OneStepOptions()) -> OneStepResult:
    """Two-step warm start followed by L-BFGS on the reduced objective."""
    warm = fit_two_step(dataset, time_kernel, state_kernel, ridges)
    problem = OneStepProblem.from_dataset(dataset, time_kernel, state_kernel, ridges, opts.gradient_mode)
    z0 = warm_start(warm, dataset.t_col)
    slack, diag = minimize(problem, z0, opts.lbfgs)
    q, p, H = extract_model(problem, slack)
    return OneStepResult(q, p, H, slack, diag, warm)
