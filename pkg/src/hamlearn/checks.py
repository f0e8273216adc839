"""Invariant and property checks on small instances, run by ``hamlearn check``."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmarks import TIME_KERNEL, generate_dataset, ground_truth
from .dynamics import AnalyticField, IntegratorOptions, integrate
from .kernels import FAMILIES, KernelSpec, get_kernel
from .linalg import norm_identity_check
from .one_step import OneStepProblem, frozen_minimizer, minimize, warm_start
from .optimize import LBFGSOptions
from .systems import SYSTEMS
from .two_step import Ridges, fit_two_step

__all__ = ["CheckResult", "run_checks", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} worst={self.value:.3e}  tol={self.tolerance:.0e}  ({self.seconds:.1f}s)"


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def kernel_derivatives(cases: int = 200, seed: int = 0) -> float:
    """Worst relative error of gradient and cross-Hessian against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for family in FAMILIES:
        spec = KernelSpec(family)
        for _ in range(cases):
            dim = 1 if family == "gaussian_time" else 2 * int(rng.integers(1, 3))
            k = get_kernel(spec, dim)
            x, y = rng.uniform(-1.5, 1.5, (2, 1, dim))
            g = k.grad1(x, y)[0, 0]
            H = k.cross_hessian(x, y)[0, 0]
            g_fd = np.empty(dim)
            H_fd = np.empty((dim, dim))
            for j in range(dim):
                hx = 1e-5 * (1 + abs(x[0, j]))
                e = np.zeros((1, dim))
                e[0, j] = hx
                g_fd[j] = (k.value(x + e, y) - k.value(x - e, y))[0, 0] / (2 * hx)
                hy = 1e-5 * (1 + abs(y[0, j]))
                e[0, j] = hy
                H_fd[:, j] = (k.grad1(x, y + e) - k.grad1(x, y - e))[0, 0] / (2 * hy)
            worst = max(worst, _rel(g, g_fd), _rel(H, H_fd))
    return worst


def norm_identity(trials: int = 20, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 31))
        dim = 2 * int(rng.integers(1, 3))
        anchors = rng.uniform(-2, 2, (n, dim))
        ridge = 10 ** rng.uniform(-6, -1)
        lhs, rhs = norm_identity_check(KernelSpec("gaussian_state"), anchors, ridge, rng.standard_normal(n))
        worst = max(worst, abs(lhs - rhs) / rhs)
    return worst


def _small_problem(system, kernel, N, sparsity, seed, gradient_mode="full", frozen=False, ridges=Ridges()):
    ds = generate_dataset(system, N=N, t_final=N * 0.2, sparsity=sparsity, seed=seed)
    warm = fit_two_step(ds, TIME_KERNEL, KernelSpec(kernel), ridges)
    frozen_states = np.hstack([warm.q(ds.t_col), warm.p(ds.t_col)]) if frozen else None
    problem = OneStepProblem.from_dataset(ds, TIME_KERNEL, KernelSpec(kernel), ridges, gradient_mode, frozen_states)
    return problem, warm_start(warm, ds.t_col)


def reduced_gradient(seed: int = 2) -> float:
    """Full-gradient check including the dependence of the Hamiltonian Gram on the states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for system, kernel, N in (("mass_spring", "gaussian_state", 25), ("mass_spring", "separable_polynomial", 25),
                              ("henon_heiles", "gaussian_state", 15), ("pendulum", "additive_poly_gaussian", 20)):
        problem, z0 = _small_problem(system, kernel, N, 0.4, seed)
        z = z0.flat() + 0.05 * rng.standard_normal(problem.n_vars)
        _, g = problem.objective_and_gradient(z)
        g_fd = np.empty_like(g)
        for i in range(z.size):
            h = 1e-6 * (1 + abs(z[i]))
            e = np.zeros_like(z)
            e[i] = h
            g_fd[i] = (problem.objective(z + e) - problem.objective(z - e)) / (2 * h)
        worst = max(worst, _rel(g, g_fd))
    return worst


def integrator_accuracy() -> float:
    t = np.linspace(0.0, 80.0, 801)
    traj = integrate(AnalyticField("mass_spring"), (0.0, 1.0), t, IntegratorOptions())
    exact = np.column_stack([np.sin(t), np.cos(t)])
    return float(np.max(np.abs(traj.states - exact)))


def energy_drift() -> float:
    worst = 0.0
    for sid, s in SYSTEMS.items():
        _, y_col, _, y_ext = ground_truth(sid)
        E = np.array([s.hamiltonian(y) for y in np.vstack([y_col, y_ext])])
        worst = max(worst, float(np.max(np.abs(E - s.hamiltonian(np.asarray(s.y0))))))
    return worst


def frozen_subproblem() -> float:
    """L-BFGS on the convex frozen-state objective against the direct linear solve."""
    worst = 0.0
    opts = LBFGSOptions(gtol=1e-12, max_iter=2000)
    for system, kernel in (("mass_spring", "separable_polynomial"), ("two_mass_three_spring", "gaussian_state")):
        problem, z0 = _small_problem(system, kernel, 20, 0.3, 3, gradient_mode="frozen", frozen=True)
        z_opt, _ = minimize(problem, z0, opts)
        z_ref = frozen_minimizer(problem)
        worst = max(worst, float(np.max(np.abs(z_opt.flat() - z_ref.flat())) / (1 + np.max(np.abs(z_ref.flat())))))
    return worst


def determinism() -> float:
    """Number of differing bytes between two identical single-cell runs (0 passes)."""
    from .cli import parse_config, run

    raw = {"systems": ["mass_spring"], "kernels": ["separable_polynomial"], "methods": ["two_step", "one_step"],
           "sparsities": [0.5], "seeds": 2, "N": 40, "t_final": 8.0, "save_trajectories": False}
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(2):
            out = Path(tmp) / f"run{i}"
            run(parse_config(raw, env={}), out)
            blobs.append((out / "errors.csv").read_bytes())
    a, b = blobs
    return float(sum(x != y for x, y in zip(a, b)) + abs(len(a) - len(b)))


CHECKS = [
    ("kernel derivatives vs FD", kernel_derivatives, 1e-5),
    ("representer norm identity", norm_identity, 1e-8),
    ("reduced gradient vs FD", reduced_gradient, 1e-4),
    ("integrator vs analytic", integrator_accuracy, 1e-7),
    ("ground-truth energy drift", energy_drift, 1e-7),
    ("frozen subproblem vs direct solve", frozen_subproblem, 1e-6),
    ("errors.csv determinism", determinism, 0.5),
]


def run_checks(names=None):
    """Yield a :class:`CheckResult` per check, optionally filtered by name."""
    for name, fn, tol in CHECKS:
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        value = fn()
        yield CheckResult(name, bool(value < tol), value, tol, time.perf_counter() - t0)
