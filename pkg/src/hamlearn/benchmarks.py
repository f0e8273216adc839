"""Benchmark data generation, the relative-error metric and the repeated-seed protocol."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import AnalyticField, IntegratorOptions, forecast, integrate
from .kernels import KernelSpec
from .linalg import SingularSystemError
from .one_step import OneStepOptions, fit_one_step
from .representer import eval as interp_eval
from .systems import SYSTEMS, SystemSpec, get_system, true_hamiltonian
from .two_step import Ridges, fit_two_step

__all__ = [
    "SYSTEMS",
    "SystemSpec",
    "get_system",
    "true_hamiltonian",
    "Dataset",
    "n_observed",
    "ground_truth",
    "generate_dataset",
    "relative_error",
    "SeedResult",
    "ErrorRow",
    "CellResult",
    "run_seed",
    "run_experiment",
    "TIME_KERNEL",
    "METHODS",
    "RE_UNITS",
]

log = logging.getLogger(__name__)

TIME_KERNEL = KernelSpec("gaussian_time", 1.0)
METHODS = ("two_step", "one_step")
# reported errors are scaled into one of these units; relative_error itself is a fraction
RE_UNITS = {"percent": 100.0, "fraction": 1.0}
TRUTH_OPTS = IntegratorOptions(rtol=1e-9, atol=1e-9)


@dataclass(frozen=True)
class Dataset:
    system: str
    t_col: np.ndarray  # (N,)
    y_col: np.ndarray  # (N, 2m)
    observed: np.ndarray  # sorted indices into t_col
    sparsity: float
    seed: int
    t_ext: np.ndarray
    y_ext: np.ndarray

    @property
    def m(self) -> int:
        return self.y_col.shape[1] // 2

    @property
    def N(self) -> int:
        return self.t_col.size

    @property
    def t_obs(self) -> np.ndarray:
        return self.t_col[self.observed]

    @property
    def y_obs(self) -> np.ndarray:
        return self.y_col[self.observed]

    @property
    def unobserved(self) -> np.ndarray:
        mask = np.ones(self.N, dtype=bool)
        mask[self.observed] = False
        return np.flatnonzero(mask)

    @property
    def t_int(self) -> np.ndarray:
        return self.t_col[self.unobserved]

    @property
    def observed_mask(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=bool)
        mask[self.observed] = True
        return mask


def n_observed(N: int, sparsity: float) -> int:
    """``floor((1 - sparsity) N)``, robust to binary round-off in ``sparsity``."""
    return int(math.floor(round((1.0 - sparsity) * N, 9)))


def time_grids(N: int = 200, t_final: float = 40.0, n_ext: int = 200, random_grid_seed: int | None = None):
    """Collocation grid on ``[0, t_final]`` and extrapolation grid on ``(t_final, 2 t_final]``."""
    if random_grid_seed is None:
        t_col = np.linspace(0.0, t_final, N)
    else:
        rng = np.random.Generator(np.random.Philox(random_grid_seed))
        t_col = np.sort(np.r_[0.0, rng.uniform(0.0, t_final, N - 1)])
    t_ext = np.linspace(t_final, 2 * t_final, n_ext + 1)[1:]
    return t_col, t_ext


@lru_cache(maxsize=32)
def _truth(system_id: str, N: int, t_final: float, n_ext: int, random_grid_seed):
    s = get_system(system_id)
    t_col, t_ext = time_grids(N, t_final, n_ext, random_grid_seed)
    traj = integrate(AnalyticField(s), s.y0, np.r_[t_col, t_ext], TRUTH_OPTS, t0=0.0)
    y = traj.states
    y.setflags(write=False)
    return t_col, y[:N], t_ext, y[N:]


def ground_truth(system, N: int = 200, t_final: float = 40.0, n_ext: int = 200, random_grid_seed=None):
    """Analytic-field trajectory sampled on the collocation and extrapolation grids."""
    return _truth(get_system(system).id, int(N), float(t_final), int(n_ext), random_grid_seed)


def generate_dataset(system, N: int = 200, t_final: float = 40.0, sparsity: float = 0.0, seed: int = 0,
                     n_ext: int = 200, random_grid_seed=None) -> Dataset:
    """Sample a trajectory and select ``floor((1-sparsity) N)`` observed collocation times.

    Observed indices are a uniform draw without replacement from a
    Philox generator keyed by ``seed``.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    s = get_system(system)
    t_col, y_col, t_ext, y_ext = ground_truth(s, N, t_final, n_ext, random_grid_seed)
    n_obs = n_observed(N, sparsity)
    if n_obs == N:
        observed = np.arange(N)
    else:
        rng = np.random.Generator(np.random.Philox(int(seed) % 2**64))
        observed = np.sort(rng.choice(N, size=n_obs, replace=False))
    return Dataset(s.id, t_col, y_col, observed, float(sparsity), int(seed), t_ext, y_ext)


def relative_error(pred, truth) -> float:
    """``|truth - pred|_2 / |truth|_2`` over all samples, as a fraction.

    An empty sample set gives 0.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        return 0.0
    denom = np.sqrt(np.sum(truth**2))
    if denom == 0:
        raise ValueError("relative error undefined for an identically zero truth")
    return float(np.sqrt(np.sum((truth - pred) ** 2)) / denom)


@dataclass
class SeedResult:
    seed: int
    errors: dict = field(default_factory=dict)  # (variable, phase) -> RE
    diverged: bool = False
    failed: bool = False
    message: str = ""
    wall_time: float = 0.0
    optimizer: dict | None = None
    trajectory: np.ndarray | None = None  # rows: t, truth..., pred..., observed_flag


@dataclass
class ErrorRow:
    system: str
    kernel: str
    method: str
    sparsity: float
    variable: str
    phase: str
    mean: float
    std: float
    n_seeds: int
    n_diverged: int


@dataclass
class CellResult:
    system: str
    kernel: KernelSpec
    method: str
    sparsity: float
    seeds: list

    @property
    def succeeded(self) -> list:
        return [s for s in self.seeds if not s.failed]

    def rows(self, unit: str = "percent") -> list:
        """Mean and population std per (variable, phase), scaled to ``unit``."""
        scale = RE_UNITS[unit]
        ok = self.succeeded
        n_div = sum(s.diverged for s in ok)
        out = []
        for variable in ("q", "p"):
            for phase in ("interpolation", "extrapolation"):
                vals = scale * np.array([s.errors[(variable, phase)] for s in ok], dtype=float)
                # a forecast that diverged before the first extrapolation time has no samples
                vals = vals[np.isfinite(vals)]
                mean = float(vals.mean()) if vals.size else math.nan
                std = float(vals.std()) if vals.size else math.nan
                out.append(ErrorRow(self.system, self.kernel.name, self.method, self.sparsity,
                                    variable, phase, mean, std, len(ok), n_div))
        return out

    def mean(self, variable: str, phase: str, unit: str = "percent") -> float:
        return next(r.mean for r in self.rows(unit) if r.variable == variable and r.phase == phase)


def run_seed(dataset: Dataset, state_kernel: KernelSpec, method: str, ridges: Ridges = Ridges(),
             integrator: IntegratorOptions = IntegratorOptions(), one_step: OneStepOptions = OneStepOptions(),
             keep_trajectory: bool = False) -> SeedResult:
    """Fit one dataset, then score interpolation and extrapolation.

    Interpolation compares the fitted trajectory with the truth on the
    unobserved collocation times, so it is 0 when every time is observed.
    Extrapolation integrates the learned Hamiltonian from the
    reconstructed state at ``t_col[0]`` and compares on ``t_ext``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    t_start = time.perf_counter()
    res = SeedResult(dataset.seed)
    m = dataset.m
    try:
        if method == "two_step":
            fit = fit_two_step(dataset, TIME_KERNEL, state_kernel, ridges)
        else:
            fit = fit_one_step(dataset, TIME_KERNEL, state_kernel, ridges, one_step)
            res.optimizer = fit.diagnostics.to_dict()
    except (SingularSystemError, np.linalg.LinAlgError, FloatingPointError) as exc:
        res.failed = True
        res.message = f"{type(exc).__name__}: {exc}"
        res.wall_time = time.perf_counter() - t_start
        log.warning("%s/%s/%s/%.2f seed %d failed: %s", dataset.system, state_kernel.name, method,
                    dataset.sparsity, dataset.seed, res.message)
        return res

    idx = dataset.unobserved
    t_int = dataset.t_col[idx]
    pred_int = {"q": interp_eval(fit.q, t_int), "p": interp_eval(fit.p, t_int)}
    truth_int = {"q": dataset.y_col[idx, :m], "p": dataset.y_col[idx, m:]}

    t0 = dataset.t_col[0]
    y0_star = np.r_[interp_eval(fit.q, [t0])[0], interp_eval(fit.p, [t0])[0]]
    grid = np.r_[dataset.t_col, dataset.t_ext]
    traj = forecast(fit.hamiltonian, y0_star, grid, integrator, t0=t0)
    res.diverged = traj.diverged
    if traj.diverged:
        res.message = traj.message
    n_ext = max(0, len(traj) - dataset.N)
    pred_ext = traj.states[dataset.N:dataset.N + n_ext]
    truth_ext = dataset.y_ext[:n_ext]
    for v, sl in (("q", slice(0, m)), ("p", slice(m, 2 * m))):
        res.errors[(v, "interpolation")] = relative_error(pred_int[v], truth_int[v])
        res.errors[(v, "extrapolation")] = relative_error(pred_ext[:, sl], truth_ext[:, sl]) if n_ext else math.nan

    if keep_trajectory:
        pred_col = np.hstack([interp_eval(fit.q, dataset.t_col), interp_eval(fit.p, dataset.t_col)])
        pred_all = np.full((dataset.N + dataset.t_ext.size, 2 * m), np.nan)
        pred_all[:dataset.N] = pred_col
        pred_all[dataset.N:dataset.N + n_ext] = pred_ext
        truth_all = np.vstack([dataset.y_col, dataset.y_ext])
        flag = np.r_[dataset.observed_mask.astype(float), np.zeros(dataset.t_ext.size)]
        res.trajectory = np.column_stack([grid, truth_all, pred_all, flag])
    res.wall_time = time.perf_counter() - t_start
    return res


def seeds_for(sparsity: float, seeds) -> list:
    """Seeds actually run for a cell: a single deterministic run at sparsity 0."""
    seeds = list(seeds)
    return seeds[:1] if sparsity == 0 else seeds


def run_experiment(system, state_kernel: KernelSpec, method: str, sparsity: float, seeds=range(10),
                   ridges: Ridges = Ridges(), integrator: IntegratorOptions = IntegratorOptions(),
                   one_step: OneStepOptions = OneStepOptions(), N: int = 200, t_final: float = 40.0,
                   keep_trajectory: bool = False) -> CellResult:
    """Repeat one (system, kernel, method, sparsity) cell over seeds."""
    s = get_system(system)
    results = []
    for seed in seeds_for(sparsity, seeds):
        ds = generate_dataset(s, N=N, t_final=t_final, sparsity=sparsity, seed=seed)
        results.append(run_seed(ds, state_kernel, method, ridges, integrator, one_step, keep_trajectory))
    cell = CellResult(s.id, state_kernel, method, float(sparsity), results)
    if results and not cell.succeeded:
        raise RuntimeError(f"all seeds failed for {s.id}/{state_kernel.name}/{method}/{sparsity}: {results[0].message}")
    return cell
