"""Hamiltonian vector fields and an adaptive Dormand-Prince 5(4) integrator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IntegratorOptions",
    "IntegrationError",
    "Trajectory",
    "HamiltonianField",
    "AnalyticField",
    "LearnedField",
    "field_eval",
    "integrate",
    "forecast",
]


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-9
    atol: float = 1e-9
    max_step: float = math.inf
    dense: bool = True
    blowup: float = 1e6
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError(f"rtol and atol must be positive, got {self.rtol}, {self.atol}")
        if not self.max_step > 0:
            raise ValueError(f"max_step must be positive, got {self.max_step}")

    def to_dict(self) -> dict:
        return {"rtol": self.rtol, "atol": self.atol, "max_step": self.max_step, "blowup": self.blowup}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diverged: bool = False
    message: str = ""

    def __len__(self):
        return self.times.size


class IntegrationError(RuntimeError):
    """Integration stopped early; ``partial`` holds the samples produced so far."""

    def __init__(self, message: str, last_time: float, partial: Trajectory, diverged: bool = False):
        super().__init__(message)
        self.last_time = last_time
        self.partial = partial
        self.diverged = diverged


class HamiltonianField:
    """``dy/dt = (d_p H, -d_q H)`` for a Hamiltonian given by its gradient."""

    def __init__(self, gradient, dim: int):
        self.gradient = gradient
        self.dim = int(dim)
        self.m = self.dim // 2

    def __call__(self, y) -> np.ndarray:
        g = np.asarray(self.gradient(y), dtype=float)
        m = self.m
        return np.concatenate([g[m:], -g[:m]])


class AnalyticField(HamiltonianField):
    def __init__(self, system):
        from .systems import get_system

        system = get_system(system)
        super().__init__(system.grad_hamiltonian, 2 * system.m)
        self.system = system


class LearnedField(HamiltonianField):
    def __init__(self, model):
        super().__init__(lambda y: model.gradient(y[None, :])[0], model.dim)
        self.model = model


def field_eval(vector_field, y) -> np.ndarray:
    return vector_field(np.asarray(y, dtype=float))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th- and embedded 4th-order weights (7 stages, FSAL)
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# 4th-order continuous extension (Shampine's coefficients)
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_BETA = 0.04  # PI control gain on the previous error
_EXPO = 0.2 - 0.75 * _BETA


def _rms(v):
    return math.sqrt(float(np.mean(v * v)))


def _initial_step(f, y0, f0, rtol, atol):
    sc = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / sc), _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(y0 + h0 * f0)
    d2 = _rms((f1 - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def integrate(vector_field, y0, t_grid, opts: IntegratorOptions = IntegratorOptions(), t0: float | None = None) -> Trajectory:
    """Integrate an autonomous field and sample the solution at ``t_grid``.

    Grid points are filled by the continuous extension, so they never
    constrain step selection.  Raises :class:`IntegrationError` on step-size
    underflow, too many steps, or when ``|y|_inf`` exceeds ``opts.blowup``.
    """
    f = vector_field
    y = np.array(y0, dtype=float)
    grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if grid.size and np.any(np.diff(grid) < 0):
        raise ValueError("t_grid must be sorted ascending")
    t = float(grid[0]) if t0 is None else float(t0)
    if grid.size and grid[0] < t:
        raise ValueError(f"t_grid starts at {grid[0]} before the initial time {t}")
    out = np.empty((grid.size, y.size))
    n_out = 0

    def partial():
        return Trajectory(grid[:n_out].copy(), out[:n_out].copy(), diverged=True)

    while n_out < grid.size and grid[n_out] <= t:
        out[n_out] = y
        n_out += 1
    if n_out == grid.size:
        return Trajectory(grid, out)

    t_end = float(grid[-1])
    rtol, atol = opts.rtol, opts.atol
    k = np.empty((7, y.size))
    k[0] = f(y)
    h = _initial_step(f, y, k[0], rtol, atol)
    err_old = 1e-4
    rejected = False
    steps = 0
    while n_out < grid.size:
        steps += 1
        if steps > opts.max_steps:
            raise IntegrationError(f"exceeded {opts.max_steps} steps at t={t}", t, partial())
        h = min(h, opts.max_step)
        if not opts.dense:
            # land exactly on the next sample instead of interpolating
            h = min(h, grid[n_out] - t)
        last = h >= t_end - t
        if last:
            h = t_end - t
        elif h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError(f"step size underflow at t={t}", t, partial())
        for s in range(1, 6):
            k[s] = f(y + h * (np.asarray(_A[s]) @ k[:s]))
        y_new = y + h * (_B @ k[:6])
        k[6] = f(y_new)
        if np.all(np.isfinite(k[6])) and np.all(np.isfinite(y_new)):
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(h * (_E @ k) / sc)
        else:
            err = math.inf
        if err > 1.0:
            fac = _FAC_MIN if not math.isfinite(err) else max(_FAC_MIN, _SAFETY * err ** -_EXPO)
            h *= fac
            rejected = True
            continue

        t_new = t_end if last else t + h
        if not opts.dense and h == grid[n_out] - t:
            t_new = grid[n_out]
        Q = k.T @ _P  # (dim, 4)
        while n_out < grid.size and (grid[n_out] <= t_new or last):
            if grid[n_out] == t_new:
                out[n_out] = y_new
            else:
                theta = (grid[n_out] - t) / h
                out[n_out] = y + h * (Q @ (theta ** np.arange(1, 5)))
            n_out += 1
        if err == 0.0:
            fac = _FAC_MAX
        else:
            fac = _SAFETY * err ** -_EXPO * err_old**_BETA
            fac = min(_FAC_MAX, max(_FAC_MIN, fac))
        if rejected:
            fac = min(fac, 1.0)
        rejected = False
        err_old = max(err, 1e-4)
        t, y = t_new, y_new
        k[0] = k[6]
        h *= fac
        if np.max(np.abs(y)) > opts.blowup:
            raise IntegrationError(f"solution exceeded {opts.blowup:g} at t={t}", t, partial(), diverged=True)
    return Trajectory(grid, out)


def forecast(model, y0_star, t_grid, opts: IntegratorOptions = IntegratorOptions(), t0: float | None = None) -> Trajectory:
    """Integrate the field of a learned Hamiltonian from a reconstructed initial state.

    Failures do not raise: the returned trajectory holds the prefix that was
    produced and has ``diverged`` set.
    """
    try:
        return integrate(LearnedField(model), y0_star, t_grid, opts, t0=t0)
    except IntegrationError as exc:
        traj = exc.partial
        traj.message = str(exc)
        return traj
