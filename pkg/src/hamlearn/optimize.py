"""Limited-memory BFGS with a strong-Wolfe line search."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

try:  # not exported publicly; its base class is the fallback
    from scipy.optimize._linesearch import LineSearchWarning
except ImportError:  # pragma: no cover
    LineSearchWarning = RuntimeWarning

__all__ = ["LBFGSOptions", "LBFGSResult", "lbfgs"]


@dataclass(frozen=True)
class LBFGSOptions:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-8  # stop when |g|_inf < gtol * (1 + |f|)
    max_iter: int = 500
    max_linesearch: int = 40


@dataclass
class LBFGSResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    n_evals: int
    reason: str
    line_search_failed: bool = False
    history: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def lbfgs(fun_and_grad, x0, opts: LBFGSOptions = LBFGSOptions()) -> LBFGSResult:
    """Minimise a smooth function given a callable returning ``(f, grad)``.

    Every accepted step satisfies the strong Wolfe conditions, so the
    objective never increases.  A failed line search first drops the
    curvature memory and retries along steepest descent; a second failure
    ends the run with ``line_search_failed`` set and the best iterate.
    """
    n_evals = 0
    last = {}

    def evaluate(x):
        nonlocal n_evals
        key = x.tobytes()
        if key not in last:
            n_evals += 1
            f, g = fun_and_grad(x)
            last.clear()
            last[key] = (float(f), np.asarray(g, dtype=float))
        return last[key]

    x = np.array(x0, dtype=float)
    fx, gx = evaluate(x)
    f_prev = fx + np.linalg.norm(gx) / 2
    pairs = deque(maxlen=opts.memory)
    history = [fx]
    reason = "max iterations"
    failed = False
    it = 0
    while it < opts.max_iter:
        if np.max(np.abs(gx), initial=0.0) < opts.gtol * (1 + abs(fx)):
            reason = "gradient tolerance"
            break
        d = -_two_loop(gx, list(pairs))
        if gx @ d >= 0:
            pairs.clear()
            d = -gx
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            res = line_search(
                lambda z: evaluate(z)[0],
                lambda z: evaluate(z)[1],
                x, d, gfk=gx, old_fval=fx, old_old_fval=f_prev,
                c1=opts.c1, c2=opts.c2, maxiter=opts.max_linesearch,
            )
        alpha = res[0]
        if alpha is None or not np.isfinite(res[3]) or res[3] > fx:
            if pairs:
                pairs.clear()
                f_prev = fx + np.linalg.norm(gx) / 2
                continue
            reason = "line search failed"
            failed = True
            break
        x_new = x + alpha * d
        f_new, g_new = evaluate(x_new)
        s, y = x_new - x, g_new - gx
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        f_prev, x, fx, gx = fx, x_new, f_new, g_new
        history.append(fx)
        it += 1
    return LBFGSResult(x, fx, gx, it, n_evals, reason, failed, history)
