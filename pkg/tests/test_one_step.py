import numpy as np
import pytest

from hamlearn.benchmarks import TIME_KERNEL, generate_dataset, run_experiment
from hamlearn.kernels import KernelSpec, gram_derivative_functionals
from hamlearn.optimize import LBFGSOptions
from hamlearn.one_step import (
    OneStepProblem,
    SlackVariables,
    extract_model,
    fit_one_step,
    frozen_minimizer,
    minimize,
    reduced_gradient,
    reduced_objective,
    warm_start,
)
from hamlearn.representer import eval as interp_eval, eval_derivative, extended_gram
from hamlearn.two_step import Ridges, fit_two_step

GAUSS = KernelSpec("gaussian_state")
POLY = KernelSpec("separable_polynomial")


def _problem(system="mass_spring", kernel=POLY, N=20, sparsity=0.4, seed=0, frozen=False, ridges=Ridges()):
    ds = generate_dataset(system, N=N, t_final=N * 0.2, sparsity=sparsity, seed=seed)
    warm = fit_two_step(ds, TIME_KERNEL, kernel, ridges)
    fs = np.hstack([warm.q(ds.t_col), warm.p(ds.t_col)]) if frozen else None
    mode = "frozen" if frozen else "full"
    return ds, OneStepProblem.from_dataset(ds, TIME_KERNEL, kernel, ridges, mode, fs), warm_start(warm, ds.t_col)


def _explicit_quadratic(problem):
    """(Q, b, c) with objective = z^T Q z + 2 b^T z + c for a frozen-state problem, by explicit inverses."""
    n_obs, m, N = problem.n_obs, problem.m, problem.N
    G = extended_gram(TIME_KERNEL, problem.S, problem.T)
    Iq = np.linalg.inv(G + problem.ridges.lam_q * np.eye(G.shape[0]))
    Ip = np.linalg.inv(G + problem.ridges.lam_p * np.eye(G.shape[0]))
    Psi = gram_derivative_functionals(problem.state_kernel, problem.frozen_states)
    Ih = np.linalg.inv(Psi + problem.ridges.lam * np.eye(Psi.shape[0]))
    # variable order: z1 (N, m) row-major, then z2
    P1 = np.zeros((G.shape[0] * m, N * m))
    P1[n_obs * m:, :] = np.eye(N * m)
    Iqk, Ipk = np.kron(Iq, np.eye(m)), np.kron(Ip, np.eye(m))
    s = np.r_[np.ones(N * m), -np.ones(N * m)]
    Q = np.zeros((2 * N * m, 2 * N * m))
    Q[: N * m, : N * m] = P1.T @ Iqk @ P1
    Q[N * m:, N * m:] = P1.T @ Ipk @ P1
    Q += s[:, None] * Ih * s[None, :]
    oq = np.r_[problem.q_obs.ravel(), np.zeros(N * m)]
    op = np.r_[problem.p_obs.ravel(), np.zeros(N * m)]
    b = np.r_[P1.T @ Iqk @ oq, P1.T @ Ipk @ op]
    c = oq @ Iqk @ oq + op @ Ipk @ op
    return Q, b, c


def test_zero_data_and_slack_give_zero_objective():
    t = np.linspace(0, 4, 8)
    problem = OneStepProblem(t[::2], np.zeros((4, 2)), t, TIME_KERNEL, GAUSS)
    assert problem.objective(np.zeros(problem.n_vars)) == 0.0


def test_objective_equals_sum_of_independent_quadratic_forms():
    ds = generate_dataset("mass_spring", sparsity=0.0)
    warm = fit_two_step(ds, TIME_KERNEL, POLY)
    problem = OneStepProblem.from_dataset(ds, TIME_KERNEL, POLY)
    slack = warm_start(warm, ds.t_col)
    G = extended_gram(TIME_KERNEL, ds.t_obs, ds.t_col)
    A = G + 1e-5 * np.eye(G.shape[0])
    uq = np.r_[ds.y_obs[:, 0], slack.z1[:, 0]]
    up = np.r_[ds.y_obs[:, 1], slack.z2[:, 0]]
    Y = problem.states(slack)
    Psi = gram_derivative_functionals(POLY, Y)
    w = np.r_[slack.z1[:, 0], -slack.z2[:, 0]]
    expect = uq @ np.linalg.solve(A, uq) + up @ np.linalg.solve(A, up) + w @ np.linalg.solve(Psi + 1e-3 * np.eye(400), w)
    got = reduced_objective(problem, slack)
    assert np.isfinite(got)
    assert got == pytest.approx(expect, rel=1e-10)


def test_first_two_terms_are_homogeneous_of_degree_two():
    ds, problem, z0 = _problem(frozen=True)
    c = 3.0
    scaled = OneStepProblem(ds.t_obs, c * ds.y_obs, ds.t_col, TIME_KERNEL, POLY, gradient_mode="frozen",
                            frozen_states=problem.frozen_states)
    f1, f2, f3 = problem.terms(z0.flat())
    g1, g2, g3 = scaled.terms(c * z0.flat())
    assert g1 == pytest.approx(c**2 * f1, rel=1e-12)
    assert g2 == pytest.approx(c**2 * f2, rel=1e-12)
    assert g3 == pytest.approx(c**2 * f3, rel=1e-10)


def test_frozen_gradient_matches_matrix_calculus():
    _, problem, z0 = _problem(frozen=True)
    Q, b, c = _explicit_quadratic(problem)
    z = z0.flat()
    assert problem.objective(z) == pytest.approx(z @ Q @ z + 2 * b @ z + c, rel=1e-9)
    g = reduced_gradient(problem, z0)
    np.testing.assert_allclose(g, 2 * Q @ z + 2 * b, rtol=1e-7, atol=1e-7 * np.abs(g).max())


@pytest.mark.parametrize("kernel", [POLY, GAUSS])
def test_full_gradient_matches_finite_differences(kernel):
    _, problem, z0 = _problem(kernel=kernel)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = z0.flat() + 0.05 * rng.standard_normal(problem.n_vars)
        g = problem.objective_and_gradient(z)[1]
        fd = np.empty_like(g)
        for i in range(z.size):
            h = 1e-6 * (1 + abs(z[i]))
            e = np.zeros_like(z)
            e[i] = h
            fd[i] = (problem.objective(z + e) - problem.objective(z - e)) / (2 * h)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_gradient_vanishes_at_frozen_stationary_point():
    _, problem, _ = _problem(frozen=True)
    z_star = frozen_minimizer(problem)
    assert np.linalg.norm(reduced_gradient(problem, z_star)) <= 1e-6


def test_frozen_minimize_converges_to_direct_solution():
    _, problem, z0 = _problem("two_mass_three_spring", GAUSS, frozen=True)
    z_opt, diag = minimize(problem, z0, LBFGSOptions(gtol=1e-12, max_iter=2000))
    ref = frozen_minimizer(problem).flat()
    assert np.max(np.abs(z_opt.flat() - ref)) <= 1e-6 * (1 + np.max(np.abs(ref)))
    assert diag.objective_final <= diag.objective_initial


def test_minimize_decreases_monotonically():
    _, problem, z0 = _problem(sparsity=0.5, seed=3)
    z, diag = minimize(problem, z0, LBFGSOptions(max_iter=60))
    h = np.asarray(diag.history)
    assert np.all(np.diff(h) <= 0)
    assert problem.objective(z.flat()) <= problem.objective(z0.flat())
    assert diag.iterations > 0 and diag.reason


def test_warm_start_shape_and_determinism():
    ds = generate_dataset("two_mass_three_spring", sparsity=0.5, seed=1)
    warm = fit_two_step(ds, TIME_KERNEL, POLY)
    a, b = warm_start(warm, ds.t_col), warm_start(warm, ds.t_col)
    assert a.shape == (200, 2)
    np.testing.assert_array_equal(a.z1, b.z1)
    np.testing.assert_array_equal(a.z2, b.z2)


def test_warm_start_is_close_to_true_derivatives_when_fully_observed():
    ds = generate_dataset("mass_spring", sparsity=0.0)
    slack = warm_start(fit_two_step(ds, TIME_KERNEL, POLY), ds.t_col)
    # dq/dt = p and dp/dt = -q for the harmonic oscillator; endpoints carry the usual edge error
    inner = slice(1, -1)
    np.testing.assert_allclose(slack.z1[inner, 0], ds.y_col[inner, 1], atol=5e-3)
    np.testing.assert_allclose(slack.z2[inner, 0], -ds.y_col[inner, 0], atol=5e-3)
    assert np.max(np.abs(slack.z1[:, 0] - ds.y_col[:, 1])) < 2e-2


def test_slack_contracts():
    with pytest.raises(ValueError):
        SlackVariables(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ValueError):
        SlackVariables(np.full((2, 1), np.nan), np.zeros((2, 1)))
    _, problem, _ = _problem()
    with pytest.raises(ValueError):
        problem.objective(np.zeros(problem.n_vars + 1))
    with pytest.raises(ValueError):
        OneStepProblem(problem.S, np.zeros((problem.n_obs, 2)), problem.T, TIME_KERNEL, POLY, gradient_mode="exact")


def test_extract_model_residuals():
    ds, problem, z0 = _problem(sparsity=0.3, seed=2)
    slack, _ = minimize(problem, z0, LBFGSOptions(max_iter=50))
    q, p, H = extract_model(problem, slack)
    lam = problem.ridges.lam_q
    bound = lam * np.max(np.abs(q.coefficients)) * (1 + 1e-6) + 1e-12
    assert np.max(np.abs(interp_eval(q, ds.t_obs)[:, 0] - ds.y_obs[:, 0])) <= bound
    assert np.max(np.abs(eval_derivative(q, ds.t_col) - slack.z1)) <= bound
    np.testing.assert_allclose(H.anchors, problem.states(slack), atol=1e-8)


def test_hamilton_residual_shrinks_with_ridge():
    # the Gaussian feature space is rich enough for the residual to keep falling
    ds, problem, z0 = _problem(kernel=GAUSS, sparsity=0.3, seed=2)
    slack, _ = minimize(problem, z0, LBFGSOptions(max_iter=50))
    residuals = []
    for lam in (1e-1, 1e-3, 1e-5):
        swept = OneStepProblem.from_dataset(ds, TIME_KERNEL, GAUSS, Ridges(lam=lam))
        _, _, H = extract_model(swept, slack)
        residuals.append(np.max(np.abs(H.gradient(H.anchors)[:, 1] - slack.z1[:, 0])))
    assert residuals[0] > residuals[1] > residuals[2]


def test_collocation_permutation_invariance():
    ds = generate_dataset("two_mass_three_spring", N=24, t_final=4.8, sparsity=0.5, seed=5)
    problem = OneStepProblem.from_dataset(ds, TIME_KERNEL, GAUSS)
    rng = np.random.default_rng(1)
    z = SlackVariables(rng.normal(size=(24, 2)), rng.normal(size=(24, 2)))
    perm = rng.permutation(24)
    permuted = OneStepProblem(ds.t_obs, ds.y_obs, ds.t_col[perm], TIME_KERNEL, GAUSS)
    zp = SlackVariables(z.z1[perm], z.z2[perm])
    assert permuted.objective(zp.flat()) == pytest.approx(problem.objective(z.flat()), rel=1e-10)


def test_fully_observed_interpolation_error_is_small():
    ds = generate_dataset("mass_spring", sparsity=0.0)
    fit = fit_one_step(ds, TIME_KERNEL, POLY)
    pred = np.hstack([fit.q(ds.t_col), fit.p(ds.t_col)])
    re = np.linalg.norm(pred - ds.y_col) / np.linalg.norm(ds.y_col)
    assert 100 * re <= 0.02  # percent


def test_mass_spring_half_observed_extrapolation():
    cell = run_experiment("mass_spring", POLY, "one_step", 0.5, seeds=range(10))
    assert cell.mean("q", "extrapolation") <= 0.5
