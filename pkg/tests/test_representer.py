import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamlearn.kernels import ContractError, KernelSpec, gram
from hamlearn.representer import (
    eval as interp_eval,
    eval_derivative,
    extended_gram,
    fit_values,
    fit_values_and_derivatives,
)

K = KernelSpec("gaussian_time", 1.0)


def test_single_anchor_reproduces_value():
    f = fit_values(K, [0.0], [5.0], 0.0)
    assert interp_eval(f, [0.0])[0, 0] == pytest.approx(5.0, rel=1e-14)


def test_two_anchor_interpolation_of_sine():
    S = np.array([0.0, 1.0])
    f = fit_values(K, S, np.sin(S), 0.0)
    np.testing.assert_allclose(interp_eval(f, S)[:, 0], np.sin(S), atol=1e-8)


def test_ridge_residual_shrinks_with_ridge():
    S = np.linspace(0, 10, 40)
    y = np.sin(S)
    res = []
    for lam in (1e-3, 1e-6, 1e-9):
        f = fit_values(K, S, y, lam)
        r = np.linalg.norm(interp_eval(f, S)[:, 0] - y)
        # residual equals lam * coefficients exactly for a ridge fit
        assert r == pytest.approx(lam * np.linalg.norm(f.coefficients), rel=1e-4)
        res.append(r)
    assert res[0] > res[1] > res[2]


def test_value_and_derivative_two_by_two():
    f = fit_values_and_derivatives(K, [0.0], [0.0], [0.0], [1.0], 0.0)
    assert interp_eval(f, [0.0])[0, 0] == pytest.approx(0.0, abs=1e-8)
    assert eval_derivative(f, [0.0])[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_closure_for_function_in_span():
    # g(t) = K(t, 1) - 2 K(t, 3) lies in the span; its data must be recovered exactly
    def g(t):
        return np.exp(-0.5 * (t - 1) ** 2) - 2 * np.exp(-0.5 * (t - 3) ** 2)

    def dg(t):
        return -(t - 1) * np.exp(-0.5 * (t - 1) ** 2) + 2 * (t - 3) * np.exp(-0.5 * (t - 3) ** 2)

    S = np.array([1.0, 3.0])
    T = np.array([0.0, 2.0, 4.0])
    f = fit_values_and_derivatives(K, S, g(S), T, dg(T), 0.0)
    tau = np.linspace(-1, 5, 25)
    np.testing.assert_allclose(interp_eval(f, tau)[:, 0], g(tau), atol=1e-7)


def test_empty_derivative_set_degenerates():
    S = np.array([0.0, 0.8, 2.1])
    v = np.array([[1.0], [0.3], [-0.4]])
    a = fit_values(K, S, v, 1e-6)
    b = fit_values_and_derivatives(K, S, v, [], None, 1e-6)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_extended_gram_blocks_and_symmetry():
    S = np.array([0.0, 1.0])
    T = np.array([0.5])
    G = extended_gram(K, S, T)
    np.testing.assert_array_equal(G, G.T)
    np.testing.assert_allclose(G[:2, :2], gram(K, S, S), rtol=1e-15)
    # d/dt' exp(-(s - t')^2 / 2) = (s - t') K
    assert G[0, 2] == pytest.approx((0.0 - 0.5) * np.exp(-0.125), rel=1e-14)
    assert G[2, 2] == pytest.approx(1.0, rel=1e-14)


def test_eval_matches_direct_sum():
    S = np.array([0.0, 0.7, 1.9, 3.0])
    f = fit_values(K, S, np.cos(S), 1e-8)
    t = 1.3
    direct = sum(f.coefficients[i, 0] * np.exp(-0.5 * (t - S[i]) ** 2) for i in range(S.size))
    assert interp_eval(f, [t])[0, 0] == pytest.approx(direct, rel=1e-13)


def test_far_field_bound():
    S = np.linspace(0, 5, 10)
    f = fit_values(K, S, np.sin(S), 1e-6)
    t = 30.0
    bound = np.abs(f.coefficients).sum() * np.exp(-0.5 * (t - 5) ** 2)
    assert abs(interp_eval(f, [t])[0, 0]) <= bound


def test_derivative_at_single_anchor_is_zero():
    f = fit_values(K, [2.0], [3.0], 0.0)
    assert eval_derivative(f, [2.0])[0, 0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_derivative_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    S = np.sort(rng.choice(np.linspace(0, 10, 60), size=15, replace=False))
    T = np.sort(rng.uniform(0, 10, 5))
    f = fit_values_and_derivatives(K, S, rng.normal(size=(15, 2)), T, rng.normal(size=(5, 2)), 1e-5)
    tau = rng.uniform(-1, 11, 100)
    h = 1e-5
    fd = (interp_eval(f, tau + h) - interp_eval(f, tau - h)) / (2 * h)
    d = eval_derivative(f, tau)
    assert np.linalg.norm(d - fd) / np.linalg.norm(fd) < 1e-6


def test_superposition():
    S = np.linspace(0, 6, 12)
    a, b = np.sin(S), np.cos(2 * S)
    fa, fb = fit_values(K, S, a, 1e-5), fit_values(K, S, b, 1e-5)
    fab = fit_values(K, S, 2 * a - 3 * b, 1e-5)
    t = np.linspace(-1, 7, 31)
    np.testing.assert_allclose(interp_eval(fab, t), 2 * interp_eval(fa, t) - 3 * interp_eval(fb, t), atol=1e-9)
    np.testing.assert_allclose(eval_derivative(fab, t), 2 * eval_derivative(fa, t) - 3 * eval_derivative(fb, t),
                               atol=1e-9)


def test_rkhs_norm_non_increasing_in_ridge():
    S = np.linspace(0, 8, 30)
    y = np.sin(S) + 0.1 * np.cos(5 * S)
    G = gram(K, S, S)
    norms = []
    for lam in (1e-8, 1e-6, 1e-4, 1e-2, 1.0):
        a = fit_values(K, S, y, lam).coefficients[:, 0]
        norms.append(a @ G @ a)
    assert all(x >= y - 1e-10 * abs(x) for x, y in zip(norms, norms[1:]))


@pytest.mark.parametrize("n", [2, 10, 40])
@pytest.mark.parametrize("sep", [1.0, 2.5])
def test_interpolation_exact_at_ridge_zero(n, sep):
    # at spacing below the lengthscale the Gram condition number exceeds 1/eps
    S = np.arange(n) * sep
    y = np.cos(3 * S) + 0.5 + np.linspace(-1, 1, n) ** 2
    f = fit_values(K, S, y, 0.0)
    assert f.ridge == 0.0
    np.testing.assert_allclose(interp_eval(f, S)[:, 0], y, rtol=1e-8)


def test_close_anchors_fall_back_to_jitter():
    S = np.arange(6) * 1e-3
    f = fit_values(K, S, np.ones(6), 0.0)
    assert f.ridge > 0


def test_anchor_order_is_canonical():
    S = np.array([2.0, 0.0, 1.0])
    y = np.array([4.0, 0.0, 1.0])
    f = fit_values(K, S, y, 0.0)
    np.testing.assert_array_equal(f.anchors, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(interp_eval(f, S)[:, 0], y, rtol=1e-8, atol=1e-12)


def test_duplicates_rejected():
    with pytest.raises(ContractError):
        fit_values(K, [0.0, 1.0, 1.0 + 1e-12], [1.0, 2.0, 3.0], 0.0)


def test_state_kernel_rejected_for_trajectories():
    with pytest.raises(ContractError):
        fit_values(KernelSpec("gaussian_state"), [0.0], [1.0], 0.0)


def test_value_count_mismatch_rejected():
    with pytest.raises(ContractError):
        fit_values(K, [0.0, 1.0], [1.0, 2.0, 3.0], 0.0)
