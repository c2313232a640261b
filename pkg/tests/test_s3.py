import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from conftest import make_instance
from oracles import (dykstra_oracle, grid_prox, linear_projection_dense,
                     random_dykstra_instance as _random_instance, sample_feasible_spectral)
from recnet.s3 import (
    S3Config, _barrier_derivatives, _barrier_value, constrained_wls, dykstra_objective,
    dykstra_step4, fit_s3, l1_norm, lin_map, proj_l1, proj_linear, proj_spectral,
    scale_to_feasible, stability_slack, step4_surrogate,
)

cp = pytest.importorskip("cvxpy")


# ---------------------------------------------------------------------------
# projections

@given(st.floats(-5, 5), st.floats(0, 3))
def test_proj_l1_matches_grid_prox(phi, lam):
    out = proj_l1(np.array([[phi]]), np.array([[lam]]))[0, 0]
    assert abs(out - grid_prox(phi, lam)) <= 1e-6


def test_proj_l1_intercept_row_and_forbidden_entries():
    Phi = np.array([[5.0, -5.0], [2.0, -0.1], [3.0, 4.0]])
    Lam = np.array([[1.0, 1.0], [np.inf, 0.5]])
    out = proj_l1(Phi, Lam)
    np.testing.assert_array_equal(out, [[5.0, -5.0], [1.0, 0.0], [0.0, 3.5]])
    with pytest.raises(ValueError):
        proj_l1(np.zeros((2, 3)), np.zeros((2, 2)))


def test_proj_linear_worked_example():
    B, C = proj_linear(np.array([[0.0, 4.0], [0.0, 0.0]]), np.zeros((2, 2)), np.ones(2))
    np.testing.assert_allclose(B, [[0.0, 3.0], [-1.0, 0.0]], atol=1e-14)
    np.testing.assert_allclose(C, [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_proj_linear_matches_dense_normal_equations(seed):
    rng = np.random.default_rng(seed)
    n = 5
    PhiB = rng.normal(size=(n, n))
    PhiC = rng.normal(size=(n, n))
    PhiC = 0.5 * (PhiC + PhiC.T)
    l = rng.uniform(0.0, 2.0, n)
    B, C = proj_linear(PhiB, PhiC, l)
    assert np.max(np.abs(B - linear_projection_dense(PhiB, PhiC, l))) <= 1e-8
    np.testing.assert_allclose(C, lin_map(B, l), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_proj_spectral_is_feasible_and_nearest(seed):
    rng = np.random.default_rng(seed)
    n = 4
    Phi = rng.normal(scale=3.0, size=(n, n))
    d = rng.uniform(0.0, 1.0, n)
    C = proj_spectral(Phi, d)
    np.testing.assert_array_equal(C, C.T)
    assert np.linalg.eigvalsh(C - 4 * np.diag(d))[-1] <= 1e-10
    best = np.sum((C - Phi) ** 2)
    for Z in sample_feasible_spectral(C, d, rng):
        assert best <= np.sum((Z - Phi) ** 2) + 1e-12


# ---------------------------------------------------------------------------
# feasibility helpers

@pytest.mark.parametrize("seed", range(5))
def test_scale_to_feasible_is_tight(seed):
    Xi, _, l, d = _random_instance(seed)
    s, B = scale_to_feasible(5 * Xi, l, d)
    assert stability_slack(B, l, d) <= 0.0
    if s < 1.0:
        assert stability_slack(5 * Xi * s * (1 + 1e-6), l, d) > 0.0
    s1, B1 = scale_to_feasible(np.zeros_like(Xi), l, d)
    assert s1 == 1.0 and not B1.any()


def test_scale_to_feasible_with_zero_decay():
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    s, out = scale_to_feasible(B, np.ones(2), np.array([0.0, 1.0]))
    assert s == 0.0 and not out.any()


def test_l1_norm_treats_inf_times_zero_as_zero():
    Lam = np.array([[np.inf, 1.0], [2.0, np.inf]])
    assert l1_norm(np.array([[0.0, -1.0], [1.0, 0.0]]), Lam) == 3.0
    assert l1_norm(np.eye(2), Lam) == np.inf


# ---------------------------------------------------------------------------
# Dykstra step

@pytest.mark.parametrize("seed", range(3))
def test_dykstra_matches_conic_oracle(seed):
    Xi, Lam, l, d = _random_instance(seed)
    Xi_C = lin_map(Xi, l)
    res = dykstra_step4(np.vstack([np.zeros(4), Xi]), Lam, l, d, inner_max=100_000, inner_tol=1e-12)
    f = dykstra_objective(res.B, lin_map(res.B, l), Xi, Xi_C, Lam)
    assert abs(f - dykstra_oracle(Xi, Xi_C, Lam, l, d)) <= 1e-5
    assert res.slack <= 1e-8


def test_dykstra_output_is_sparse_and_optimal():
    Xi, Lam, l, d = _random_instance(1)
    Lam = 4 * Lam
    Xi_C = lin_map(Xi, l)
    res = dykstra_step4(np.vstack([np.zeros(4), Xi]), Lam, l, d, inner_max=100_000, inner_tol=1e-12)
    B = res.B[-4:]
    assert np.count_nonzero(B) < 16
    f = dykstra_objective(B, lin_map(B, l), Xi, Xi_C, Lam)
    assert abs(f - dykstra_oracle(Xi, Xi_C, Lam, l, d)) <= 1e-5


def test_dykstra_keeps_intercept_and_forbidden_zeros():
    Xi, Lam, l, d = _random_instance(7)
    Lam[np.diag_indices(4)] = np.inf
    u = np.arange(4.0)
    res = dykstra_step4(np.vstack([u, Xi]), Lam, l, d)
    np.testing.assert_array_equal(res.u, u)
    assert not np.diag(res.B).any()


@given(st.integers(0, 10_000))
def test_dykstra_never_worse_than_previous(seed):
    Xi, Lam, l, d = _random_instance(seed)
    rng = np.random.default_rng(seed + 1)
    _, B_prev = scale_to_feasible(rng.normal(size=(4, 4)), l, d)
    res = dykstra_step4(np.vstack([np.zeros(4), Xi]), Lam, l, d, inner_max=50, B_prev=B_prev)
    assert res.surrogate <= step4_surrogate(B_prev, Xi, Lam)
    assert res.slack <= 0.0


def test_dykstra_rejects_negative_gains():
    Xi, Lam, l, d = _random_instance(0)
    with pytest.raises(ValueError):
        dykstra_step4(np.vstack([np.zeros(4), Xi]), Lam, -l, d)


# ---------------------------------------------------------------------------
# constrained least squares

def test_barrier_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    n = 4
    B = rng.normal(size=(n, n))
    l = rng.uniform(0.5, 1.5, n)
    d = rng.uniform(2.0, 3.0, n)
    eps = 0.1
    z = np.concatenate([l, d])

    def value(z):
        return _barrier_value(B, z[:n], z[n:], eps)[1]

    Lc, _ = _barrier_value(B, l, d, eps)
    grad, hess, _ = _barrier_derivatives(B, l, d, eps, Lc)
    h = 1e-6
    fd_grad = np.array([(value(z + h * e) - value(z - h * e)) / (2 * h) for e in np.eye(2 * n)])

    def grad_at(z):
        return _barrier_derivatives(B, z[:n], z[n:], eps, _barrier_value(B, z[:n], z[n:], eps)[0])[0]

    fd_hess = np.column_stack([(grad_at(z + h * e) - grad_at(z - h * e)) / (2 * h) for e in np.eye(2 * n)])
    assert np.max(np.abs(grad - fd_grad)) <= 1e-6 * np.max(np.abs(grad))
    assert np.max(np.abs(hess - fd_hess)) <= 1e-6 * np.max(np.abs(hess))
    assert _barrier_value(B, l, np.zeros(n), eps) is None


def _wls_oracle(mu, obs, B, eta_l, eta_c):
    n, T = obs.n, obs.T
    l, d, c = cp.Variable(n), cp.Variable(n), cp.Variable(n)
    ones = np.ones((T, 1))
    row = lambda v: ones @ cp.reshape(v, (1, n), order="C")  # noqa: E731
    R = obs.Y - cp.multiply(mu, row(l)) + cp.multiply(obs.X, row(d)) - row(c)
    obj = (0.5 * cp.sum(cp.multiply(obs.w[:, None], cp.square(R)))
           + eta_l / 2 * cp.sum_squares(l) + eta_c / 2 * cp.sum_squares(c))
    S = 4 * cp.diag(d) - (cp.diag(l) @ B.T + B @ cp.diag(l)) / 2
    prob = cp.Problem(cp.Minimize(obj), [l >= 0, d >= 0, (S + S.T) / 2 >> 0])
    prob.solve(solver="CLARABEL")
    return prob.value


@pytest.mark.parametrize("seed,scale,path", [(0, 1.0, "box"), (1, 3.0, "barrier"), (3, 6.0, "barrier")])
def test_constrained_wls_matches_conic_oracle(seed, scale, path):
    params, obs = make_instance(n=6, T=40, seed=seed, p_link=0.3)
    rng = np.random.default_rng(seed)
    B = scale * (params.A.T + rng.normal(0, 0.5, (6, 6)))
    np.fill_diagonal(B, 0.0)
    mu = expit(np.column_stack([np.ones(obs.T), obs.X]) @ np.vstack([params.u, B]))
    res = constrained_wls(mu, obs, B, 1e-4, 1e-2)
    assert res.method == path
    ref = _wls_oracle(mu, obs, B, 1e-4, 1e-2)
    assert res.objective <= ref + 1e-6 * abs(ref)
    assert res.objective >= ref - 1e-6 * abs(ref)
    assert stability_slack(B, res.l, res.d) <= 1e-8
    assert res.l.min() >= 0 and res.d.min() >= 0


def test_constrained_wls_never_worse_than_start():
    params, obs = make_instance(n=6, T=40, seed=4, p_link=0.3)
    B = 6.0 * params.A.T
    mu = expit(np.column_stack([np.ones(obs.T), obs.X]) @ np.vstack([params.u, B]))
    start = (params.l, 10.0 * params.d)
    assert stability_slack(B, *start) <= 0
    first = constrained_wls(mu, obs, B, 1e-4, 1e-2)
    warm = constrained_wls(mu, obs, B, 1e-4, 1e-2, start=start)
    assert warm.objective <= first.objective + 1e-6 * abs(first.objective)


def test_constrained_wls_respects_epsilon():
    params, obs = make_instance(n=6, T=40, seed=5, p_link=0.3)
    mu = np.full((obs.T, 6), 0.5)
    res = constrained_wls(mu, obs, np.zeros((6, 6)), epsilon=0.3)
    assert res.l.min() >= 0.3 - 1e-12


# ---------------------------------------------------------------------------
# outer loop

@pytest.mark.parametrize("seed", range(3))
def test_fit_s3_iterates_are_feasible_and_descend(seed):
    _, obs = make_instance(n=8, T=50, seed=seed)
    fit = fit_s3(obs, S3Config(lam=0.05, max_iter=60))
    tr = np.array(fit.objective_trace)
    assert np.all(np.diff(tr) <= 1e-9 * np.abs(tr[:-1]))
    assert max(fit.slack_trace) <= 1e-8
    assert min(fit.min_l_trace) >= 0 and min(fit.min_d_trace) >= 0
    assert all(new <= old for new, old in fit.surrogate_pairs)
    assert not np.diag(fit.B).any()
    params = fit.params(sigma=0.1)
    np.testing.assert_array_equal(params.A, fit.B.T)


def test_fit_s3_moderate_lambda_gives_sparse_network():
    _, obs = make_instance(n=10, T=100, seed=1)
    fit = fit_s3(obs, S3Config(lam=0.05, max_iter=300))
    assert 0 < np.count_nonzero(fit.B) < 90


def test_fit_s3_large_lambda_gives_empty_network():
    _, obs = make_instance(n=6, T=40, seed=0)
    fit = fit_s3(obs, S3Config(lam=1e6, max_iter=20))
    assert not fit.B.any()


def test_fit_s3_custom_weights_and_validation():
    _, obs = make_instance(n=4, T=30, seed=1)
    Lam = np.full((4, 4), 0.01)
    Lam[0, :] = np.inf
    fit = fit_s3(obs, S3Config(Lambda=Lam, max_iter=20))
    assert not fit.B[0].any()
    with pytest.raises(ValueError):
        fit_s3(obs, S3Config(Lambda=np.ones((3, 3))))
    with pytest.raises(ValueError):
        S3Config(lam=-1.0)
    with pytest.raises(ValueError):
        fit_s3(obs, S3Config(), B0til=np.zeros((4, 4)))

