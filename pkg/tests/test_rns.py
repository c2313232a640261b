import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import expit

from recnet.evaluate import tpr_fpr
from recnet.rns import (LinkConstraints, RnsConfig, _data, constrained_threshold, cooling_schedule,
                        fit_rns, majorizer, node_wls, plateau_iteration, quantile_threshold)
from recnet.sigreg import spectral_norm_sq

from conftest import make_instance
from oracles import brute_force_cardinality, cardinality_objective


def test_quantile_threshold_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(5):
        M = rng.normal(size=(3, 3))
        for m in range(1, 10):
            for eta in (0.0, 0.5):
                B = quantile_threshold(M, m, eta)
                assert np.count_nonzero(B) <= m
                gap = cardinality_objective(M, B, eta) - brute_force_cardinality(M, m, eta)
                assert abs(gap) <= 1e-12


def test_quantile_threshold_ties_and_bounds():
    M = np.array([[1.0, -1.0], [1.0, 0.5]])
    np.testing.assert_array_equal(quantile_threshold(M, 2), [[1.0, -1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        quantile_threshold(M, 0)
    with pytest.raises(ValueError):
        quantile_threshold(M, 5)


@given(arrays(np.float64, (4, 4), elements=st.floats(-10, 10)), st.integers(1, 16))
def test_quantile_threshold_keeps_largest(M, m):
    B = quantile_threshold(M, m)
    kept = np.abs(M[B != 0])
    dropped = np.abs(M[(B == 0)])
    assert np.count_nonzero(B) <= m
    if kept.size and dropped.size:
        assert kept.min() >= dropped.max()


def test_constrained_threshold_respects_links():
    rng = np.random.default_rng(1)
    Xi = rng.normal(size=(5, 5))
    cons = LinkConstraints(maintained={(0, 1), (2, 3)}, forbidden={(4, 0)})
    Xi[0, 1] = 1e-9  # tiny but maintained
    Xi[4, 0] = 100.0  # huge but forbidden
    zeta, masked = constrained_threshold(Xi, 6, cons)
    keep = np.abs(masked) > zeta
    assert keep[0, 1] and keep[2, 3]
    assert not keep[4, 0]
    assert not np.any(np.diag(keep))
    assert keep.sum() == 6
    with pytest.raises(ValueError):
        constrained_threshold(Xi, 1, cons)


def test_constrained_threshold_zero_free_budget():
    Xi = np.ones((3, 3))
    zeta, _ = constrained_threshold(Xi, 1, LinkConstraints(maintained={(0, 1)}))
    assert zeta[0, 1] == 0.0
    assert np.all(np.isinf(np.delete(zeta.ravel(), 1)))


def test_link_constraints_validation():
    with pytest.raises(ValueError):
        LinkConstraints(maintained={(0, 1)}, forbidden={(0, 1)})
    with pytest.raises(ValueError):
        LinkConstraints(maintained={(2, 2)})
    with pytest.raises(ValueError):
        LinkConstraints(maintained={(5, 0)}).masks(3)
    c = LinkConstraints.from_links(maintained=[(1, 0)])
    assert (0, 1) in c.maintained
    assert c.transposed().maintained == {(1, 0)}
    assert LinkConstraints().n_eligible(4) == 12


def test_cooling_schedule_values():
    assert cooling_schedule(0, 10, 5) == 90
    assert cooling_schedule(1000, 10, 5) == 5
    assert cooling_schedule(10**6, 10, 7) == 7
    j = np.arange(0, 2000)
    vals = [cooling_schedule(int(k), 10, 5) for k in j]
    assert np.all(np.diff(vals) <= 0)
    with pytest.raises(ValueError):
        cooling_schedule(-1, 10, 5)


@given(st.integers(2, 40), st.integers(1, 400))
def test_plateau_iteration(n, m):
    m = min(m, n * (n - 1))
    j = plateau_iteration(n, m)
    assert cooling_schedule(j, n, m) == m
    if j > 1:
        assert cooling_schedule(j - 1, n, m) > m


def test_node_wls_matches_lstsq():
    params, obs = make_instance(n=4, T=30, seed=1)
    rng = np.random.default_rng(0)
    mu = rng.random((30, 4))
    X, Y, w = obs.X, obs.Y, obs.w
    l, d, c = node_wls(mu, X, Y, w, eta_l=0.1, eta_c=0.2)
    for i in range(4):
        D = np.column_stack([mu[:, i], -X[:, i], np.ones(30)])
        ref = np.linalg.solve(D.T @ (w[:, None] * D) + np.diag([0.1, 0.0, 0.2]), D.T @ (w * Y[:, i]))
        np.testing.assert_allclose([l[i], d[i], c[i]], ref, rtol=1e-9, atol=1e-12)


def test_node_wls_rank_deficient_min_norm():
    T = 20
    X = np.zeros((T, 1))
    mu = np.full((T, 1), 0.5)
    Y = np.full((T, 1), 2.0)
    l, d, c = node_wls(mu, X, Y, np.ones(T))
    # mu and the intercept are collinear: minimum-norm split of 2 = 0.5 l + c
    np.testing.assert_allclose([l[0], d[0], c[0]], [0.8, 0.0, 1.6], rtol=1e-9)


def test_majorizer_majorizes():
    params, obs = make_instance(n=5, T=40, seed=2, p_link=0.4)
    Xtil, X, Y, w = _data(obs)
    rng = np.random.default_rng(0)
    Btil = rng.normal(scale=0.5, size=(6, 5))
    l, d, c = node_wls(expit(Xtil @ Btil), X, Y, w)
    Xi_til, K = majorizer(Xtil, X, Y, w, Btil, l, d, c, spectral_norm_sq(Xtil))

    def col_loss(Bt, i):
        pred = expit(Xtil @ Bt[:, i]) * l[i] - X[:, i] * d[i] + c[i]
        return 0.5 * np.sum(w * (Y[:, i] - pred) ** 2)

    grad = K * (Btil - Xi_til)
    for _ in range(50):
        B2 = Btil + rng.normal(scale=1.0, size=Btil.shape)
        for i in range(5):
            diff = B2[:, i] - Btil[:, i]
            bound = col_loss(Btil, i) + grad[:, i] @ diff + K[i] / 2 * diff @ diff
            assert col_loss(B2, i) <= bound + 1e-10


def test_fit_rns_descends_and_respects_budget():
    for seed in range(3):
        params, obs = make_instance(n=8, T=50, seed=seed)
        m = 6
        fit = fit_rns(obs, RnsConfig(m=m))
        tr = np.array(fit.objective_trace)[fit.plateau_start:]
        assert np.all(np.diff(tr) <= 1e-9 * np.abs(tr[:-1]))
        assert np.count_nonzero(fit.B) <= m
        assert np.all(np.diag(fit.B) == 0)
        assert fit.m_schedule[-1] == m
        assert max(fit.support_sizes[1:]) <= fit.m_schedule[1]


def test_fit_rns_full_budget_monotone_throughout():
    params, obs = make_instance(n=5, T=50, seed=3)
    fit = fit_rns(obs, RnsConfig(m=20, eta=0.0))
    tr = np.array(fit.objective_trace)
    assert np.all(np.diff(tr) <= 1e-9 * np.abs(tr[:-1]))


def test_fit_rns_link_constraints():
    params, obs = make_instance(n=6, T=50, seed=4)
    cons = LinkConstraints(maintained={(0, 1)}, forbidden={(2, 3), (3, 2)})
    fit = fit_rns(obs, RnsConfig(m=4, constraints=cons))
    assert fit.B[0, 1] != 0
    assert fit.B[2, 3] == 0 and fit.B[3, 2] == 0
    assert np.count_nonzero(fit.B) <= 4
    with pytest.raises(ValueError):
        RnsConfig(m=1, constraints=LinkConstraints(maintained={(0, 1), (1, 0)}))
    with pytest.raises(ValueError):
        fit_rns(obs, RnsConfig(m=31))


def test_fit_rns_recovers_support_on_long_series():
    tprs = []
    for seed in range(3):
        params, obs = make_instance(n=10, T=1000, seed=seed)
        m = int(np.count_nonzero(params.A))
        fit = fit_rns(obs, RnsConfig(m=m, tol=1e-6))
        tprs.append(tpr_fpr(fit.B, params.A)[0])
    assert np.median(tprs) >= 0.6
