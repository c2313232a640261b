import numpy as np
import pytest

from conftest import make_instance
from recnet.evaluate import (
    RocPoint, correlation_scores, forecast_error, forecast_study, map_trials, roc_auc,
    roc_study, roc_sweep, sub_seed, thread_count, top_m_support, tpr_fpr, trial_seed,
    validation_score,
)
from recnet.model import NetworkParams, Observations
from recnet.simulate import GenConfig, SimConfig, generate_params, simulate_sde


def test_tpr_fpr_counts_offdiagonal_links():
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.0]])
    B_hat = np.array([[5.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])  # finds A[0,1] plus a false link
    assert tpr_fpr(B_hat, A) == (0.5, 0.25)
    with pytest.raises(ValueError, match="no links"):
        tpr_fpr(B_hat, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        tpr_fpr(np.zeros((2, 2)), A)


def test_roc_auc_extremes():
    assert roc_auc([RocPoint(1, 1.0, 0.0)]) == 1.0
    assert roc_auc([RocPoint(1, 0.0, 1.0)]) == 0.0
    assert roc_auc([RocPoint(1, 0.5, 0.5)]) == pytest.approx(0.5)


def test_perfect_ranking_gives_unit_auc():
    params, obs = make_instance(n=6, T=20, seed=0, p_link=0.3)
    scores = np.abs(params.A.T) + 1e-3 * np.random.default_rng(0).random((6, 6))
    n = 6
    pts = [RocPoint(m, *tpr_fpr(top_m_support(scores, m), params.A)) for m in range(1, n * (n - 1) + 1)]
    assert roc_auc(pts) == 1.0


def test_random_ranking_is_near_half():
    aucs = []
    for s in range(20):
        params, obs = make_instance(n=8, T=20, seed=s, p_link=0.3)
        aucs.append(roc_sweep(obs, params, "random", seed=s).auc)
    assert abs(np.median(aucs) - 0.5) < 0.1


def test_top_m_support_and_correlation_layout():
    S = np.array([[9.0, 1.0], [3.0, 9.0]])
    np.testing.assert_array_equal(top_m_support(S, 1), [[0.0, 0.0], [1.0, 0.0]])
    X = np.arange(12.0).reshape(6, 2) ** 1.5
    obs = Observations.regular(X)
    C = correlation_scores(obs)
    assert C.shape == (2, 2) and np.all((C >= 0) & (C <= 1 + 1e-12))


def test_roc_sweep_validation():
    params, obs = make_instance(n=4, T=20, seed=0, p_link=0.5)
    with pytest.raises(ValueError):
        roc_sweep(obs, params, "bogus")
    with pytest.raises(ValueError):
        roc_sweep(obs, generate_params(GenConfig(n=3)), "random")


def test_seeds_and_thread_count(monkeypatch):
    assert trial_seed(5, 3) == 6
    assert sub_seed(1, 1) == sub_seed(1, 1)
    assert len({sub_seed(s, k) for s in range(5) for k in range(5)}) == 25
    assert 0 <= sub_seed(2**40, 7) < 2**63
    monkeypatch.setenv("RECNET_THREADS", "3")
    assert thread_count() == 3 and thread_count(2) == 2
    monkeypatch.setenv("RECNET_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count()


def test_map_trials_order_and_thread_invariance():
    def fn(k):
        return np.random.default_rng(sub_seed(k, 1)).random(3)

    one = map_trials(fn, range(8), threads=1)
    four = map_trials(fn, range(8), threads=4)
    for a, b in zip(one, four):
        np.testing.assert_array_equal(a, b)


def test_forecast_with_truth_and_no_noise_is_exact():
    params = generate_params(GenConfig(n=5, seed=1, sigma=0.0))
    truth = simulate_sde(params, SimConfig(t_end=10, x0=tuple(np.ones(5))))
    res = forecast_error(params, truth, [1, 5, 10])
    np.testing.assert_allclose(res.fe, 0.0, atol=1e-24)


def test_forecast_of_diverging_estimate_is_infinite():
    params = generate_params(GenConfig(n=3, seed=0, sigma=0.0))
    truth = simulate_sde(params, SimConfig(t_end=20))
    bad = params.replace(d=np.full(3, -20.0), c=np.ones(3))
    res = forecast_error(bad, truth, [1, 20])
    assert np.isfinite(res.fe[0]) and np.isinf(res.fe[1])


def test_forecast_noise_level_is_plausible():
    # with the true model the error is the spread of two independent paths
    fes = []
    for s in range(10):
        params = generate_params(GenConfig(n=10, seed=s, sigma=0.5))
        truth = simulate_sde(params, SimConfig(t_end=20, seed=s))
        fes.append(forecast_error(params, truth, [20], seed=s + 100).fe[0])
    assert 0 < np.median(fes) <= 5 * 0.5**2 * 20


def test_forecast_error_validation():
    params = generate_params(GenConfig(n=3, seed=0))
    truth = simulate_sde(params, SimConfig(t_end=5))
    with pytest.raises(ValueError):
        forecast_error(params, truth, [6])
    irregular = Observations(np.array([0.0, 1.0, 3.0]), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        forecast_error(params, irregular, [1])


def test_validation_score_is_inf_for_overflowing_model():
    params, obs = make_instance(n=3, T=10, seed=0)
    huge = NetworkParams(A=params.A, u=params.u, l=params.l, d=np.full(3, 1e308), c=params.c)
    assert validation_score(huge, obs) == np.inf
    assert np.isfinite(validation_score(params, obs))


def test_small_studies_are_thread_invariant():
    kw = dict(n=5, T=30, trials=3, seed=4, methods=("correlation", "random"))
    a = roc_study(threads=1, **kw)
    b = roc_study(threads=3, **kw)
    for m in kw["methods"]:
        np.testing.assert_array_equal(a.auc[m], b.auc[m])
    fkw = dict(n=4, T=10, n_valid=20, horizons=(1, 3), trials=2, seed=1, lambdas=(0.1,), max_iter=10)
    f1 = forecast_study(threads=1, **fkw)
    f2 = forecast_study(threads=2, **fkw)
    for m in ("s3", "sigspar"):
        np.testing.assert_array_equal(f1.fe[m], f2.fe[m])
        assert f1.median(m).shape == (2,)
