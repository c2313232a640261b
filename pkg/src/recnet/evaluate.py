"""Topology-recovery ROC curves and multi-step forecast error."""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationDivergence
from .model import Penalty, PenaltySpec, loss_f
from .rns import RnsConfig, fit_rns, plateau_iteration
from .s3 import S3Config, fit_s3
from .sigreg import fit_network_univariate
from .simulate import GenConfig, SimConfig, generate_params, simulate_sde

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1)


def thread_count(threads=None):
    """Worker count: explicit value, else ``RECNET_THREADS``, else 1."""
    if threads is None:
        raw = os.environ.get("RECNET_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"RECNET_THREADS must be an integer, got {raw!r}") from None
    return max(1, int(threads))


def map_trials(fn, items, threads=None):
    """``[fn(x) for x in items]``, run on a thread pool; order is preserved."""
    items = list(items)
    k = min(thread_count(threads), max(1, len(items)))
    if k == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, items))


def trial_seed(seed, trial):
    return int(seed) ^ int(trial)


def sub_seed(seed, stream):
    """Independent 63-bit seed for a named stream of a trial."""
    return int(np.random.SeedSequence((int(seed), int(stream))).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# ROC

@dataclass(frozen=True)
class RocPoint:
    m: int
    tpr: float
    fpr: float


@dataclass
class RocCurve:
    points: list
    auc: float


def _offdiag(n):
    return ~np.eye(n, dtype=bool)


def tpr_fpr(B_hat, A_true, exclude_diagonal=True):
    """Rates of recovered links; ``B_hat`` is in ``B = A.T`` orientation."""
    est = np.asarray(B_hat).T != 0
    true = np.asarray(A_true) != 0
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    mask = _offdiag(true.shape[0]) if exclude_diagonal else np.ones_like(true)
    pos = true & mask
    neg = ~true & mask
    if not pos.any():
        raise ValueError("the true network has no links; TPR is undefined")
    tpr = np.sum(est & pos) / np.sum(pos)
    fpr = np.sum(est & neg) / np.sum(neg) if neg.any() else 0.0
    return float(tpr), float(fpr)


def roc_auc(points):
    """Trapezoidal area under ``(fpr, tpr)`` points with ``(0, 0)`` and ``(1, 1)`` added."""
    pts = sorted((p.fpr, p.tpr) for p in points)
    fpr = np.array([0.0] + [p[0] for p in pts] + [1.0])
    tpr = np.array([0.0] + [p[1] for p in pts] + [1.0])
    return float(np.trapezoid(tpr, fpr))


def correlation_scores(obs):
    """``|corr(x_k(t), dx_i/dt)|`` arranged like ``B`` (row ``k`` regulates column ``i``)."""
    X, Y = obs.X, obs.Y
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    den = np.outer(np.linalg.norm(Xc, axis=0), np.linalg.norm(Yc, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        S = np.abs(Xc.T @ Yc) / den
    return np.nan_to_num(S, nan=0.0)


def top_m_support(scores, m, exclude_diagonal=True):
    """Indicator of the ``m`` highest scores (row-major tie-break)."""
    S = np.array(scores, dtype=float)
    if exclude_diagonal:
        np.fill_diagonal(S, -np.inf)
    order = np.argsort(-S.ravel(), kind="stable")
    out = np.zeros(S.size)
    out[order[:m]] = 1.0
    return out.reshape(S.shape)


def roc_rns_config(m, **overrides):
    """RNS settings used in sweeps: tolerance 1e-6, at most 300 iterations past the plateau."""
    n_nodes = overrides.pop("n")
    cfg = dict(m=m, tol=1e-6, max_iter=plateau_iteration(n_nodes, m) + 300)
    cfg.update(overrides)
    return RnsConfig(**cfg)


def roc_sweep(obs, true_params, fitter="rns", m_values=None, seed=0, rns_options=None):
    """ROC curve of a link ranking or of RNS refitted for each ``m``.

    ``fitter`` is ``"rns"``, ``"correlation"`` or ``"random"`` (uniform
    scores from ``seed``).  ``m_values`` defaults to ``1 .. n(n-1)``.
    """
    n = obs.n
    if true_params.n != n:
        raise ValueError("true_params and obs have different node counts")
    m_values = range(1, n * (n - 1) + 1) if m_values is None else m_values
    A = true_params.A
    points = []
    if fitter in ("correlation", "random"):
        if fitter == "correlation":
            scores = correlation_scores(obs)
        else:
            scores = np.random.default_rng(seed).random((n, n))
        for m in m_values:
            points.append(RocPoint(int(m), *tpr_fpr(top_m_support(scores, int(m)), A)))
    elif fitter == "rns":
        opts = dict(rns_options or {})
        for m in m_values:
            fit = fit_rns(obs, roc_rns_config(int(m), n=n, **opts))
            points.append(RocPoint(int(m), *tpr_fpr(fit.B, A)))
    else:
        raise ValueError(f"unknown fitter {fitter!r}")
    return RocCurve(points, roc_auc(points))


@dataclass
class RocStudy:
    auc: dict
    curves: dict

    def median_auc(self, method):
        return float(np.median(self.auc[method]))


def roc_study(n=10, T=100, trials=10, seed=0, methods=("rns", "correlation"), m_values=None,
              sigma=0.5, threads=None):
    """Repeated ROC sweeps on generated networks observed at unit sampling period."""

    def one(t):
        s = trial_seed(seed, t)
        params = generate_params(GenConfig(n=n, seed=s, sigma=sigma))
        if not np.any(params.A != 0):
            log.info("trial %d: empty network, redrawing", t)
            params = generate_params(GenConfig(n=n, seed=sub_seed(s, 9), sigma=sigma))
        obs = simulate_sde(params, SimConfig(t_end=T, seed=sub_seed(s, 1)))
        return {m: roc_sweep(obs, params, m, m_values, seed=sub_seed(s, 2)) for m in methods}

    results = map_trials(one, range(trials), threads)
    auc = {m: np.array([r[m].auc for r in results]) for m in methods}
    curves = {m: [r[m] for r in results] for m in methods}
    return RocStudy(auc, curves)


# ---------------------------------------------------------------------------
# forecasting

@dataclass
class ForecastResult:
    horizons: np.ndarray
    fe: np.ndarray
    forecast: np.ndarray = None


def forecast_error(params_hat, truth, horizons, seed=0, sigma=None, internal_step=None, n_draws=1):
    """``||x(T+h) - xhat(T+h)||^2 / n`` for forecasts simulated from ``truth.states[0]``.

    ``truth`` holds ``x(T), x(T+1), ...`` on a regular grid.  ``sigma``
    defaults to ``params_hat.sigma``; with ``n_draws > 1`` the error is
    averaged over independent noise paths.  A diverging forecast yields
    ``inf`` at every horizon it fails to reach.
    """
    horizons = np.asarray(horizons, dtype=int)
    dt = truth.dt
    if not np.allclose(dt, dt[0], rtol=1e-9):
        raise ValueError("truth trajectory must be regularly sampled")
    if horizons.min() < 1 or horizons.max() > truth.T:
        raise ValueError(f"horizons must lie in [1, {truth.T}]")
    period = float(dt[0])
    sig = params_hat.sigma if sigma is None else float(sigma)
    model = params_hat.replace(sigma=sig)
    x0 = tuple(truth.states[0])
    n = params_hat.n
    fe = np.zeros(len(horizons))
    last = None
    for k in range(n_draws):
        draw_seed = seed if n_draws == 1 else sub_seed(seed, k)
        cfg = SimConfig(t_end=period * horizons.max(), sample_period=period,
                        internal_step=internal_step, x0=x0, seed=draw_seed)
        err = np.full(len(horizons), np.inf)
        try:
            path = simulate_sde(model, cfg).states
            last = path
            err = np.sum((truth.states[horizons] - path[horizons]) ** 2, axis=1) / n
        except SimulationDivergence as exc:
            # rows up to exc.step // steps_per_sample were completed in range
            ok = horizons <= exc.step // cfg.steps_per_sample
            if ok.any():
                short = SimConfig(t_end=period * horizons[ok].max(), sample_period=period,
                                  internal_step=internal_step, x0=x0, seed=draw_seed)
                path = simulate_sde(model, short).states
                err[ok] = np.sum((truth.states[horizons[ok]] - path[horizons[ok]]) ** 2, axis=1) / n
        fe += err
    return ForecastResult(horizons, fe / n_draws, last)


def validation_score(params_hat, valid):
    """Discretized loss per increment on held-out data (``inf`` if not finite)."""
    with np.errstate(over="ignore", invalid="ignore"):
        v = loss_f(params_hat, valid) / valid.T
    return v if np.isfinite(v) else np.inf


def fit_sigspar(obs, lam, max_iter=1000):
    """Node-by-node ``l1`` sigmoidal regression with no stability constraint."""
    spec = PenaltySpec(Penalty.L1, lam=lam)
    return fit_network_univariate(obs, spec, no_self_loops=True, max_iter=max_iter).params


def fit_s3_params(obs, lam, max_iter=1000):
    return fit_s3(obs, S3Config(lam=lam, max_iter=max_iter)).params()


FITTERS = {"s3": fit_s3_params, "sigspar": fit_sigspar}


@dataclass
class ForecastStudy:
    horizons: np.ndarray
    fe: dict
    chosen_lambda: dict
    trials: list = field(default_factory=list)

    def median(self, method):
        return np.median(self.fe[method], axis=0)


def forecast_study(n=20, T=20, n_valid=200, horizons=(1, 5, 10, 15, 20), trials=10, seed=0,
                   methods=("s3", "sigspar"), lambdas=DEFAULT_LAMBDAS, sigma=0.5,
                   forecast_sigma=None, max_iter=300, threads=None):
    """Forecast-error comparison on generated stable networks.

    Per trial: a path of ``T + max(horizons)`` unit steps from ``x = 0``
    (first ``T + 1`` points for training, the rest as truth), an independent
    validation path of ``n_valid`` steps for choosing ``lambda`` by held-out
    loss, and a forecast from ``x(T)`` simulated with ``forecast_sigma``
    (default: the generating ``sigma``).
    """
    horizons = np.asarray(horizons, dtype=int)
    hmax = int(horizons.max())
    fsig = sigma if forecast_sigma is None else forecast_sigma

    def one(t):
        s = trial_seed(seed, t)
        params = generate_params(GenConfig(n=n, seed=s, sigma=sigma))
        path = simulate_sde(params, SimConfig(t_end=T + hmax, seed=sub_seed(s, 1)))
        train = path.slice(0, T + 1)
        truth = path.slice(T, None)
        valid = simulate_sde(params, SimConfig(t_end=n_valid, seed=sub_seed(s, 2)))
        out = {}
        for method in methods:
            best = None
            for lam in lambdas:
                est = FITTERS[method](train, lam, max_iter)
                score = validation_score(est, valid)
                if best is None or score < best[0]:
                    best = (score, lam, est)
            res = forecast_error(best[2], truth, horizons, seed=sub_seed(s, 3), sigma=fsig)
            out[method] = (res.fe, best[1], best[2])
        return out

    results = map_trials(one, range(trials), threads)
    fe = {m: np.array([r[m][0] for r in results]) for m in methods}
    lam = {m: [r[m][1] for r in results] for m in methods}
    return ForecastStudy(horizons, fe, lam, results)
