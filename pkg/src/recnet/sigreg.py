"""Sparse sigmoidal regression for a single response.

Solves

    min 0.5 sum_s w_s (y_s - l sigmoid(xt_s' beta) - z_s' gamma)^2 + sum_k P(beta_k)

by alternating a weighted least-squares fit of ``(l, gamma)`` with a
majorized gradient step on ``beta`` followed by the thresholding rule paired
with ``P``.  Every iteration leaves the objective no larger than before.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateGainError
from .model import NetworkParams, Penalty, PenaltySpec, check_finite, k0_bound, xi

log = logging.getLogger(__name__)

PINV_RCOND = 1e-10

_RULES = {Penalty.L1: "soft", Penalty.L0: "hard", Penalty.L0L2: "hard-ridge"}


def threshold_apply(t, rule, lam, eta=0.0):
    """Soft, hard or hard-ridge thresholding of ``t`` at ``lam``.

    Survival is a strict inequality ``|t| > lam``; ``lam`` may be an array
    (entrywise thresholds, ``inf`` forbids).
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("threshold must be nonnegative")
    keep = np.abs(t) > lam
    if rule == "soft":
        with np.errstate(invalid="ignore"):
            return np.where(keep, np.sign(t) * (np.abs(t) - lam), 0.0)
    if rule == "hard":
        return np.where(keep, t, 0.0)
    if rule == "hard-ridge":
        return np.where(keep, t / (1.0 + eta), 0.0)
    raise ValueError(f"unknown thresholding rule {rule!r}")


def rescale_lambda(spec, K):
    """Thresholds ``(lam_j, eta_j)`` for which ``P(t; lam) / K = P(t; lam_j)``."""
    if not K > 0:
        raise ValueError("K must be positive")
    lam = spec.lam if spec.weights is None else spec.weights
    lam = np.asarray(lam, dtype=float)
    if spec.kind is Penalty.L1:
        return lam / K, 0.0
    if spec.kind is Penalty.L0:
        return lam / np.sqrt(K), 0.0
    if spec.kind is Penalty.L0L2:
        eta = spec.eta
        return lam / K * np.sqrt((eta + K) / (eta + 1.0)), eta / K
    raise ValueError(f"{spec.kind} has no thresholding rule in the univariate solver")


def wls_step(mu, Z, y, w, ridge=None, return_rank=False):
    """Weighted least squares of ``y`` on ``[mu Z]``; returns ``(l, gamma)``.

    ``ridge`` adds ``0.5 * ridge_k * coef_k^2`` per coefficient.  A
    rank-deficient design gets the minimum-norm solution (singular values
    below ``1e-10`` of the largest are dropped) and is logged; pass
    ``return_rank=True`` to also receive the numerical rank.
    """
    mu = np.asarray(mu, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(mu.shape[0], -1)
    design = np.column_stack([mu, Z])
    sw = np.sqrt(np.asarray(w, dtype=float))
    lhs = design * sw[:, None]
    rhs = np.asarray(y, dtype=float) * sw
    if ridge is not None:
        ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (design.shape[1],))
        lhs = np.vstack([lhs, np.diag(np.sqrt(ridge))])
        rhs = np.concatenate([rhs, np.zeros(design.shape[1])])
    coef, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=PINV_RCOND)
    if rank < design.shape[1]:
        log.debug("wls_step: rank %d < %d, using minimum-norm solution", rank, design.shape[1])
    if return_rank:
        return coef[0], coef[1:], rank
    return coef[0], coef[1:]


def spectral_norm_sq(M, max_iter=5000, tol=1e-14):
    """Squared spectral norm by power iteration on the smaller Gram matrix.

    Small matrices (a dimension <= 3) and runs that hit ``max_iter`` use the
    exact SVD value instead.
    """
    M = np.asarray(M, dtype=float)
    check_finite("M", M)
    if M.size == 0:
        return 0.0
    if min(M.shape) <= 3:
        return float(np.linalg.norm(M, 2) ** 2)
    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    p = G.shape[0]
    v = 1.0 + 0.1 * np.cos(np.arange(p) + 1.0)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        gv = G @ v
        new = float(v @ gv)
        norm = np.linalg.norm(gv)
        if norm == 0.0:
            break
        v = gv / norm
        if abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
    return float(np.linalg.norm(M, 2) ** 2)


@dataclass
class UniProblem:
    """Data of one univariate-response problem.

    ``Xtil`` is ``T x (p + 1)`` with a leading column of ones, ``Z`` is
    ``T x q``.  ``spec.weights`` (if set) has one entry per non-intercept
    column.  ``ridge`` is an optional length ``1 + q`` vector of ridge
    weights on ``(l, gamma)``.
    """

    Xtil: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    spec: PenaltySpec = field(default_factory=PenaltySpec)
    penalize_intercept: bool = False
    ridge: np.ndarray = None

    def __post_init__(self):
        self.Xtil = np.asarray(self.Xtil, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float).reshape(self.y.shape[0], -1)
        self.w = np.asarray(self.w, dtype=float)
        T = self.y.shape[0]
        if self.Xtil.shape[0] != T or self.Z.shape[0] != T or self.w.shape != (T,):
            raise ValueError("Xtil, y, Z and w must all have T rows")
        if np.any(self.w <= 0):
            raise ValueError("weights w must be positive")
        check_finite("problem data", self.Xtil, self.y, self.Z, self.w)

    @classmethod
    def for_node(cls, obs, i, spec, **kwargs):
        """Problem for node ``i``: ``y = dx_i/dt``, ``Z = [1, x_i]``, ``w = dt``."""
        X = obs.X
        T = X.shape[0]
        return cls(
            Xtil=np.column_stack([np.ones(T), X]),
            y=obs.Y[:, i],
            Z=np.column_stack([np.ones(T), X[:, i]]),
            w=obs.w,
            spec=spec,
            **kwargs,
        )


@dataclass
class UniFit:
    beta: np.ndarray
    l: float
    gamma: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    K_trace: list = field(default_factory=list)


def _penalty_lams(prob, p):
    """Per-coefficient penalty levels (length ``p + 1``; intercept first)."""
    spec = prob.spec
    if spec.weights is None:
        lam = np.full(p, float(spec.lam))
    else:
        lam = np.broadcast_to(np.asarray(spec.weights, dtype=float), (p,)).copy()
    lead = float(spec.lam) if prob.penalize_intercept else 0.0
    return np.concatenate([[lead], lam])


def _penalty_value(kind, beta, lam, eta):
    nz = beta != 0
    if np.any(np.isinf(lam) & nz):
        return np.inf
    lam = np.where(nz, lam, 0.0)
    if kind is Penalty.L1:
        return float(np.sum(lam * np.abs(beta)))
    if kind is Penalty.L0:
        return float(np.sum(lam**2) / 2.0)
    return float(np.sum(lam**2) / (2.0 * (1.0 + eta)) + eta / 2.0 * np.sum(beta[lam > 0] ** 2))


def uni_objective(prob, beta, l, gamma, scale=None):
    """Objective ``F`` of :func:`fit_univariate` at ``(beta, l, gamma)``.

    ``scale`` gives the column scaling used by the solver (see
    ``normalize``); the penalty is then applied to the scaled coefficients.
    """
    p = prob.Xtil.shape[1] - 1
    scale = np.ones(p + 1) if scale is None else scale
    resid = prob.y - l * expit(prob.Xtil @ beta) - prob.Z @ gamma
    F = 0.5 * float(np.sum(prob.w * resid**2))
    if prob.ridge is not None:
        coef = np.concatenate([[l], gamma])
        F += 0.5 * float(np.sum(np.asarray(prob.ridge) * coef**2))
    lams = _penalty_lams(prob, p)
    return F + _penalty_value(prob.spec.kind, beta * scale, lams, prob.spec.eta)


def fit_univariate(prob, beta0=None, max_iter=1000, tol=1e-8, normalize=True):
    """Prototype thresholding algorithm for one sigmoidal response.

    With ``normalize`` the non-intercept columns of ``Xtil`` are scaled to
    unit l2 norm before fitting and ``beta`` is mapped back afterwards; the
    penalty then acts on the coefficients of the normalized columns.
    ``beta0`` defaults to zero.  Stops when the relative objective decrease
    stays below ``tol`` for two consecutive iterations.
    """
    kind = prob.spec.kind
    if kind not in _RULES:
        raise ValueError(f"fit_univariate does not support {kind}")
    rule = _RULES[kind]
    Xt = prob.Xtil
    T, p1 = Xt.shape
    scale = np.ones(p1)
    if normalize:
        norms = np.linalg.norm(Xt[:, 1:], axis=0)
        scale[1:] = np.where(norms > 0, norms, 1.0)
    Xs = Xt / scale
    beta = np.zeros(p1) if beta0 is None else np.asarray(beta0, dtype=float) * scale
    if beta.shape != (p1,):
        raise ValueError(f"beta0 must have length {p1}")

    lams = _penalty_lams(prob, p1 - 1)
    free = lams == 0
    x_norm_sq = spectral_norm_sq(Xs)
    y, Z, w = prob.y, prob.Z, prob.w

    ridge = None if prob.ridge is None else np.asarray(prob.ridge, dtype=float)
    spec_j = PenaltySpec(kind, lam=0.0, eta=prob.spec.eta, weights=lams)

    def objective(mu, l, gamma, beta):
        # same value as uni_objective, reusing mu = sigmoid(Xs beta)
        resid = y - l * mu - Z @ gamma
        F = 0.5 * float(w @ (resid * resid))
        if ridge is not None:
            F += 0.5 * float(ridge @ (np.concatenate([[l], gamma]) ** 2))
        return F + _penalty_value(kind, beta, lams, prob.spec.eta)

    theta = Xs @ beta
    mu = expit(theta)
    l, gamma = wls_step(mu, Z, y, w, ridge=ridge)
    trace = [objective(mu, l, gamma, beta)]
    K_trace = []
    converged = False
    small = 0
    it = 0
    for it in range(1, max_iter + 1):
        l, gamma = wls_step(mu, Z, y, w, ridge=ridge)
        if l == 0.0:
            raise DegenerateGainError("weighted least squares returned l = 0")
        ytil = (y - Z @ gamma) / l
        wtil = l * l * w
        K = k0_bound(ytil, wtil) * x_norm_sq
        K_trace.append(K)
        grad = Xs.T @ (wtil * xi(theta, ytil))
        step = beta - grad / K
        lam_j, eta_j = rescale_lambda(spec_j, K)
        new = threshold_apply(step, rule, lam_j, eta_j)
        # zero-penalty coordinates take the plain gradient step
        beta = np.where(free, step, new)
        theta = Xs @ beta
        mu = expit(theta)
        F = objective(mu, l, gamma, beta)
        prev = trace[-1]
        trace.append(F)
        if not np.isfinite(F):
            raise FloatingPointError("objective became non-finite")
        if prev - F <= tol * (1.0 + abs(prev)):
            small += 1
            if small >= 2:
                converged = True
                break
        else:
            small = 0
    return UniFit(
        beta=beta / scale,
        l=float(l),
        gamma=np.asarray(gamma),
        objective_trace=trace,
        iterations=it,
        converged=converged,
        K_trace=K_trace,
    )


@dataclass
class NetworkUniFit:
    """Node-by-node prototype fit of a whole network."""

    params: NetworkParams
    fits: list

    @property
    def objective(self):
        return sum(f.objective_trace[-1] for f in self.fits)


def fit_network_univariate(obs, spec, no_self_loops=True, ridge=None, normalize=True,
                           max_iter=1000, tol=1e-8):
    """Fit every node with :func:`fit_univariate` (no stability guarantee).

    ``spec.weights``, if given, is an ``n x n`` matrix in ``B`` orientation
    (column ``i`` holds the weights of node ``i``).  Self-loops get an
    infinite weight when ``no_self_loops`` is set.
    """
    n = obs.n
    base = spec.lam_matrix((n, n)).copy()
    if no_self_loops:
        np.fill_diagonal(base, np.inf)
    A = np.zeros((n, n))
    u = np.zeros(n)
    l = np.zeros(n)
    d = np.zeros(n)
    c = np.zeros(n)
    fits = []
    for i in range(n):
        node_spec = PenaltySpec(spec.kind, lam=spec.lam, eta=spec.eta, weights=base[:, i])
        prob = UniProblem.for_node(obs, i, node_spec, ridge=ridge)
        fit = fit_univariate(prob, max_iter=max_iter, tol=tol, normalize=normalize)
        fits.append(fit)
        u[i] = fit.beta[0]
        A[i] = fit.beta[1:]
        l[i] = fit.l
        c[i] = fit.gamma[0]
        d[i] = -fit.gamma[1]
    return NetworkUniFit(NetworkParams(A=A, u=u, l=l, d=d, c=c), fits)
