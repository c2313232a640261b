"""Recurrent network screening: cardinality-constrained multivariate fitting.

The coefficient matrix is handled in the transposed orientation ``B = A.T``
(column ``i`` holds the regulators of node ``i``).  Each outer iteration
refits ``(l, d, c)`` by weighted least squares, builds a per-column
quadratic majorizer of the loss in ``[u; B]`` and minimizes it under the
current cardinality bound with a ridge-scaled hard threshold.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .model import NetworkParams, check_finite, xi
from .sigreg import PINV_RCOND, spectral_norm_sq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkConstraints:
    """Entries of ``B`` that must be kept or must be zero.

    Pairs ``(k, i)`` index ``B[k, i]``, the link from node ``k`` to node
    ``i``; use :meth:`from_links` to build from ``A``-oriented pairs.
    """

    maintained: frozenset = frozenset()
    forbidden: frozenset = frozenset()
    no_self_loops: bool = True

    def __post_init__(self):
        maintained = frozenset(tuple(int(v) for v in p) for p in self.maintained)
        forbidden = frozenset(tuple(int(v) for v in p) for p in self.forbidden)
        object.__setattr__(self, "maintained", maintained)
        object.__setattr__(self, "forbidden", forbidden)
        both = maintained & forbidden
        if both:
            raise ValueError(f"links both maintained and forbidden: {sorted(both)}")
        if self.no_self_loops:
            loops = [p for p in maintained if p[0] == p[1]]
            if loops:
                raise ValueError(f"self-loops {sorted(loops)} cannot be maintained")

    @classmethod
    def from_links(cls, maintained=(), forbidden=(), no_self_loops=True):
        """Build from ``(i, j)`` pairs meaning ``A[i, j] != 0`` (link ``j -> i``)."""
        return cls(
            frozenset((j, i) for i, j in maintained),
            frozenset((j, i) for i, j in forbidden),
            no_self_loops,
        )

    def transposed(self):
        return LinkConstraints(
            frozenset((b, a) for a, b in self.maintained),
            frozenset((b, a) for a, b in self.forbidden),
            self.no_self_loops,
        )

    def masks(self, n):
        """Boolean ``n x n`` masks ``(maintained, forbidden)``; self-loops count as forbidden."""
        keep = np.zeros((n, n), dtype=bool)
        drop = np.zeros((n, n), dtype=bool)
        for name, mask, pairs in (("maintained", keep, self.maintained),
                                  ("forbidden", drop, self.forbidden)):
            for a, b in pairs:
                if not (0 <= a < n and 0 <= b < n):
                    raise ValueError(f"{name} link {(a, b)} out of range for n={n}")
                mask[a, b] = True
        if self.no_self_loops:
            np.fill_diagonal(drop, True)
        return keep, drop

    def n_eligible(self, n):
        keep, drop = self.masks(n)
        return int(np.sum(~drop))


@dataclass(frozen=True)
class RnsConfig:
    """Settings of :func:`fit_rns`.

    ``max_iter=None`` runs until the cooling schedule reaches ``m`` plus
    another 1000 iterations at most.
    """

    m: int
    eta: float = 1e-3
    eta_l: float = 1e-4
    eta_c: float = 1e-2
    alpha: float = 0.01
    max_iter: int = None
    tol: float = 1e-8
    constraints: LinkConstraints = field(default_factory=LinkConstraints)
    cooling: bool = True

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("m must be a positive integer")
        if min(self.eta, self.eta_l, self.eta_c) < 0:
            raise ValueError("ridge parameters must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if len(self.constraints.maintained) > self.m:
            raise ValueError("m is smaller than the number of maintained links")


@dataclass
class RnsFit:
    B: np.ndarray
    u: np.ndarray
    l: np.ndarray
    d: np.ndarray
    c: np.ndarray
    objective_trace: list
    m_schedule: list
    support_sizes: list
    supports: list
    iterations: int
    converged: bool

    @property
    def plateau_start(self):
        """Index into ``objective_trace`` from which the bound stays at its final value."""
        sched = self.m_schedule
        k = len(sched)
        while k > 0 and sched[k - 1] == sched[-1]:
            k -= 1
        return k

    def params(self, sigma=0.0):
        return NetworkParams(A=self.B.T, u=self.u, l=self.l, d=self.d, c=self.c, sigma=sigma)


def quantile_threshold(M, m, eta=0.0):
    """Keep the ``m`` largest-magnitude entries of ``M`` divided by ``1 + eta``.

    This is the exact minimizer of ``0.5 ||M - B||_F^2 + eta/2 ||B||_F^2``
    subject to ``||B||_0 <= m``.  Ties are broken by position (row-major).
    """
    M = np.asarray(M, dtype=float)
    check_finite("M", M)
    m = int(m)
    if not 1 <= m <= M.size:
        raise ValueError(f"m must lie in [1, {M.size}], got {m}")
    flat = np.abs(M).ravel()
    order = np.argsort(-flat, kind="stable")
    keep = np.zeros(M.size, dtype=bool)
    keep[order[:m]] = True
    return np.where(keep.reshape(M.shape), M / (1.0 + eta), 0.0)


def constrained_threshold(Xi, m, constraints, scale=None):
    """Threshold matrix ``zeta`` for a cardinality bound with link constraints.

    Forbidden entries of ``Xi`` are zeroed and get an infinite threshold;
    maintained entries get threshold zero and use up part of the budget
    ``m``.  The remaining ``m - |maintained|`` slots go to the eligible
    entries ranked by ``|Xi| * scale`` (``scale`` is broadcast against
    ``Xi``, default ones); their threshold is the midpoint of the scores
    ranked just inside and just outside the budget, expressed back in units
    of ``Xi``.  Returns ``(zeta, Xi_masked)``; ``|Xi_masked| > zeta``
    selects the survivors.
    """
    Xi = np.asarray(Xi, dtype=float)
    check_finite("Xi", Xi)
    n, p = Xi.shape
    keep, drop = constraints.masks(max(n, p))
    keep, drop = keep[:n, :p], drop[:n, :p]
    scale = np.ones_like(Xi) if scale is None else np.broadcast_to(np.asarray(scale, float), Xi.shape)
    if np.any(scale < 0):
        raise ValueError("scale must be nonnegative")
    m_free = int(m) - int(keep.sum())
    if m_free < 0:
        raise ValueError("m is smaller than the number of maintained links")
    masked = np.where(drop, 0.0, Xi)
    eligible = ~(keep | drop)
    scores = np.sort((np.abs(masked) * scale)[eligible])[::-1]
    if m_free == 0:
        level = np.inf
    elif scores.size <= m_free:
        level = 0.0
    else:
        level = 0.5 * (scores[m_free - 1] + scores[m_free])
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(scale > 0, level / scale, np.inf)
    zeta = np.where(np.isnan(zeta), np.inf, zeta)
    zeta[keep] = 0.0
    zeta[drop] = np.inf
    return zeta, masked


def cooling_schedule(j, n, m_target, alpha=0.01):
    """``max(m_target, ceil(2 n (n - 1) / (1 + exp(alpha j))))``."""
    if j < 0:
        raise ValueError("iteration index must be nonnegative")
    z = alpha * j
    if z > 700:
        return int(m_target)
    return max(int(m_target), int(math.ceil(2.0 * n * (n - 1) / (1.0 + math.exp(z)))))


def plateau_iteration(n, m_target, alpha=0.01):
    """First iteration at which :func:`cooling_schedule` equals ``m_target``."""
    top = 2.0 * n * (n - 1)
    if m_target >= top / 2.0:
        return 1
    j = max(1, int(math.floor(math.log(top / m_target - 1.0) / alpha)) - 1)
    while cooling_schedule(j, n, m_target, alpha) > m_target:
        j += 1
    return j


def _gram(mu, X, Y, w):
    """Per-node weighted Gram matrices of ``[mu, -x, 1]`` and cross products with ``Y``."""
    wm, wx = w[:, None] * mu, w[:, None] * X
    n = X.shape[1]
    G = np.empty((n, 3, 3))
    G[:, 0, 0] = np.sum(wm * mu, axis=0)
    G[:, 0, 1] = G[:, 1, 0] = -np.sum(wm * X, axis=0)
    G[:, 0, 2] = G[:, 2, 0] = np.sum(wm, axis=0)
    G[:, 1, 1] = np.sum(wx * X, axis=0)
    G[:, 1, 2] = G[:, 2, 1] = -np.sum(wx, axis=0)
    G[:, 2, 2] = np.sum(w)
    h = np.stack([np.sum(wm * Y, axis=0), -np.sum(wx * Y, axis=0), w @ Y], axis=1)
    return G, h


def node_wls(mu, X, Y, w, eta_l=0.0, eta_c=0.0):
    """Per-node weighted least squares for ``(l, d, c)`` given activations ``mu``.

    Node ``i`` regresses ``Y[:, i]`` on ``[mu[:, i], -X[:, i], 1]`` with ridge
    weights ``eta_l`` on ``l`` and ``eta_c`` on ``c``.  Rank-deficient
    designs get the minimum-norm solution.
    """
    G, h = _gram(mu, X, Y, w)
    G[:, 0, 0] += eta_l
    G[:, 2, 2] += eta_c
    # pseudoinverse of the Gram matrix; the cutoff is squared because the
    # eigenvalues of G are the squared singular values of the weighted design
    s, U = np.linalg.eigh(G)
    cut = PINV_RCOND**2 * s[:, -1:]
    with np.errstate(divide="ignore"):
        inv = np.where(s > cut, 1.0 / s, 0.0)
    proj = (np.swapaxes(U, 1, 2) @ h[:, :, None])[:, :, 0] * inv
    coef = (U @ proj[:, :, None])[:, :, 0]
    return coef[:, 0], coef[:, 1], coef[:, 2]


def _data(obs):
    X = obs.X
    T = X.shape[0]
    Xtil = np.column_stack([np.ones(T), X])
    return Xtil, X, obs.Y, obs.w


def rns_objective(Xtil, X, Y, w, Btil, l, d, c, eta, eta_l, eta_c):
    """Loss plus ``eta/2 ||B||^2 + eta_l/2 ||l||^2 + eta_c/2 ||c||^2``."""
    pred = expit(Xtil @ Btil) * l - X * d + c
    loss = 0.5 * float(np.sum(w[:, None] * (Y - pred) ** 2))
    return loss + 0.5 * (eta * float(np.sum(Btil[1:] ** 2))
                         + eta_l * float(l @ l) + eta_c * float(c @ c))


def majorizer(Xtil, X, Y, w, Btil, l, d, c, x_norm_sq):
    """Gradient step ``Xi_til`` and per-column curvature ``K`` at ``Btil``.

    Columns with ``l_i = 0`` do not enter the loss; they get ``K_i = 0`` and
    ``Xi_til[:, i] = Btil[:, i]``.
    """
    with np.errstate(divide="ignore"):
        linv = np.where(l != 0, 1.0 / l, 0.0)
    Ytil = (Y + X * d - c) * linv
    Wtil = w[:, None] * (l * l)
    K = np.max(Wtil / 16.0 * (1.0 + (1.0 - 2.0 * Ytil) ** 2 / 2.0), axis=0) * x_norm_sq
    grad = Xtil.T @ (Wtil * xi(Xtil @ Btil, Ytil))
    with np.errstate(divide="ignore", invalid="ignore"):
        Kinv = np.where(K > 0, 1.0 / K, 0.0)
    return Btil - grad * Kinv, K


def fit_rns(obs, cfg, B0til=None):
    """Cardinality-constrained network fit with a cooling schedule on ``m``."""
    n = obs.n
    cons = cfg.constraints
    eligible = cons.n_eligible(n)
    if cfg.m > eligible:
        raise ValueError(f"m={cfg.m} exceeds the {eligible} admissible links")
    Xtil, X, Y, w = _data(obs)
    Btil = np.zeros((n + 1, n)) if B0til is None else np.array(B0til, dtype=float)
    if Btil.shape != (n + 1, n):
        raise ValueError(f"B0til must have shape {(n + 1, n)}")
    check_finite("B0til", Btil)
    keep, drop = cons.masks(n)
    Btil[1:][drop] = 0.0
    x_norm_sq = spectral_norm_sq(Xtil)

    plateau = plateau_iteration(n, cfg.m, cfg.alpha) if cfg.cooling else 1
    max_iter = plateau + 1000 if cfg.max_iter is None else int(cfg.max_iter)
    if max_iter < plateau:
        log.warning("max_iter=%d ends before the cooling schedule reaches m (iteration %d)",
                     max_iter, plateau)

    l, d, c = node_wls(expit(Xtil @ Btil), X, Y, w, cfg.eta_l, cfg.eta_c)
    F = rns_objective(Xtil, X, Y, w, Btil, l, d, c, cfg.eta, cfg.eta_l, cfg.eta_c)
    trace = [F]
    m_sched = [np.count_nonzero(Btil[1:])]
    sizes = [np.count_nonzero(Btil[1:])]
    supports = [Btil[1:] != 0]
    converged = False
    small = 0
    j = 0
    for j in range(1, max_iter + 1):
        m_j = cooling_schedule(j, n, cfg.m, cfg.alpha) if cfg.cooling else cfg.m
        m_j = min(m_j, eligible)
        l, d, c = node_wls(expit(Xtil @ Btil), X, Y, w, cfg.eta_l, cfg.eta_c)
        Xi_til, K = majorizer(Xtil, X, Y, w, Btil, l, d, c, x_norm_sq)
        u = Xi_til[0]
        Xi = Xi_til[1:]
        # exact surrogate minimizer under unequal K: rank by K|xi|/sqrt(K + eta)
        with np.errstate(invalid="ignore"):
            score_scale = np.where(K > 0, K / np.sqrt(K + cfg.eta), 0.0)
        zeta, Xi = constrained_threshold(Xi, m_j, cons, scale=score_scale[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(K > 0, K / (K + cfg.eta), 0.0)
        B = np.where(np.abs(Xi) > zeta, Xi * shrink, 0.0)
        B[:, K == 0] = 0.0
        Btil = np.vstack([u, B])
        F_new = rns_objective(Xtil, X, Y, w, Btil, l, d, c, cfg.eta, cfg.eta_l, cfg.eta_c)
        if not np.isfinite(F_new):
            raise FloatingPointError(f"objective became non-finite at iteration {j}")
        prev = trace[-1]
        trace.append(F_new)
        m_sched.append(m_j)
        sizes.append(int(np.count_nonzero(B)))
        supports.append(B != 0)
        if j >= plateau:
            if prev - F_new <= cfg.tol * (1.0 + abs(prev)):
                small += 1
                if small >= 2:
                    converged = True
                    break
            else:
                small = 0
    B = Btil[1:]
    return RnsFit(
        B=B.copy(), u=Btil[0].copy(), l=l, d=d, c=c,
        objective_trace=trace, m_schedule=m_sched, support_sizes=sizes,
        supports=supports, iterations=j, converged=converged,
    )
