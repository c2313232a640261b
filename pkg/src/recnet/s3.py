"""Stable-sparse sigmoidal estimation.

Minimizes the loss plus ``||Lam o B||_1`` (and ridges on ``l``, ``c``)
subject to ``l >= eps``, ``d >= 0`` and ``(L B' + B L)/2 <= 4D`` in the
semidefinite order, so every iterate certifies global exponential stability
of the fitted system.  The outer loop mirrors :func:`recnet.rns.fit_rns`
with a constrained least-squares step for ``(l, d, c)`` and a three-set
Dykstra iteration for ``B``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve_triangular
from scipy.special import expit

from .errors import ConvergenceError
from .model import NetworkParams, check_finite, column_norm_weights
from .rns import _data, _gram, majorizer
from .sigreg import PINV_RCOND, spectral_norm_sq

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# projections

def proj_l1(Phi, Lambda):
    """Entrywise soft threshold of ``Phi`` at ``Lambda``.

    If ``Phi`` has one more row than ``Lambda`` the first (intercept) row is
    passed through.  Infinite weights give exact zeros.
    """
    Phi = np.asarray(Phi, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    body = Phi[1:] if Phi.shape[0] == Lambda.shape[0] + 1 else Phi
    if body.shape != Lambda.shape:
        raise ValueError(f"Phi {Phi.shape} and Lambda {Lambda.shape} do not match")
    with np.errstate(invalid="ignore"):
        out = np.sign(body) * np.maximum(np.abs(body) - Lambda, 0.0)
    out = np.where(np.isinf(Lambda), 0.0, out)
    if body is Phi:
        return out
    return np.vstack([Phi[:1], out])


def lin_map(B, l):
    """``(L B' + B L) / 2`` for ``L = diag(l)``."""
    LBt = l[:, None] * B.T
    return 0.5 * (LBt + LBt.T)


def proj_linear(PhiB, PhiC, l):
    """Orthogonal projection of ``(PhiB, PhiC)`` onto ``{(B, C): C = (L B' + B L)/2}``."""
    PhiB = np.asarray(PhiB, dtype=float)
    PhiC = np.asarray(PhiC, dtype=float)
    l = np.asarray(l, dtype=float)
    Psi = PhiB + 0.5 * (PhiC + PhiC.T) * l[None, :]
    sq = l * l
    den = 2.0 + sq[:, None] + sq[None, :]
    B = (Psi * (2.0 + sq[:, None]) - Psi.T * np.outer(l, l)) / den
    return B, lin_map(B, l)


def proj_spectral(Phi, d):
    """Nearest symmetric ``C`` with ``C <= 4 diag(d)`` to ``Phi`` in Frobenius norm."""
    Phi = np.asarray(Phi, dtype=float)
    d = np.asarray(d, dtype=float)
    M = 0.5 * (Phi + Phi.T)
    M.flat[::M.shape[0] + 1] -= 4.0 * d
    s, U = np.linalg.eigh(M)
    C = (U * np.minimum(s, 0.0)) @ U.T
    C = 0.5 * (C + C.T)
    C.flat[::C.shape[0] + 1] += 4.0 * d
    return C


def stability_slack(B, l, d):
    """Largest eigenvalue of ``(L B' + B L)/2 - 4D`` (nonpositive when feasible)."""
    M = lin_map(B, l)
    M.flat[::M.shape[0] + 1] -= 4.0 * d
    return float(np.linalg.eigvalsh(M)[-1])


def scale_to_feasible(B, l, d):
    """Largest ``s`` in ``[0, 1]`` with ``s B`` feasible, and ``s B``.

    The constraint set is star-shaped around ``B = 0`` because the map is
    linear in ``B`` and ``-4D <= 0``.
    """
    C = lin_map(B, l)
    if stability_slack(B, l, d) <= 0.0:
        return 1.0, B
    if np.all(d > 0):
        r = 1.0 / np.sqrt(d)
        top = np.linalg.eigvalsh(C * np.outer(r, r))[-1]
        s = min(1.0, 4.0 / top) if top > 0 else 1.0
        s *= 1.0 - 1e-12
        for _ in range(60):
            M = s * C
            M.flat[::M.shape[0] + 1] -= 4.0 * d
            if np.linalg.eigvalsh(M)[-1] <= 0.0:
                return s, s * B
            s *= 1.0 - 1e-9 * 2.0 ** _
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        M = mid * C
        M.flat[::M.shape[0] + 1] -= 4.0 * d
        if np.linalg.eigvalsh(M)[-1] <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo, lo * B


def l1_norm(B, Lambda):
    """``||Lambda o B||_1`` with ``inf * 0 = 0``."""
    nz = B != 0
    if np.any(np.isinf(Lambda) & nz):
        return np.inf
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(nz, Lambda * np.abs(B), 0.0)))


def step4_surrogate(B, Xi, Lambda):
    """``0.5 ||B - Xi||_F^2 + ||Lambda o B||_1``."""
    return 0.5 * float(np.sum((B - Xi) ** 2)) + l1_norm(B, Lambda)


def dykstra_objective(B, C, Xi, Xi_C, Lambda):
    """Objective of the joint ``(B, C)`` problem solved by the inner loop."""
    return step4_surrogate(B, Xi, Lambda) + 0.5 * float(np.sum((C - Xi_C) ** 2))


@dataclass
class DykstraResult:
    B: np.ndarray
    u: np.ndarray
    sweeps: int
    converged: bool
    slack: float
    surrogate: float
    source: str = "dykstra"
    attempts: list = field(default_factory=list)


def _dykstra(Xi, C0, Lambda, l, d, inner_max, inner_tol):
    # the three projections inlined, with their constants hoisted out of the loop
    n = Xi.shape[0]
    forbid = np.isinf(Lambda)
    lam = np.where(forbid, 0.0, Lambda)
    sq = l * l
    den = 2.0 + sq[:, None] + sq[None, :]
    w_own = (2.0 + sq[:, None]) / den
    w_cross = np.outer(l, l) / den
    diag = slice(None, None, n + 1)
    four_d = 4.0 * d
    B3 = Xi.copy()
    C3 = C0.copy()
    P = np.zeros_like(Xi)
    QB = np.zeros_like(Xi)
    QC = np.zeros_like(C3)
    R = np.zeros_like(C3)
    converged = False
    k = 0
    for k in range(1, inner_max + 1):
        B_old, C_old = B3, C3
        T1 = B3 + P
        B1 = np.sign(T1) * np.maximum(np.abs(T1) - lam, 0.0)
        B1[forbid] = 0.0
        P = T1 - B1
        TB = B1 + QB
        TC = C3 + QC
        Psi = TB + 0.5 * (TC + TC.T) * l[None, :]
        B2 = Psi * w_own - Psi.T * w_cross
        LBt = l[:, None] * B2.T
        C2 = 0.5 * (LBt + LBt.T)
        QB = TB - B2
        QC = TC - C2
        B3 = B2
        T3 = C2 + R
        M = 0.5 * (T3 + T3.T)
        M.flat[diag] -= four_d
        s, U = np.linalg.eigh(M)
        C3 = (U * np.minimum(s, 0.0)) @ U.T
        C3 = 0.5 * (C3 + C3.T)
        C3.flat[diag] += four_d
        R = T3 - C3
        change = max(np.max(np.abs(B3 - B_old), initial=0.0), np.max(np.abs(C3 - C_old), initial=0.0))
        if change < inner_tol:
            converged = True
            break
    # all three iterates share one limit; the thresholded one carries exact zeros
    return B1, k, converged


def _polish(B, Lambda, l, d):
    # forbidden entries exactly zero, then the largest feasible radial scaling
    B = np.where(np.isinf(Lambda), 0.0, B)
    _, B = scale_to_feasible(B, l, d)
    return B


def dykstra_step4(Xi_til, Lambda, l, d, inner_max=500, inner_tol=1e-8, B_prev=None, C_init=None):
    """Constrained ``l1`` update of ``B`` from the gradient step ``Xi_til``.

    The intercept row of ``Xi_til`` becomes ``u``.  The inner loop starts
    from ``B3 = Xi`` and ``C3 = C_init`` (default ``(L Xi' + Xi L)/2``); its
    final soft-thresholded iterate (sparse) is made exactly feasible by
    radial scaling.  When ``B_prev`` (feasible) is given the result is
    guaranteed not to increase :func:`step4_surrogate` relative to it: if
    the first run does, the loop is rerun with ``C3 = (L B_prev' + B_prev L)/2``
    and, failing that, ``B_prev`` is returned.
    """
    Xi_til = np.asarray(Xi_til, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    l = np.asarray(l, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(l < 0) or np.any(d < 0):
        raise ValueError("l and d must be nonnegative")
    u = Xi_til[0].copy()
    Xi = Xi_til[1:]
    check_finite("Xi_til", Xi_til)
    inits = [("dykstra", lin_map(Xi, l) if C_init is None else np.asarray(C_init, dtype=float))]
    if B_prev is not None:
        B_prev = np.asarray(B_prev, dtype=float)
        f_prev = step4_surrogate(B_prev, Xi, Lambda)
        inits.append(("dykstra-prev", lin_map(B_prev, l)))
    attempts = []
    total = 0
    for name, C0 in inits:
        B, sweeps, ok = _dykstra(Xi, C0, Lambda, l, d, inner_max, inner_tol)
        total += sweeps
        B = _polish(B, Lambda, l, d)
        f = step4_surrogate(B, Xi, Lambda)
        attempts.append((name, f, sweeps, ok))
        if B_prev is None or f <= f_prev:
            return DykstraResult(B, u, total, ok, stability_slack(B, l, d), f, name, attempts)
    log.debug("dykstra_step4: no candidate improved on the previous iterate")
    return DykstraResult(B_prev.copy(), u, total, False, stability_slack(B_prev, l, d), f_prev,
                         "previous", attempts)


# ---------------------------------------------------------------------------
# constrained least squares for (l, d, c)

def _node_quadratics(mu, X, Y, w, eta_l, eta_c):
    """Per-node reduced quadratic in ``(l_i, d_i)`` after eliminating ``c_i``.

    Node objective: ``0.5 z' H_i z - g_i' z + k_i``, with ``c_i = a_i - b_i' z``.
    """
    G, h = _gram(mu, X, Y, w)
    G[:, 0, 0] += eta_l
    G[:, 2, 2] += eta_c
    k = 0.5 * (w @ (Y * Y))
    gcc = G[:, 2, 2]
    H = G[:, :2, :2] - G[:, :2, 2, None] * G[:, None, 2, :2] / gcc[:, None, None]
    g = h[:, :2] - G[:, :2, 2] * (h[:, 2] / gcc)[:, None]
    k = k - 0.5 * h[:, 2] ** 2 / gcc
    c_a = h[:, 2] / gcc
    c_b = G[:, :2, 2] / gcc[:, None]
    return H, g, k, c_a, c_b


def _quad_value(H, g, k, l, d):
    z = np.stack([l, d], axis=1)
    return float(np.sum(0.5 * np.einsum("na,nab,nb->n", z, H, z) - np.einsum("na,na->n", g, z) + k))


def _box_qp(H, g, eps):
    """Per-node minimizer of the reduced quadratic over ``l >= eps``, ``d >= 0``."""
    n = H.shape[0]
    l = np.empty(n)
    d = np.empty(n)
    for i in range(n):
        Hi, gi = H[i], g[i]
        cands = []
        z = np.linalg.lstsq(Hi, gi, rcond=PINV_RCOND)[0]
        if z[0] >= eps and z[1] >= 0:
            cands.append(z)
        dd = (gi[1] - Hi[1, 0] * eps) / Hi[1, 1] if Hi[1, 1] > 0 else 0.0
        cands.append(np.array([eps, max(dd, 0.0)]))
        ll = gi[0] / Hi[0, 0] if Hi[0, 0] > 0 else eps
        cands.append(np.array([max(ll, eps), 0.0]))
        cands.append(np.array([eps, 0.0]))
        vals = [0.5 * z @ Hi @ z - gi @ z for z in cands]
        best = cands[int(np.argmin(vals))]
        l[i], d[i] = best
    return l, d


def _slack_matrix(B, l, d):
    S = -lin_map(B, l)
    S.flat[::S.shape[0] + 1] += 4.0 * d
    return S


def _strict_point(B, eps, l_ref=None):
    n = B.shape[0]
    base = 1.0 if l_ref is None else max(1e-3, float(np.mean(np.abs(l_ref))))
    l = np.full(n, eps + base)
    C = lin_map(B, l)
    d = (np.sum(np.abs(C), axis=1) + 1.0) / 4.0
    return l, d


def _barrier_value(B, l, d, eps):
    """``(chol(S), -log det S - sum log(l - eps) - sum log d)`` with ``S = 4D - C(B, l)``.

    Returns ``None`` outside the strict interior.
    """
    if np.any(l - eps <= 0) or np.any(d <= 0):
        return None
    try:
        Lc = np.linalg.cholesky(_slack_matrix(B, l, d))
    except LinAlgError:
        return None
    return Lc, -2.0 * np.sum(np.log(np.diag(Lc))) - np.sum(np.log(l - eps)) - np.sum(np.log(d))


def _barrier_derivatives(B, l, d, eps, Lc):
    """Gradient and Hessian of the barrier in ``z = (l, d)``, and ``chol(S)^-1``.

    With ``V = S^-1``, ``P = V B`` and ``Q = B' V B`` the log-det part has
    gradient ``(diag P, -4 diag V)`` and Hessian blocks
    ``0.5 (P' o P + V o Q)``, ``-4 (V o P)'`` and ``16 V o V``.
    """
    n = B.shape[0]
    idx = np.arange(n)
    Li = solve_triangular(Lc, np.eye(n), lower=True)
    V = Li.T @ Li
    P = V @ B
    Q = B.T @ P
    grad = np.concatenate([np.diag(P) - 1.0 / (l - eps), -4.0 * np.diag(V) - 1.0 / d])
    hess = np.empty((2 * n, 2 * n))
    hess[:n, :n] = 0.5 * (P.T * P + V * Q)
    hess[:n, n:] = (-4.0 * V * P).T
    hess[n:, :n] = -4.0 * V * P
    hess[n:, n:] = 16.0 * V * V
    hess[idx, idx] += 1.0 / (l - eps) ** 2
    hess[n + idx, n + idx] += 1.0 / d**2
    return grad, hess, Li


def _barrier_solve(H, g, k, B, eps, z0, gap_tol=1e-8, max_newton=100):
    """Log-barrier Newton method for the reduced problem with the matrix inequality."""
    n = B.shape[0]
    idx = np.arange(n)
    Hq = np.zeros((2 * n, 2 * n))
    Hq[idx, idx] = H[:, 0, 0]
    Hq[idx, n + idx] = H[:, 0, 1]
    Hq[n + idx, idx] = H[:, 1, 0]
    Hq[n + idx, n + idx] = H[:, 1, 1]
    gq = np.concatenate([g[:, 0], g[:, 1]])
    kq = float(np.sum(k))

    def quad(z):
        return 0.5 * z @ Hq @ z - gq @ z + kq

    z = np.concatenate(z0)
    state = _barrier_value(B, z[:n], z[n:], eps)
    if state is None:
        raise ConvergenceError("barrier start point is not strictly feasible")
    n_con = 3 * n
    t = n_con / max(1.0, abs(quad(z)))
    newton_total = 0
    stalled = False
    while not stalled:
        for _ in range(max_newton):
            Lc, bval = state
            l, d = z[:n], z[n:]
            grad_b, hess_b, Li = _barrier_derivatives(B, l, d, eps, Lc)
            grad = t * (Hq @ z - gq) + grad_b
            hess = t * Hq + hess_b
            try:
                step = -np.linalg.solve(hess, grad)
            except LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = -grad @ step
            newton_total += 1
            if not dec > 1e-10:
                break
            # largest step keeping every constraint strictly satisfied
            dl, dd = step[:n], step[n:]
            dS = -lin_map(B, dl)
            dS[idx, idx] += 4.0 * dd
            lam_min = np.linalg.eigvalsh(Li @ dS @ Li.T)[0]
            a_max = np.inf if lam_min >= 0 else -1.0 / lam_min
            for v, s in ((l - eps, dl), (d, dd)):
                neg = s < 0
                if neg.any():
                    a_max = min(a_max, float(np.min(-v[neg] / s[neg])))
            a = min(1.0, 0.99 * a_max)
            # change of the quadratic in closed form: no cancellation at large t
            lin = t * ((Hq @ z - gq) @ step)
            curv = 0.5 * t * (step @ Hq @ step)
            for _ in range(40):
                z_new = z + a * step
                st = _barrier_value(B, z_new[:n], z_new[n:], eps)
                if st is not None and a * lin + a * a * curv + st[1] - bval <= -0.25 * a * dec:
                    break
                a *= 0.5
            else:
                stalled = True
                break
            z, state = z_new, st
        if n_con / t <= gap_tol * max(1.0, abs(quad(z))) or t > 1e18:
            break
        t *= 50.0
    return z[:n], z[n:], newton_total


@dataclass
class WlsResult:
    l: np.ndarray
    d: np.ndarray
    c: np.ndarray
    objective: float
    method: str


def constrained_wls(mu, obs, B_prev, eta_l=0.0, eta_c=0.0, epsilon=0.0, start=None):
    """``(l, d, c)`` under ``l >= epsilon``, ``d >= 0``, ``(L B' + B L)/2 <= 4D``.

    Objective: ``0.5 ||W^(1/2)(Y - mu L + X D - 1 c')||_F^2`` plus
    ``eta_l/2 ||l||^2 + eta_c/2 ||c||^2``.  If the box-constrained optimum
    already satisfies the matrix inequality it is returned; otherwise a
    barrier method is used.  ``start = (l, d)``, when feasible, bounds the
    returned objective from above (``c`` is always profiled out).
    """
    X, Y, w = obs.X, obs.Y, obs.w
    return _constrained_wls(np.asarray(mu, dtype=float), X, Y, w, np.asarray(B_prev, dtype=float),
                            eta_l, eta_c, epsilon, start)


def _constrained_wls(mu, X, Y, w, B, eta_l, eta_c, eps, start):
    H, g, k, c_a, c_b = _node_quadratics(mu, X, Y, w, eta_l, eta_c)

    def finish(l, d, method):
        c = c_a - np.einsum("na,na->n", c_b, np.stack([l, d], axis=1))
        return WlsResult(l, d, c, _quad_value(H, g, k, l, d), method)

    l, d = _box_qp(H, g, eps)
    if stability_slack(B, l, d) <= 0.0:
        return finish(l, d, "box")
    ref = None
    if start is not None:
        l0, d0 = (np.asarray(v, dtype=float) for v in start)
        if np.all(l0 >= eps) and np.all(d0 >= 0) and stability_slack(B, l0, d0) <= 0.0:
            ref = (l0, d0)
    lq, dq = _strict_point(B, eps, None if ref is None else ref[0])
    z0 = (lq, dq) if ref is None else (0.5 * (ref[0] + lq), 0.5 * (ref[1] + dq))
    try:
        lb, db, _ = _barrier_solve(H, g, k, B, eps, z0)
        cand = finish(lb, db, "barrier")
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        if ref is None:
            raise ConvergenceError(f"constrained least squares failed: {exc}") from exc
        cand = None
    if ref is not None:
        keep = finish(ref[0], ref[1], "previous")
        if cand is None or not cand.objective <= keep.objective:
            return keep
    return cand


# ---------------------------------------------------------------------------
# outer loop

@dataclass(frozen=True)
class S3Config:
    """Settings of :func:`fit_s3`.

    ``Lambda`` (``n x n``, orientation of ``B``) overrides the default
    weights ``lam * ||X[:, k]||_2`` on row ``k``; with ``no_self_loops`` the
    diagonal weight is infinite.
    """

    lam: float = 1.0
    Lambda: np.ndarray = None
    no_self_loops: bool = True
    eta_l: float = 1e-4
    eta_c: float = 1e-2
    epsilon: float = 0.0
    inner_max: int = 500
    inner_tol: float = 1e-8
    max_iter: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if self.lam < 0 or self.epsilon < 0 or self.eta_l < 0 or self.eta_c < 0:
            raise ValueError("lam, epsilon and ridge weights must be nonnegative")
        if self.Lambda is not None and np.any(np.asarray(self.Lambda) < 0):
            raise ValueError("Lambda must be nonnegative")

    def weights(self, X):
        if self.Lambda is not None:
            Lam = np.array(self.Lambda, dtype=float)
            if Lam.shape != (X.shape[1], X.shape[1]):
                raise ValueError(f"Lambda must have shape {(X.shape[1], X.shape[1])}")
            if self.no_self_loops:
                np.fill_diagonal(Lam, np.inf)
            return Lam
        return column_norm_weights(X, self.lam, self.no_self_loops)


@dataclass
class S3Fit:
    B: np.ndarray
    u: np.ndarray
    l: np.ndarray
    d: np.ndarray
    c: np.ndarray
    objective_trace: list
    slack_trace: list
    min_l_trace: list
    min_d_trace: list
    surrogate_pairs: list
    inner_sweeps: list
    iterations: int
    converged: bool

    def params(self, sigma=0.0):
        return NetworkParams(A=self.B.T, u=self.u, l=self.l, d=self.d, c=self.c, sigma=sigma)


def s3_objective(Xtil, X, Y, w, Btil, l, d, c, Lam, eta_l, eta_c):
    pred = expit(Xtil @ Btil) * l - X * d + c
    loss = 0.5 * float(np.sum(w[:, None] * (Y - pred) ** 2))
    return loss + l1_norm(Btil[1:], Lam) + 0.5 * (eta_l * float(l @ l) + eta_c * float(c @ c))


def fit_s3(obs, cfg, B0til=None):
    """Stable-sparse network fit; every iterate satisfies the stability constraints."""
    n = obs.n
    Xtil, X, Y, w = _data(obs)
    Lam = cfg.weights(X)
    Btil = np.zeros((n + 1, n)) if B0til is None else np.array(B0til, dtype=float)
    if Btil.shape != (n + 1, n):
        raise ValueError(f"B0til must have shape {(n + 1, n)}")
    check_finite("B0til", Btil)
    Btil[1:][np.isinf(Lam)] = 0.0
    x_norm_sq = spectral_norm_sq(Xtil)
    eps = cfg.epsilon

    res = _constrained_wls(expit(Xtil @ Btil), X, Y, w, Btil[1:], cfg.eta_l, cfg.eta_c, eps, None)
    l, d, c = res.l, res.d, res.c
    trace = [s3_objective(Xtil, X, Y, w, Btil, l, d, c, Lam, cfg.eta_l, cfg.eta_c)]
    slacks = [stability_slack(Btil[1:], l, d)]
    min_l = [float(l.min())]
    min_d = [float(d.min())]
    pairs = []
    sweeps = []
    converged = False
    small = 0
    j = 0
    for j in range(1, cfg.max_iter + 1):
        B = Btil[1:]
        res = _constrained_wls(expit(Xtil @ Btil), X, Y, w, B, cfg.eta_l, cfg.eta_c, eps, (l, d))
        l, d, c = res.l, res.d, res.c
        Xi_til, K = majorizer(Xtil, X, Y, w, Btil, l, d, c, x_norm_sq)
        # rescale columns by sqrt(K) so the inner problem has unit curvature
        sk = np.sqrt(K)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_sk = np.where(sk > 0, 1.0 / sk, 0.0)
            Lam_s = np.where(sk > 0, Lam * inv_sk, np.inf)
        l_s = l * inv_sk
        Xi_s = Xi_til[1:] * sk
        step = dykstra_step4(
            np.vstack([Xi_til[0], Xi_s]), Lam_s, l_s, d,
            inner_max=cfg.inner_max, inner_tol=cfg.inner_tol, B_prev=B * sk,
        )
        B_new = step.B * inv_sk
        pairs.append((step.surrogate, step4_surrogate(B * sk, Xi_s, Lam_s)))
        sweeps.append(step.sweeps)
        Btil = np.vstack([step.u, B_new])
        F = s3_objective(Xtil, X, Y, w, Btil, l, d, c, Lam, cfg.eta_l, cfg.eta_c)
        if not np.isfinite(F):
            raise FloatingPointError(f"objective became non-finite at iteration {j}")
        prev = trace[-1]
        trace.append(F)
        slacks.append(stability_slack(B_new, l, d))
        min_l.append(float(l.min()))
        min_d.append(float(d.min()))
        if prev - F <= cfg.tol * (1.0 + abs(prev)):
            small += 1
            if small >= 2:
                converged = True
                break
        else:
            small = 0
    return S3Fit(
        B=Btil[1:].copy(), u=Btil[0].copy(), l=l, d=d, c=c,
        objective_trace=trace, slack_trace=slacks, min_l_trace=min_l, min_d_trace=min_d,
        surrogate_pairs=pairs, inner_sweeps=sweeps, iterations=j, converged=converged,
    )
