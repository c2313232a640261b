"""Network parameterization, auxiliary functions and the discretized loss.

The continuous-time model is

    dx = (L sigmoid(A x + u) - D x + c) dt + sigma dB

with ``L = diag(l)`` and ``D = diag(d)``.  Row ``i`` of ``A`` holds the incoming
links of node ``i``; the fitting routines work with ``B = A.T`` so that column
``i`` of ``B`` is the coefficient vector of node ``i``.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError


def _as_float_array(name, value, ndim):
    arr = np.array(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_finite(name, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{name} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Full system ``(A, u, l, d, c, sigma)``; arrays are read-only copies."""

    A: np.ndarray
    u: np.ndarray
    l: np.ndarray
    d: np.ndarray
    c: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        A = _as_float_array("A", self.A, 2)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        object.__setattr__(self, "A", A)
        for name in ("u", "l", "d", "c"):
            vec = _as_float_array(name, getattr(self, name), 1)
            if vec.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {vec.shape[0]}")
            object.__setattr__(self, name, vec)
        sigma = float(self.sigma)
        if not np.isfinite(sigma):
            raise NonFiniteError("sigma is not finite")
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def B(self):
        return self.A.T

    def replace(self, **changes):
        return replace(self, **changes)

    def is_stability_tagged(self):
        """True when ``l >= 0`` and ``d > 0`` componentwise."""
        return bool(np.all(self.l >= 0) and np.all(self.d > 0))


@dataclass(frozen=True, eq=False)
class Observations:
    """Time stamps ``t_1 < ... < t_{T+1}`` and the ``(T+1) x n`` state matrix."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = _as_float_array("times", self.times, 1)
        states = _as_float_array("states", self.states, 2)
        if states.shape[0] != times.shape[0]:
            raise ValueError(
                f"states has {states.shape[0]} rows but there are {times.shape[0]} time stamps"
            )
        if times.shape[0] < 2:
            raise ValueError("need at least two time points")
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            raise ValueError(f"times must be strictly increasing (violated at row {bad[0] + 1})")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def regular(cls, states, dt=1.0, t0=0.0):
        states = np.asarray(states, dtype=float)
        return cls(t0 + dt * np.arange(states.shape[0]), states)

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def T(self):
        """Number of increments (one less than the number of time points)."""
        return self.states.shape[0] - 1

    @property
    def dt(self):
        return np.diff(self.times)

    @property
    def X(self):
        """States at the left end of each increment, ``T x n``."""
        return self.states[:-1]

    @property
    def Y(self):
        """Finite-difference rates ``dx / dt``, ``T x n``."""
        return np.diff(self.states, axis=0) / self.dt[:, None]

    @property
    def w(self):
        return self.dt

    def slice(self, start=0, stop=None):
        """Sub-record over time points ``start:stop``."""
        return Observations(self.times[start:stop], self.states[start:stop])


class Penalty(str, Enum):
    L1 = "l1"
    L0 = "l0"
    L0L2 = "l0l2"
    CARDINALITY = "cardinality"


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Sparsity penalty on the coefficient matrix.

    ``weights`` optionally replaces the scalar ``lam`` entrywise; infinite
    weights forbid the corresponding coefficient.
    """

    kind: Penalty = Penalty.L1
    lam: float = 0.0
    eta: float = 0.0
    m: int = None
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", Penalty(self.kind))
        if self.lam < 0 or self.eta < 0:
            raise ValueError("lam and eta must be nonnegative")
        if self.kind is Penalty.CARDINALITY:
            if self.m is None or int(self.m) < 1:
                raise ValueError("cardinality penalty needs a positive integer m")
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if np.any(np.isnan(w)) or np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def lam_matrix(self, shape):
        if self.weights is None:
            return np.full(shape, float(self.lam))
        return np.broadcast_to(self.weights, shape)


def column_norm_weights(X, lam=1.0, no_self_loops=False):
    """Entrywise l1 weights ``lam * ||X[:, k]||_2`` for row ``k`` of ``B``.

    With ``no_self_loops`` the diagonal is set to ``+inf``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    norms = np.linalg.norm(X, axis=0)
    Lam = lam * np.repeat(norms[:, None], n, axis=1)
    if no_self_loops:
        np.fill_diagonal(Lam, np.inf)
    return Lam


def sigmoid(theta):
    """Logistic function ``1 / (1 + exp(-theta))``, overflow-free."""
    return expit(theta)


def xi(theta, y):
    """``sigmoid(theta) * (1 - sigmoid(theta)) * (sigmoid(theta) - y)``."""
    p = expit(theta)
    return p * (1.0 - p) * (p - y)


def k0_bound(y, w):
    """Curvature bound ``max_s (w_s / 16) (1 + (1 - 2 y_s)^2 / 2)``."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != w.shape:
        raise ValueError(f"length mismatch: y has shape {y.shape}, w has shape {w.shape}")
    if y.size == 0:
        return 0.0
    return float(np.max(w / 16.0 * (1.0 + (1.0 - 2.0 * y) ** 2 / 2.0)))


def drift_eval(params, x):
    """Noiseless drift ``L sigmoid(A x + u) - D x + c``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.n,):
        raise ValueError(f"x must have length {params.n}")
    check_finite("x", x)
    return params.l * expit(params.A @ x + params.u) - params.d * x + params.c


def _check_dims(params, obs):
    if params.n != obs.n:
        raise ValueError(f"params describe {params.n} nodes but observations have {obs.n}")


def node_losses(params, obs):
    """Per-node terms ``f_i`` of the discretized negative log-likelihood."""
    _check_dims(params, obs)
    X, Y, w = obs.X, obs.Y, obs.w
    out = np.empty(params.n)
    for i in range(params.n):
        theta = X @ params.A[i] + params.u[i]
        pred = params.l[i] * expit(theta) - params.d[i] * X[:, i] + params.c[i]
        out[i] = 0.5 * np.sum(w * (Y[:, i] - pred) ** 2)
    return out


def loss_f(params, obs):
    """Discretized loss ``f(A, u, l, d, c)`` (per-node summation)."""
    return float(np.sum(node_losses(params, obs)))


def loss_f_matrix(params, obs):
    """Matrix form ``0.5 ||W^{1/2}(Y - [pi(XB + 1u')L - XD + 1c'])||_F^2``."""
    _check_dims(params, obs)
    X, Y, w = obs.X, obs.Y, obs.w
    pred = expit(X @ params.B + params.u) * params.l - X * params.d + params.c
    R = np.sqrt(w)[:, None] * (Y - pred)
    return 0.5 * float(np.sum(R * R))


def residual_sigma(params, obs):
    """Diffusion scale implied by the residuals: ``sigma^2 = 2 f / (n T)``.

    Each weighted squared residual ``w r^2`` of an Euler increment has
    expectation ``sigma^2`` under the model.
    """
    return float(np.sqrt(2.0 * loss_f_matrix(params, obs) / (obs.n * obs.T)))


def network_loss(Xtil, Btil, l, d, c, X, Y, w):
    """Loss with the augmented design ``Xtil = [1 X]`` and ``Btil = [u; B]``."""
    pred = expit(Xtil @ Btil) * l - X * d + c
    return 0.5 * float(np.sum(w[:, None] * (Y - pred) ** 2))


def penalty_eval(B, spec):
    """Penalty value of ``B`` under ``spec``; ``inf`` signals infeasibility."""
    B = np.asarray(B, dtype=float)
    check_finite("B", B)
    lam = spec.lam_matrix(B.shape)
    nz = B != 0
    if np.any(np.isinf(lam) & nz):
        return np.inf
    lam_nz = np.where(nz, lam, 0.0)
    kind = spec.kind
    if kind is Penalty.L1:
        return float(np.sum(lam_nz * np.abs(B)))
    if kind is Penalty.L0:
        return float(np.sum(lam_nz**2 / 2.0))
    if kind is Penalty.L0L2:
        return float(np.sum(lam_nz**2 / (2.0 * (1.0 + spec.eta))) + spec.eta / 2.0 * np.sum(B**2))
    if np.count_nonzero(B) > spec.m:
        return np.inf
    return float(spec.eta / 2.0 * np.sum(B**2))
