"""Lyapunov-type stability conditions and the equilibrium of the noiseless system."""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError
from .model import check_finite, drift_eval


@dataclass(frozen=True)
class StabilityReport:
    """Verdicts for conditions A1 (d > 0), A2 (l >= 0), A3a and A3b.

    The two margins are signed: A3a holds when ``a3a_margin < 0`` and A3b
    when ``a3b_margin < 0``.
    """

    a1_ok: bool
    a2_ok: bool
    a3a_margin: float
    a3b_margin: float

    @property
    def a3a_ok(self):
        return self.a3a_margin < 0

    @property
    def a3b_ok(self):
        return self.a3b_margin < 0

    @property
    def stable(self):
        """Sufficient condition for global exponential stability."""
        return self.a1_ok and self.a2_ok and (self.a3a_ok or self.a3b_ok)

    def to_dict(self):
        return {
            "a1_ok": self.a1_ok,
            "a2_ok": self.a2_ok,
            "a3a_ok": self.a3a_ok,
            "a3b_ok": self.a3b_ok,
            "a3a_margin": self.a3a_margin,
            "a3b_margin": self.a3b_margin,
            "stable": self.stable,
        }


def a3a_margin(A, l, d):
    """Spectral abscissa of ``L A - 4 D``."""
    M = l[:, None] * A - 4.0 * np.diag(d)
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigenvalues of LA - 4D did not converge (cond={np.linalg.cond(M):.3e})"
        ) from exc
    return float(np.max(eig.real))


def a3b_margin(A, l, d):
    """Largest eigenvalue of ``(L A + A' L) / 2 - 4 D``."""
    LA = l[:, None] * A
    M = 0.5 * (LA + LA.T) - 4.0 * np.diag(d)
    try:
        eig = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigenvalues of the symmetrized matrix did not converge (cond={np.linalg.cond(M):.3e})"
        ) from exc
    return float(eig[-1])


def check_stability(params):
    A, l, d = params.A, params.l, params.d
    return StabilityReport(
        a1_ok=bool(np.all(d > 0)),
        a2_ok=bool(np.all(l >= 0)),
        a3a_margin=a3a_margin(A, l, d),
        a3b_margin=a3b_margin(A, l, d),
    )


def find_equilibrium(params, tol=1e-12, max_iter=10000, rho=0.5, x0=None):
    """Root of the drift by damped fixed-point iteration.

    Iterates ``x <- (1 - rho) x + rho phi(x)`` with
    ``phi(x) = D^{-1} (L sigmoid(A x + u) + c)``, starting from ``phi(0)``
    unless ``x0`` is given, then polishes with guarded Newton steps.  Raises
    :class:`ConvergenceError` if ``||drift||_inf < tol`` is not reached.
    """
    d = params.d
    if np.any(d <= 0):
        raise ValueError("find_equilibrium requires d > 0")
    A, u, l, c = params.A, params.u, params.l, params.c

    def phi(x):
        return (l * expit(A @ x + u) + c) / d

    x = phi(np.zeros(params.n)) if x0 is None else np.array(x0, dtype=float)
    check_finite("x0", x)
    res = np.max(np.abs(drift_eval(params, x)))
    for _ in range(max_iter):
        if res < tol:
            return x
        x = (1.0 - rho) * x + rho * phi(x)
        res = np.max(np.abs(drift_eval(params, x)))
        if res < 1e-6:
            break
    # Newton refinement; a step is kept only if it lowers the residual
    for _ in range(50):
        if res < tol:
            return x
        p = expit(A @ x + u)
        J = (l * p * (1 - p))[:, None] * A - np.diag(d)
        try:
            step = np.linalg.solve(J, -drift_eval(params, x))
        except np.linalg.LinAlgError:
            break
        x_new = x + step
        res_new = np.max(np.abs(drift_eval(params, x_new)))
        if not res_new < res:
            break
        x, res = x_new, res_new
    if res < tol:
        return x
    raise ConvergenceError(
        f"equilibrium search stalled at residual {res:.3e}; retry with a smaller rho"
    )
