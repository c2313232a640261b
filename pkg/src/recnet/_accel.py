"""Hot kernels: numba-compiled with a pure-numpy fallback.

The backend is picked once at import time.  Setting ``RECNET_DISABLE_NUMBA=1``
(or running without numba installed) selects the numpy path.  Both paths
consume the same pre-drawn noise array, so they integrate the same sample
path and agree to rounding.
"""
import contextlib
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def _numba_disabled_by_env():
    flag = os.environ.get("RECNET_DISABLE_NUMBA", "").strip().lower()
    return flag in ("1", "true", "yes", "on")


BACKEND = "numba" if HAVE_NUMBA and not _numba_disabled_by_env() else "numpy"


def euler_numpy(x0, A, u, l, d, c, scale, delta, steps, n_samples, noise, limit):
    """Integrate ``n_samples * steps`` Euler-Maruyama steps.

    Returns ``(states, bad_step)``; ``states[s]`` is the state after
    ``(s + 1) * steps`` steps and ``bad_step`` is -1 unless the state left
    ``[-limit, limit]`` (or became non-finite), in which case it is the index
    of the offending step and the remaining rows are unspecified.
    """
    n = x0.shape[0]
    out = np.empty((n_samples, n))
    x = x0.copy()
    use_noise = noise.shape[0] > 0
    k = 0
    for s in range(n_samples):
        for _ in range(steps):
            theta = A @ x + u
            p = np.empty(n)
            pos = theta >= 0
            p[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
            e = np.exp(theta[~pos])
            p[~pos] = e / (1.0 + e)
            x = x + (l * p - d * x + c) * delta
            if use_noise:
                x = x + scale * noise[k]
            if not np.all(np.abs(x) <= limit):
                return out, k
            k += 1
        out[s] = x
    return out, -1


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def euler_numba(x0, A, u, l, d, c, scale, delta, steps, n_samples, noise, limit):
        n = x0.shape[0]
        out = np.empty((n_samples, n))
        x = x0.copy()
        theta = np.empty(n)
        use_noise = noise.shape[0] > 0
        k = 0
        for s in range(n_samples):
            for _ in range(steps):
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += A[i, j] * x[j]
                    theta[i] = acc + u[i]
                for i in range(n):
                    t = theta[i]
                    if t >= 0.0:
                        p = 1.0 / (1.0 + np.exp(-t))
                    else:
                        e = np.exp(t)
                        p = e / (1.0 + e)
                    xi = x[i] + (l[i] * p - d[i] * x[i] + c[i]) * delta
                    if use_noise:
                        xi += scale * noise[k, i]
                    x[i] = xi
                for i in range(n):
                    # NaN fails this comparison as well
                    if not abs(x[i]) <= limit:
                        return out, k
                k += 1
            for i in range(n):
                out[s, i] = x[i]
        return out, -1

else:  # pragma: no cover
    euler_numba = None


def euler_maruyama(*args):
    """Dispatch to the active backend; arguments as in :func:`euler_numpy`."""
    if BACKEND == "numba":
        return euler_numba(*args)
    return euler_numpy(*args)


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch the kernel backend (``"numba"`` or ``"numpy"``)."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    previous = BACKEND
    BACKEND = name
    try:
        yield
    finally:
        BACKEND = previous
