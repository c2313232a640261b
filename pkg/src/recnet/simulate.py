"""Synthetic network generation and Euler-Maruyama simulation."""
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import SimulationDivergence
from .model import NetworkParams, Observations, check_finite, drift_eval
from .stability import a3a_margin

__all__ = ["GenConfig", "SimConfig", "drift_eval", "generate_params", "simulate_sde"]

DIVERGENCE_LIMIT = 1e12
# noise is drawn in blocks of at most this many numbers
_NOISE_BLOCK = 1 << 20


@dataclass(frozen=True)
class GenConfig:
    """Random sparse network generator.

    Node ``i`` receives ``Binomial(n - 1, p_link)`` regulators (``p_link``
    defaults to ``1 / (2n)``), each with a coefficient drawn from an even
    mixture of ``N(+coef_mean, coef_std^2)`` and ``N(-coef_mean, coef_std^2)``.
    """

    n: int
    seed: int = 0
    p_link: float = None
    coef_mean: float = 1.5
    coef_std: float = 0.1
    l_mean: float = 1.5
    l_std: float = 0.1
    u_mean: float = 0.0
    u_std: float = 0.1
    c_mean: float = 0.0
    c_std: float = 0.1
    d_mean: float = 1.5
    d_std: float = 0.1
    sigma: float = 0.5
    stability: str = "A3a"
    margin: float = 0.05

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p_link is not None and not 0.0 <= self.p_link <= 1.0:
            raise ValueError("p_link must lie in [0, 1]")
        if self.stability not in ("A3a", "none"):
            raise ValueError("stability must be 'A3a' or 'none'")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class SimConfig:
    """Integration horizon, sampling period and internal Euler step.

    ``internal_step`` defaults to ``sample_period / 100`` and ``x0`` to zero.
    """

    t_end: float
    sample_period: float = 1.0
    internal_step: float = None
    x0: tuple = None
    seed: int = 0
    t0: float = 0.0

    @property
    def delta(self):
        return self.sample_period / 100.0 if self.internal_step is None else self.internal_step

    @property
    def steps_per_sample(self):
        ratio = self.sample_period / self.delta
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9 * ratio:
            raise ValueError("sample_period must be an integer multiple of internal_step")
        return k

    @property
    def n_samples(self):
        return int(math.floor(self.t_end / self.sample_period + 1e-9))

    def validate(self):
        if not 0 < self.delta <= self.sample_period <= self.t_end:
            raise ValueError("need 0 < internal_step <= sample_period <= t_end")
        self.steps_per_sample


def generate_params(cfg):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    p = 1.0 / (2 * n) if cfg.p_link is None else cfg.p_link
    A = np.zeros((n, n))
    for i in range(n):
        k = rng.binomial(n - 1, p)
        others = np.delete(np.arange(n), i)
        regulators = rng.choice(others, size=k, replace=False)
        signs = np.where(rng.random(k) < 0.5, 1.0, -1.0)
        A[i, regulators] = signs * rng.normal(cfg.coef_mean, cfg.coef_std, size=k)
    l = rng.normal(cfg.l_mean, cfg.l_std, size=n)
    u = rng.normal(cfg.u_mean, cfg.u_std, size=n)
    c = rng.normal(cfg.c_mean, cfg.c_std, size=n)
    d = np.abs(rng.normal(cfg.d_mean, cfg.d_std, size=n))
    if cfg.stability == "A3a":
        gamma = 1.0
        while a3a_margin(A, l, gamma * d) > -cfg.margin:
            gamma += 0.5
        d = gamma * d
    return NetworkParams(A=A, u=u, l=l, d=d, c=c, sigma=cfg.sigma)


def simulate_sde(params, cfg):
    """Euler-Maruyama path of the network sampled every ``sample_period``.

    Returns ``floor(t_end / sample_period) + 1`` rows, the first being ``x0``.
    Gaussian increments come from a single ``numpy`` generator seeded with
    ``cfg.seed`` and are consumed in time order.
    """
    cfg.validate()
    n = params.n
    x0 = np.zeros(n) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    check_finite("x0", x0)
    steps = cfg.steps_per_sample
    n_samples = cfg.n_samples
    delta = cfg.delta
    scale = params.sigma * math.sqrt(delta)
    rng = np.random.default_rng(cfg.seed)

    rows = [x0]
    block = max(1, _NOISE_BLOCK // (steps * n))
    x = x0
    done = 0
    while done < n_samples:
        count = min(block, n_samples - done)
        if scale > 0:
            noise = rng.standard_normal((count * steps, n))
        else:
            noise = np.empty((0, n))
        states, bad = _accel.euler_maruyama(
            x, params.A, params.u, params.l, params.d, params.c,
            scale, delta, steps, count, noise, DIVERGENCE_LIMIT,
        )
        if bad >= 0:
            raise SimulationDivergence(done * steps + bad)
        rows.append(states)
        x = states[-1]
        done += count
    states = np.vstack(rows)
    times = cfg.t0 + cfg.sample_period * np.arange(n_samples + 1)
    return Observations(times, states)
