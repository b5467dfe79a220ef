"""Belief dynamics for the two-point prior.

Given theta, the log-likelihood ratio ``L = logit(Pi)`` is Gaussian with
mean ``L0 ± alpha(t)/2`` and variance ``alpha(t) = ∫_0^t eta(s)^2 ds``, so
paths are simulated with exact increments rather than an Euler scheme.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError
from .model import VOLATILITY_FLOOR

L_CLAMP = 709.0
BLOCK_SIZE = 4096


def logit(pi):
    pi_arr = np.asarray(pi, dtype=float)
    if np.any((pi_arr <= 0.0) | (pi_arr >= 1.0)) or np.any(np.isnan(pi_arr)):
        raise DomainError("logit is defined on the open interval (0, 1)")
    out = np.log(pi_arr) - np.log1p(-pi_arr)
    return float(out) if np.ndim(pi) == 0 else out


def sigmoid(l):
    out = expit(np.clip(l, -L_CLAMP, L_CLAMP))
    return float(out) if np.ndim(l) == 0 else out


# ---------------------------------------------------------------- volatility curve


@dataclass(frozen=True, eq=False)
class VolatilityCurve:
    """Piecewise-linear volatility on a time grid, floored at ``VOLATILITY_FLOOR``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.broadcast_to(np.asarray(self.values, dtype=float), times.shape).copy()
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be an increasing 1-d grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("volatility must be finite")
        values = np.maximum(values, VOLATILITY_FLOOR)
        a, b = values[:-1], values[1:]
        # exact integral of a squared linear function on each piece
        seg = np.diff(times) * (a * a + a * b + b * b) / 3.0
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_alpha_nodes", np.concatenate(([0.0], np.cumsum(seg))))

    @classmethod
    def constant(cls, eta, T, n=2):
        return cls(np.linspace(0.0, T, n), np.full(n, float(eta)))

    @classmethod
    def from_function(cls, f, T, n=1001):
        t = np.linspace(0.0, T, n)
        return cls(t, f(t))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def alpha_nodes(self):
        return self._alpha_nodes

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def perturbed(self, delta):
        return VolatilityCurve(self.times, self.values + delta)


def clock(eta: VolatilityCurve, t):
    """``alpha(t) = ∫_0^t eta(s)^2 ds`` (exact for the piecewise-linear curve)."""
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0.0) or np.any(ts > eta.T * (1 + 1e-12)):
        raise DomainError(f"t outside [0, {eta.T}]")
    ts = np.minimum(ts, eta.T)
    times, v = eta.times, eta.values
    k = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, times.size - 2)
    h = times[k + 1] - times[k]
    s = ts - times[k]
    a = v[k]
    slope = (v[k + 1] - v[k]) / h
    # ∫_0^s (a + slope x)^2 dx
    part = a * a * s + a * slope * s * s + slope * slope * s**3 / 3.0
    out = eta.alpha_nodes[k] + part
    return float(out) if np.ndim(t) == 0 else out


def inverse_clock(eta: VolatilityCurve, u, tol=1e-12):
    """Inverse of :func:`clock` by vectorised bisection."""
    us = np.asarray(u, dtype=float)
    aT = eta.alpha_nodes[-1]
    if np.any(us < 0.0) or np.any(us > aT * (1 + 1e-12)):
        raise DomainError(f"u outside [0, alpha(T)={aT}]")
    us = np.minimum(us, aT)
    nodes = eta.alpha_nodes
    k = np.clip(np.searchsorted(nodes, us, side="right") - 1, 0, nodes.size - 2)
    lo = eta.times[k].astype(float)
    hi = eta.times[k + 1].astype(float)
    while True:
        mid = 0.5 * (lo + hi)
        below = clock(eta, mid) < us
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= tol:
            break
    out = 0.5 * (lo + hi)
    return float(out) if np.ndim(u) == 0 else out


def conditional_moments(eta: VolatilityCurve, L0: float, t: float, theta: int):
    a = clock(eta, t)
    return L0 + (2 * theta - 1) * a / 2.0, a


# ---------------------------------------------------------------- random streams


def worker_count() -> int:
    env = os.environ.get("MFG_SEQTEST_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, cap)


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Counter-based substream for one fixed block of path indices."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def _blocks(n_paths):
    return [(b, b * BLOCK_SIZE, min(n_paths, (b + 1) * BLOCK_SIZE))
            for b in range((n_paths + BLOCK_SIZE - 1) // BLOCK_SIZE)]


def standard_normals(seed, stream, n_paths, n_steps, dtype=np.float64):
    """Matrix ``(n_steps, n_paths)`` of N(0,1) draws.

    Column ``p`` depends only on ``(seed, stream, p)``, so results do not
    depend on the number of worker threads.
    """
    out = np.empty((n_steps, n_paths), dtype=dtype)

    def fill(block):
        b, lo, hi = block
        gen = block_generator(seed, stream, b)
        # always draw a full block so column p depends only on (seed, stream, p)
        out[:, lo:hi] = gen.standard_normal((n_steps, BLOCK_SIZE), dtype=dtype)[:, :hi - lo]

    specs = _blocks(n_paths)
    workers = min(worker_count(), len(specs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, specs))
    else:
        for s in specs:
            fill(s)
    return out


def uniforms(seed, stream, n_paths):
    out = np.empty(n_paths)
    for b, lo, hi in _blocks(n_paths):
        out[lo:hi] = block_generator(seed, stream, b).random(BLOCK_SIZE)[:hi - lo]
    return out


_NORMAL_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_NORMAL_CACHE_SIZE = 2


def cached_normals(seed, stream, n_paths, n_steps):
    """Float32 normals reused across fixed-point iterations (common random numbers)."""
    key = (int(seed), int(stream), int(n_paths), int(n_steps))
    z = _NORMAL_CACHE.get(key)
    if z is None:
        z = standard_normals(seed, stream, n_paths, n_steps, dtype=np.float32)
        _NORMAL_CACHE[key] = z
        while len(_NORMAL_CACHE) > _NORMAL_CACHE_SIZE:
            _NORMAL_CACHE.popitem(last=False)
    else:
        _NORMAL_CACHE.move_to_end(key)
    return z


# ---------------------------------------------------------------- path ensembles


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    dt: float
    times: np.ndarray
    L: np.ndarray  # (n_paths, n_steps + 1)
    theta: np.ndarray  # per path
    seed: int

    @property
    def Pi(self):
        return sigmoid(self.L)


def _time_grid(T, dt):
    n = int(np.ceil(T / dt - 1e-9))
    return np.linspace(0.0, T, n + 1)


def _paths(eta, L0, theta, times, z):
    dalpha = np.diff(clock(eta, times))
    drift = (2 * theta[:, None] - 1) * dalpha[None, :] / 2.0
    incr = drift + np.sqrt(dalpha)[None, :] * z.T
    L = np.empty((theta.size, times.size))
    L[:, 0] = L0
    np.cumsum(incr, axis=1, out=L[:, 1:])
    L[:, 1:] += L0
    return np.clip(L, -L_CLAMP, L_CLAMP)


def sample_conditional_paths(eta: VolatilityCurve, L0: float, theta: int, dt: float,
                             n_paths: int, seed: int, T: float | None = None) -> PathEnsemble:
    T = eta.T if T is None else T
    if dt <= 0 or n_paths < 1:
        raise ValueError("dt must be positive and n_paths >= 1")
    times = _time_grid(T, dt)
    z = standard_normals(seed, 10 + int(theta), n_paths, times.size - 1)
    th = np.full(n_paths, int(theta))
    return PathEnsemble(dt, times, _paths(eta, float(L0), th, times, z), th, seed)


def sample_unconditional_paths(eta: VolatilityCurve, pi0: float, dt: float, n_paths: int,
                               seed: int, T: float | None = None) -> PathEnsemble:
    """Posterior paths under the observation filtration: theta ~ Bernoulli(pi0)."""
    if not 0.0 < pi0 < 1.0:
        raise DomainError("pi0 must lie in (0, 1)")
    T = eta.T if T is None else T
    times = _time_grid(T, dt)
    th = (uniforms(seed, 20, n_paths) < pi0).astype(int)
    z = standard_normals(seed, 21, n_paths, times.size - 1)
    return PathEnsemble(dt, times, _paths(eta, logit(pi0), th, times, z), th, seed)
