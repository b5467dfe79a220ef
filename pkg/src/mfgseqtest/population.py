"""Conditional laws of the optimal stopping time given theta.

The agent stops when the log-likelihood ratio leaves ``(m(t), M(t))`` with
``m = logit(b)``, ``M = logit(B)``.  Monte Carlo is the production path; the
absorbed forward equation is an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .agent_solver import BoundaryCurves, ValueSurface
from .errors import GridError
from .filtering import VolatilityCurve, _time_grid, cached_normals, clock, logit
from .model import StoppedMeasurePair

# surviving weight below this is absorbed outright (keeps the alive set small)
WEIGHT_CUTOFF = 1e-12
# bridge crossing probabilities exp(-a) with a above this are treated as 0
BRIDGE_CUTOFF = 50.0


@dataclass(frozen=True, eq=False)
class TransformedBoundaries:
    """Boundaries in log-likelihood coordinates; ``empty`` slices have ``m = M``."""

    times: np.ndarray
    m: np.ndarray
    M: np.ndarray
    empty: np.ndarray

    @classmethod
    def from_curves(cls, bounds: BoundaryCurves, hold_terminal: bool = True):
        if hold_terminal:
            bounds = bounds.held()
        m = logit(np.asarray(bounds.b, dtype=float))
        M = logit(np.asarray(bounds.B, dtype=float))
        return cls(np.asarray(bounds.times, dtype=float), m, M, np.asarray(bounds.empty).copy())

    @classmethod
    def constant(cls, times, m: float, M: float):
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.size, float(m)), np.full(times.size, float(M)),
                   np.zeros(times.size, dtype=bool))

    @property
    def T(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True, eq=False)
class HittingCDF:
    """``P(tau <= t | theta)`` on the boundary time grid, with a standard error band."""

    times: np.ndarray
    cdf: np.ndarray
    se: np.ndarray
    mass_defect: float = 0.0


def _start_inside(bounds, L0):
    return bool(bounds.m[0] < L0 < bounds.M[0])


def _degenerate(times):
    return HittingCDF(times, np.ones(times.size), np.zeros(times.size))


@njit(cache=True)
def _walk(L0, z, drift, sd, dalpha, mu, Mu, u, times, mid_bin, mass):
    """Weighted exit walk; deposits absorbed weight into ``mass`` bins.

    Returns the weight still alive at the horizon.
    """
    n_steps, n_paths = z.shape
    last = times.size - 1
    alive = np.arange(n_paths)
    L = np.full(n_paths, L0)
    w = np.ones(n_paths)
    n_alive = n_paths
    for k in range(n_steps):
        if n_alive == 0:
            break
        da = dalpha[k]
        lost_mid = 0.0
        j = 0
        for i in range(n_alive):
            p = alive[i]
            l0 = L[i]
            l1 = l0 + drift[k] + sd[k] * z[k, p]
            d1l = l0 - mu[k]
            d2l = l1 - mu[k + 1]
            d1u = Mu[k] - l0
            d2u = Mu[k + 1] - l1
            wi = w[i]
            if d2l <= 0.0 or d2u <= 0.0:
                fl = 1.0
                fu = 1.0
                if d2l <= 0.0:
                    fl = d1l / (d1l - d2l) if d1l > d2l else 0.0
                if d2u <= 0.0:
                    fu = d1u / (d1u - d2u) if d1u > d2u else 0.0
                f = min(max(min(fl, fu), 0.0), 1.0)
                tau = u[k] + f * (u[k + 1] - u[k])
                b = min(np.searchsorted(times, tau), last)
                mass[b] += wi
                continue
            if da > 0.0:
                al = 2.0 * d1l * d2l / da
                au = 2.0 * d1u * d2u / da
                if al < BRIDGE_CUTOFF or au < BRIDGE_CUTOFF:
                    pl = np.exp(-al) if al < BRIDGE_CUTOFF else 0.0
                    pu = np.exp(-au) if au < BRIDGE_CUTOFF else 0.0
                    lost = wi * (pl + pu - pl * pu)
                    wi -= lost
                    lost_mid += lost
            if wi < WEIGHT_CUTOFF:
                lost_mid += wi
                continue
            alive[j] = p
            L[j] = l1
            w[j] = wi
            j += 1
        mass[mid_bin[k]] += lost_mid
        n_alive = j
    return w[:n_alive].sum()


def hitting_cdf_mc(bounds: TransformedBoundaries, eta: VolatilityCurve, L0: float, theta: int,
                   n_paths: int, dt: float | None = None, seed: int = 0) -> HittingCDF:
    """First exit of the conditional L-walk from ``(m, M)``, capped at ``T``.

    Each path carries a survival weight.  Between steps the walk is treated
    as a Brownian bridge against the linearised boundary and loses the
    fraction ``exp(-2 d1 d2 / dalpha)`` of its weight; a discrete crossing
    absorbs what is left at the linearly interpolated crossing time.
    """
    times = bounds.times
    T = bounds.T
    spacing = float(np.min(np.diff(times)))
    dt = spacing if dt is None else float(dt)
    if dt > spacing * (1 + 1e-9):
        raise GridError("path step must not exceed the boundary grid spacing")
    if not _start_inside(bounds, L0):
        return _degenerate(times)

    u = _time_grid(T, dt)
    n_steps = u.size - 1
    mu = np.interp(u, times, bounds.m)
    Mu = np.interp(u, times, bounds.M)
    dalpha = np.diff(clock(eta, u))
    sd = np.sqrt(dalpha)
    drift = (2 * int(theta) - 1) * dalpha / 2.0
    z = cached_normals(seed, 10 + int(theta), n_paths, n_steps)
    mid_bin = np.minimum(np.searchsorted(times, 0.5 * (u[:-1] + u[1:]), side="left"),
                         times.size - 1)
    mass = np.zeros(times.size)
    left = _walk(float(L0), z, drift, sd, dalpha, mu, Mu, u, times, mid_bin, mass)
    mass[-1] += left
    F = np.cumsum(mass) / n_paths
    F = np.clip(F, 0.0, 1.0)
    F[-1] = 1.0
    se = np.sqrt(F * (1.0 - F) / n_paths)
    return HittingCDF(times, F, se)


def hitting_cdf_pde(bounds: TransformedBoundaries, eta: VolatilityCurve, L0: float, theta: int,
                    n_x: int = 400, n_t: int = 2000) -> HittingCDF:
    """Killed forward equation in boundary-fitted coordinates ``x = (l - m) / (M - m)``.

    Conservative finite volumes with backward Euler: the density in ``x``
    obeys ``q_t = -(v q)_x + D q_xx`` with ``v = (mu - m' - x w') / w`` and
    ``D = eta^2 / (2 w^2)``, ``w = M - m``; zero Dirichlet data at both ends.
    Absorbed mass is the boundary flux, so survival plus absorbed is one.
    """
    times = bounds.times
    T = bounds.T
    if n_x < 3 or n_t < 1:
        raise GridError("PDE grid too small")
    if not _start_inside(bounds, L0):
        return _degenerate(times)

    h = 1.0 / n_x
    xc = (np.arange(n_x) + 0.5) * h
    xf = np.arange(1, n_x) * h  # interior faces
    s = np.linspace(0.0, T, n_t + 1)
    ms = np.interp(s, times, bounds.m)
    Ms = np.interp(s, times, bounds.M)
    ws = Ms - ms
    eta2 = eta(s) ** 2
    sign = 2 * int(theta) - 1

    x0 = (L0 - ms[0]) / ws[0]
    q = np.zeros(n_x)
    # split the initial unit mass between the two nearest cell centres
    pos = x0 / h - 0.5
    i0 = int(np.clip(np.floor(pos), 0, n_x - 2))
    frac = float(np.clip(pos - i0, 0.0, 1.0))
    q[i0] = (1.0 - frac) / h
    q[i0 + 1] = frac / h

    absorbed = np.zeros(n_t + 1)
    defect = 0.0
    ab = np.zeros((3, n_x))
    for n in range(n_t):
        dt = s[n + 1] - s[n]
        w = ws[n + 1]
        if w <= 1e-12:
            absorbed[n + 1:] = absorbed[n] + q.sum() * h
            q[:] = 0.0
            break
        dm = (ms[n + 1] - ms[n]) / dt
        dw = (ws[n + 1] - ws[n]) / dt
        mu = sign * eta2[n + 1] / 2.0
        v = (mu - dm - xf * dw) / w
        D = eta2[n + 1] / (2.0 * w * w)
        if np.max(np.abs(v)) * h / D > 2.0:
            raise GridError("cell Peclet number above 2; refine the PDE grid")
        r = dt / h
        # flux across interior face f between cells f and f+1:
        #   v_f (q_f + q_{f+1}) / 2 - D (q_{f+1} - q_f) / h
        lo = r * (0.5 * v + D / h)   # d flux / d q_f
        hi = r * (0.5 * v - D / h)   # d flux / d q_{f+1}
        diag = np.ones(n_x)
        diag[:-1] += lo
        diag[1:] -= hi
        diag[0] += r * 2.0 * D / h
        diag[-1] += r * 2.0 * D / h
        ab[1] = diag
        ab[0, 1:] = hi          # row f, column f+1
        ab[2, :-1] = -lo        # row f+1, column f
        q_new = solve_banded((1, 1), ab, q, check_finite=False)
        out = dt * 2.0 * D / h * (q_new[0] + q_new[-1])
        absorbed[n + 1] = absorbed[n] + out
        defect = max(defect, abs(q_new.sum() * h + absorbed[n + 1] - 1.0))
        q = q_new

    F = np.interp(times, s, absorbed)
    F = np.clip(np.maximum.accumulate(F), 0.0, 1.0)
    F[-1] = 1.0
    return HittingCDF(times, F, np.zeros(times.size), float(defect))


def response_measure(surface: ValueSurface, eta: VolatilityCurve, pi0: float,
                     n_paths: int = 100_000, dt: float | None = None, seed: int = 0,
                     with_se: bool = False):
    """Both conditional stopping-time CDFs for a homogeneous population started at ``pi0``."""
    bounds = TransformedBoundaries.from_curves(surface.boundaries)
    L0 = logit(pi0)
    runs = [hitting_cdf_mc(bounds, eta, L0, th, n_paths, dt, seed) for th in (0, 1)]
    pair = StoppedMeasurePair(surface.times, runs[0].cdf, runs[1].cdf)
    if with_se:
        return pair, runs[0].se, runs[1].se
    return pair
