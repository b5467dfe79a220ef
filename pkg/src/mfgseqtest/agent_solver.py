"""Single-agent optimal stopping: value surface, free boundaries, oracles."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .errors import GridError, NoInteriorSolution
from .filtering import (
    BLOCK_SIZE,
    VolatilityCurve,
    block_generator,
    clock,
    inverse_clock,
    logit,
    sigmoid,
    _blocks,
)
from .model import LossModel

DEFAULT_N_SPACE = 1000
DEFAULT_N_TIME = 1000
L_MAX = 12.0
DEFAULT_SUBSTEPS = 8


@dataclass(frozen=True, eq=False)
class BoundaryCurves:
    """Free boundaries sampled on a time grid; ``empty`` flags slices with no continuation."""

    times: np.ndarray
    b: np.ndarray
    B: np.ndarray
    empty: np.ndarray
    center: float

    def held(self):
        """Copy whose flagged terminal slice repeats the last non-empty one.

        At ``t = T`` every point stops by convention, which is not the left
        limit of the boundaries; time integrals near ``T`` want the limit.
        """
        b, B = self.b.copy(), self.B.copy()
        empty = self.empty.copy()
        if empty[-1] and not empty[-2]:
            b[-1], B[-1] = b[-2], B[-2]
            empty[-1] = False
        return BoundaryCurves(self.times, b, B, empty, self.center)

    def at(self, t):
        return np.interp(t, self.times, self.b), np.interp(t, self.times, self.B)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    times: np.ndarray
    pi: np.ndarray
    V: np.ndarray  # (n_time + 1, n_space + 1)
    stop: np.ndarray
    g: np.ndarray
    loss: LossModel
    b: np.ndarray
    B: np.ndarray
    empty: np.ndarray

    @property
    def boundaries(self) -> BoundaryCurves:
        return BoundaryCurves(self.times, self.b, self.B, self.empty, self.loss.center)

    @property
    def dpi(self) -> float:
        return float(self.pi[1] - self.pi[0])

    def value_at(self, t_index, pi0):
        return float(np.interp(pi0, self.pi, self.V[t_index]))


def default_eps_stop(loss: LossModel) -> float:
    return 1e-9 * max(1.0, loss.sup_norm())


# ---------------------------------------------------------------- PDE solve


def solve_value(eta: VolatilityCurve, loss: LossModel, c: float, T: float,
                n_space: int = DEFAULT_N_SPACE, n_time: int = DEFAULT_N_TIME,
                theta: float = 1.0, eps_stop: float | None = None,
                substeps: int = DEFAULT_SUBSTEPS, t0: float = 0.0) -> ValueSurface:
    """Backward theta-scheme for ``V_t + 0.5 eta^2 pi^2 (1-pi)^2 V_pipi = -c`` with ``V <= g``.

    Each step is a tridiagonal solve followed by projection onto the obstacle.
    ``substeps`` internal steps are taken per output interval; the projection
    error in the boundary location scales like the square root of the step.
    The surface covers ``[t0, T]``; by dynamic programming it coincides with
    the restriction of the full-horizon solution.
    """
    if n_space < 2 or n_time < 2 or substeps < 1:
        raise GridError("grid sizes must be at least 2")
    if n_space < 50:
        warnings.warn(f"n_space={n_space} is coarse; boundary error will be large")
    pi = np.linspace(0.0, 1.0, n_space + 1)
    if not 0.0 <= t0 < T:
        raise GridError("t0 must lie in [0, T)")
    times = np.linspace(t0, T, n_time + 1)
    fine = np.linspace(t0, T, n_time * substeps + 1)
    dt = (T - t0) / (n_time * substeps)
    h = 1.0 / n_space
    g = loss.g(pi)
    g[0] = g[-1] = 0.0
    inner = pi[1:-1]
    coef = 0.5 * (inner * (1.0 - inner)) ** 2 / h**2
    eta2 = eta(fine) ** 2

    V = np.empty((n_time + 1, n_space + 1))
    V[-1] = g
    m = n_space - 1
    ab = np.zeros((3, m))
    row = g.copy()
    for n in range(fine.size - 2, -1, -1):
        nxt = row
        rhs = nxt[1:-1] + c * dt
        if theta < 1.0:
            lap = nxt[:-2] - 2.0 * nxt[1:-1] + nxt[2:]
            rhs = rhs + (1.0 - theta) * dt * eta2[n + 1] * coef * lap
        k = theta * dt * eta2[n] * coef
        ab[0, 1:] = -k[:-1]
        ab[1, :] = 1.0 + 2.0 * k
        ab[2, :-1] = -k[1:]
        row = np.empty(n_space + 1)
        row[0] = row[-1] = 0.0
        row[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
        if not np.all(np.isfinite(row)):
            bad = int(np.flatnonzero(~np.isfinite(row))[0])
            raise FloatingPointError(f"non-finite value at t={fine[n]:.6g}, pi={pi[bad]:.6g}")
        np.minimum(row, g, out=row)
        if n % substeps == 0:
            V[n // substeps] = row

    eps = default_eps_stop(loss) if eps_stop is None else eps_stop
    stop = (g[None, :] - V) <= eps
    b, B, empty = _boundaries_from(pi, g[None, :] - V, stop, loss.center)
    return ValueSurface(times, pi, V, stop, g, loss, b, B, empty)


def _refine(x2, x3, d2, d3):
    """Zero of the line through ``sqrt(g - V)`` at two continuation nodes.

    The gap is quadratic away from the boundary (smooth fit) but the node
    next to the stop set carries the projection kink, so callers pass the
    second and third continuation nodes.
    """
    s2, s3 = np.sqrt(np.maximum(d2, 0.0)), np.sqrt(np.maximum(d3, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        root = x2 - s2 * (x3 - x2) / (s3 - s2)
    return np.where(s3 > s2, root, np.nan)


def _boundaries_from(pi, gap, stop, center):
    n_t, n_x = stop.shape
    rows = np.arange(n_t)
    below = pi < center
    above = pi > center
    empty = stop.all(axis=1)

    low_mask = stop & below[None, :]
    ib = n_x - 1 - np.argmax(low_mask[:, ::-1], axis=1)
    ib = np.where(low_mask.any(axis=1), ib, 0)
    up_mask = stop & above[None, :]
    iB = np.argmax(up_mask, axis=1)
    iB = np.where(up_mask.any(axis=1), iB, n_x - 1)

    b = pi[ib].astype(float)
    B = pi[iB].astype(float)
    # sub-grid refinement, clamped to the cell between stop and continuation
    ok = (~empty) & (ib + 3 < n_x) & (iB - 3 >= 0)
    i1, i2, i3 = (np.minimum(ib + k, n_x - 1) for k in (1, 2, 3))
    cont = ok & ~stop[rows, i1] & ~stop[rows, i2] & ~stop[rows, i3]
    rb = _refine(pi[i2], pi[i3], gap[rows, i2], gap[rows, i3])
    use = cont & np.isfinite(rb)
    b = np.where(use, np.clip(rb, b, pi[i1]), b)
    j1, j2, j3 = (np.maximum(iB - k, 0) for k in (1, 2, 3))
    cont = ok & ~stop[rows, j1] & ~stop[rows, j2] & ~stop[rows, j3]
    rB = _refine(pi[j2], pi[j3], gap[rows, j2], gap[rows, j3])
    use = cont & np.isfinite(rB)
    B = np.where(use, np.clip(rB, pi[j1], B), B)

    b = np.where(empty, center, b)
    B = np.where(empty, center, B)
    return b, B, empty


def terminal_boundaries(eta: VolatilityCurve, loss: LossModel, c: float, T: float,
                        n_space: int = DEFAULT_N_SPACE, window: float | None = None,
                        n_time: int = 100):
    """Left limits ``(b(T-), B(T-))`` resolved on a short final window.

    Near a kinked loss the continuation band closes like ``sqrt(s log(1/s))``
    in the time to go ``s``, far too slowly to read off the last node of a
    coarse grid.  The window solve is the exact restriction of the full
    problem, so its last interior slice estimates the limit down to the
    space grid.
    """
    window = 1e-5 * T if window is None else float(window)
    surf = solve_value(eta, loss, c, T, n_space, n_time, t0=T - window)
    return float(surf.b[-2]), float(surf.B[-2])


def extract_boundaries(surface: ValueSurface, eps_stop: float | None = None):
    """Recompute ``(b, B, empty)`` from a surface with a given stop tolerance."""
    eps = default_eps_stop(surface.loss) if eps_stop is None else eps_stop
    gap = surface.g[None, :] - surface.V
    stop = gap <= eps
    return _boundaries_from(surface.pi, gap, stop, surface.loss.center)


def stop_region_is_two_intervals(surface: ValueSurface) -> np.ndarray:
    """Per time slice: is the stop set exactly ``[0, i_b] ∪ [i_B, N]``?"""
    stop = surface.stop
    out = np.empty(stop.shape[0], dtype=bool)
    for n, row in enumerate(stop):
        if row.all():
            out[n] = True
            continue
        cont = np.flatnonzero(~row)
        lo, hi = cont[0], cont[-1]
        out[n] = bool(row[:lo].all() and row[hi + 1:].all() and (~row[lo:hi + 1]).all()
                      and lo > 0 and hi < row.size - 1)
    return out


# ---------------------------------------------------------------- integral equations


def integral_residual(bounds: BoundaryCurves, eta: VolatilityCurve, loss: LossModel, c: float,
                      t: float, n_paths: int, seed: int, dt: float | None = None):
    """Monte Carlo ``RHS - LHS`` of the two boundary integral equations at time ``t``.

    Returns ``(residual_lower, residual_upper, se_lower, se_upper)``.  The
    posterior is started on each boundary with theta drawn from that prior,
    and time integrals use the trapezoid rule on the path grid.
    """
    bounds = bounds.held()
    T = float(bounds.times[-1])
    if dt is None:
        dt = float(bounds.times[1] - bounds.times[0])
    n_steps = max(1, int(np.ceil((T - t) / dt - 1e-9)))
    u = np.linspace(t, T, n_steps + 1)
    w = np.full(u.size, (T - t) / n_steps)
    w[0] *= 0.5
    w[-1] *= 0.5
    r, R = bounds.at(u)
    eta2 = eta(u) ** 2
    sd = np.sqrt(np.diff(clock(eta, u)))
    dalpha = sd**2

    out = []
    for side, start in enumerate((r[0], R[0])):
        L0 = logit(start)
        X = np.empty(n_paths)
        for blk, lo, hi in _blocks(n_paths):
            gen = block_generator(seed, 30 + side, blk)
            m = hi - lo
            theta = (gen.random(BLOCK_SIZE)[:m] < start).astype(float)
            z = gen.standard_normal((n_steps, BLOCK_SIZE))[:, :m]
            L = np.full(m, L0)
            acc = np.zeros(m)
            for k in range(n_steps + 1):
                if k > 0:
                    L = L + (2.0 * theta - 1.0) * dalpha[k - 1] / 2.0 + sd[k - 1] * z[k - 1]
                P = sigmoid(L)
                inside = (P > r[k]) & (P < R[k])
                outside = ((P > 0.0) & (P < r[k])) | ((P > R[k]) & (P < 1.0))
                acc += w[k] * (c * inside - eta2[k] * loss.Ag(P) * outside)
            X[lo:hi] = loss.g(sigmoid(L)) + acc
        res = float(X.mean() - loss.g(start))
        se = float(X.std(ddof=1) / np.sqrt(n_paths))
        out.append((res, se))
    return out[0][0], out[1][0], out[0][1], out[1][1]


# ---------------------------------------------------------------- infinite horizon


@dataclass(frozen=True, eq=False)
class InfiniteHorizonSolution:
    eta: float
    b: float
    B: float
    pi: np.ndarray
    V: np.ndarray
    smooth_fit_residual: float


def _psi(pi, k):
    return -k * (2.0 * pi - 1.0) * (np.log(pi) - np.log1p(-pi))


def _dpsi(pi, k):
    return -k * (2.0 * (np.log(pi) - np.log1p(-pi)) + (2.0 * pi - 1.0) / (pi * (1.0 - pi)))


def solve_infinite_horizon(eta_const: float, loss: LossModel, c: float,
                           n_space: int = DEFAULT_N_SPACE) -> InfiniteHorizonSolution:
    """Constant-volatility perpetual problem solved by shooting on the lower boundary.

    On the continuation interval ``V = psi + A`` with ``psi'' = -2c / (eta^2 pi^2 (1-pi)^2)``;
    symmetry fixes the linear part, so matching ``psi' = g'`` at ``b`` is a
    one-parameter root search and ``B = 1 - b``.
    """
    if not loss.smooth:
        raise ValueError("the infinite-horizon oracle requires a smooth symmetric loss")
    k = 2.0 * c / eta_const**2
    if eta_const**2 * float(loss.Ag(0.5)) >= -c:
        raise NoInteriorSolution("no interior solution: Ag(1/2) * eta^2 >= -c")

    def f(x):
        return float(_dpsi(x, k) - loss.dg(x))

    # scan downward from 1/2 (f < 0 there) for the first sign change
    xs = sigmoid(-np.geomspace(1e-6, 40.0, 4000))
    vals = np.array([f(x) for x in xs])
    idx = np.flatnonzero(vals > 0.0)
    if idx.size == 0:
        raise NoInteriorSolution("no interior solution: shooting bracket not found")
    j = idx[0]
    b = brentq(f, xs[j], xs[j - 1], xtol=1e-15, maxiter=500)
    B = 1.0 - b
    A = float(loss.g(b)) - float(_psi(b, k))
    pi = np.linspace(0.0, 1.0, n_space + 1)
    V = loss.g(pi).astype(float)
    inside = (pi > b) & (pi < B)
    V[inside] = _psi(pi[inside], k) + A
    V[0] = V[-1] = 0.0
    resid = max(abs(f(b)), abs(float(-_dpsi(b, k) - loss.dg(B))))
    return InfiniteHorizonSolution(float(eta_const), float(b), float(B), pi, V, resid)


# ---------------------------------------------------------------- time-changed solver


def solve_value_timechanged(eta: VolatilityCurve, loss: LossModel, c: float, T: float,
                            n_space: int = DEFAULT_N_SPACE, n_time: int = DEFAULT_N_TIME,
                            n_l: int = 2400, n_u: int = 2000, l_max: float = L_MAX,
                            eps_stop: float | None = None, return_hat: bool = False):
    """Solve in clock time ``u`` and log-likelihood ``l``, then map back to ``(t, pi)``.

    ``V_u + a(l) V_l + 0.5 V_ll = -c / eta(zeta(u))^2`` on ``[0, alpha(T)] x [-l_max, l_max]``
    with ``a(l) = (e^l - 1) / (2 (e^l + 1))`` and Dirichlet data from the obstacle.
    """
    uT = clock(eta, T)
    u = np.linspace(0.0, uT, n_u + 1)
    du = uT / n_u
    l = np.linspace(-l_max, l_max, n_l + 1)
    hl = l[1] - l[0]
    ghat = loss.g(sigmoid(l))
    eta_u = eta(inverse_clock(eta, u))
    src = c / eta_u**2

    a = 0.5 * np.tanh(l[1:-1] / 2.0)
    lower = 0.5 / hl**2 - a / (2.0 * hl)
    upper = 0.5 / hl**2 + a / (2.0 * hl)
    m = n_l - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = -du * upper[:-1]
    ab[1, :] = 1.0 + du * (lower + upper)
    ab[2, :-1] = -du * lower[1:]

    Vh = np.empty((n_u + 1, n_l + 1))
    Vh[-1] = ghat
    for n in range(n_u - 1, -1, -1):
        rhs = Vh[n + 1, 1:-1] + du * src[n]
        rhs[0] += du * lower[0] * ghat[0]
        rhs[-1] += du * upper[-1] * ghat[-1]
        row = np.empty(n_l + 1)
        row[0], row[-1] = ghat[0], ghat[-1]
        row[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
        np.minimum(row, ghat, out=row)
        Vh[n] = row

    times = np.linspace(0.0, T, n_time + 1)
    pi = np.linspace(0.0, 1.0, n_space + 1)
    g = loss.g(pi)
    g[0] = g[-1] = 0.0
    interp = RegularGridInterpolator((u, l), Vh, method="linear")
    V = np.tile(g, (times.size, 1))
    inner = (pi > 0.0) & (pi < 1.0)
    lp = logit(pi[inner])
    band = np.abs(lp) <= l_max
    cols = np.flatnonzero(inner)[band]
    ut = np.minimum(clock(eta, times), uT)
    UU, LL = np.meshgrid(ut, lp[band], indexing="ij")
    V[:, cols] = np.minimum(interp(np.stack([UU.ravel(), LL.ravel()], axis=-1)).reshape(UU.shape), g[cols])
    V[-1] = g
    eps = default_eps_stop(loss) if eps_stop is None else eps_stop
    stop = (g[None, :] - V) <= eps
    b, B, empty = _boundaries_from(pi, g[None, :] - V, stop, loss.center)
    surface = ValueSurface(times, pi, V, stop, g, loss, b, B, empty)
    if return_hat:
        return surface, (u, l, Vh)
    return surface


# ---------------------------------------------------------------- binomial lattice


def _lattice(eta_const, T, n_steps, pi0):
    dt = T / n_steps
    s = eta_const * np.sqrt(dt)
    L0 = logit(pi0)

    def level(n):
        l = L0 + (2.0 * np.arange(n + 1) - n) * s
        lo, mid, hi = sigmoid(l - s), sigmoid(l), sigmoid(l + s)
        p = (mid - lo) / (hi - lo)  # martingale weight for the posterior
        return mid, p

    return dt, level


def solve_value_lattice(eta_const: float, loss: LossModel, c: float, T: float,
                        n_steps: int, pi0: float) -> float:
    """Dynamic programming on the recombining log-likelihood lattice.

    This is the explicit binomial discretisation of the free-boundary
    problem: each node compares stopping with one more observation step.
    """
    dt, level = _lattice(eta_const, T, n_steps, pi0)
    W = loss.g(level(n_steps)[0])
    for n in range(n_steps - 1, -1, -1):
        pis, p = level(n)
        cont = c * dt + p * W[1:] + (1.0 - p) * W[:-1]
        W = np.minimum(loss.g(pis), cont)
    return float(W[0])


def brute_force_tree_value(eta_const: float, loss: LossModel, c: float, T: float,
                           n_steps: int, pi0: float = 0.5) -> float:
    """Minimum expected cost over every Markov stopping rule on the lattice.

    Each rule is a stop/continue bit per decision node; all ``2^nodes`` rules
    are evaluated exactly and the smallest cost is returned.
    """
    if not 1 <= n_steps <= 6:
        raise ValueError("n_steps must be between 1 and 6")
    dt, level = _lattice(eta_const, T, n_steps, pi0)
    nodes = [(n, k) for n in range(n_steps) for k in range(n + 1)]
    bit = {node: i for i, node in enumerate(nodes)}
    rules = np.arange(2 ** len(nodes), dtype=np.int64)
    W = [np.full(rules.size, gv) for gv in loss.g(level(n_steps)[0])]
    for n in range(n_steps - 1, -1, -1):
        pis, p = level(n)
        gs = loss.g(pis)
        new = []
        for k in range(n + 1):
            stop = ((rules >> bit[(n, k)]) & 1).astype(bool)
            cont = c * dt + p[k] * W[k + 1] + (1.0 - p[k]) * W[k]
            new.append(np.where(stop, gs[k], cont))
        W = new
    return float(W[0].min())


def enumerate_rules_naive(eta_const, loss, c, T, n_steps, pi0=0.5):
    """Path-by-path evaluation of every rule; tiny lattices only (test helper)."""
    dt, level = _lattice(eta_const, T, n_steps, pi0)
    levels = [level(n) for n in range(n_steps + 1)]
    nodes = [(n, k) for n in range(n_steps) for k in range(n + 1)]
    best = np.inf
    for bits in itertools.product((0, 1), repeat=len(nodes)):
        rule = dict(zip(nodes, bits))
        cost = 0.0
        for moves in itertools.product((0, 1), repeat=n_steps):
            # full-path probability; the walk continues virtually after stopping
            prob, k, paid = 1.0, 0, None
            for n in range(n_steps + 1):
                if paid is None and (n == n_steps or rule[(n, k)]):
                    paid = c * n * dt + float(loss.g(levels[n][0][k]))
                if n == n_steps:
                    break
                p = levels[n][1][k]
                prob *= p if moves[n] else 1.0 - p
                k += moves[n]
            cost += prob * paid
        best = min(best, cost)
    return best
