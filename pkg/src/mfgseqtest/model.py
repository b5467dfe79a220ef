"""Static problem data: losses, signal, mollifier, population measures.

The population enters an agent's problem only through the volatility
``eta(t) = lambda0 + lambda1 * (F0(t) + F1(t))`` where ``Fj`` is the
mollified fraction of agents already stopped in state ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import DomainError, NonDifferentiableError

VOLATILITY_FLOOR = 1e-3

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


# ---------------------------------------------------------------- losses


@dataclass(frozen=True)
class LossModel:
    """Terminal penalty ``g`` on the posterior probability.

    ``variant`` is one of ``"cross_entropy"``, ``"scaled_quadratic"``
    (``g = beta*pi*(1-pi)``) or ``"classic"`` (``g = min(a1*pi, a2*(1-pi))``).
    """

    variant: str
    beta: float = 1.0
    a1: float = 1.0
    a2: float = 1.0

    def __post_init__(self):
        if self.variant not in ("cross_entropy", "scaled_quadratic", "classic"):
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if self.variant == "scaled_quadratic" and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.variant == "classic" and not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("a1 and a2 must be positive")

    @classmethod
    def cross_entropy(cls):
        return cls("cross_entropy")

    @classmethod
    def scaled_quadratic(cls, beta):
        return cls("scaled_quadratic", beta=float(beta))

    @classmethod
    def classic(cls, a1, a2):
        return cls("classic", a1=float(a1), a2=float(a2))

    @property
    def smooth(self) -> bool:
        return self.variant != "classic"

    @property
    def center(self) -> float:
        """Point separating the two stopping boundaries."""
        if self.variant == "classic":
            return self.a2 / (self.a1 + self.a2)
        return 0.5

    def g(self, pi):
        pi = np.asarray(pi, dtype=float)
        if self.variant == "cross_entropy":
            return -xlogy(pi, pi) - xlogy(1.0 - pi, 1.0 - pi)
        if self.variant == "scaled_quadratic":
            return self.beta * pi * (1.0 - pi)
        return np.minimum(self.a1 * pi, self.a2 * (1.0 - pi))

    def dg(self, pi):
        pi = np.asarray(pi, dtype=float)
        if self.variant == "cross_entropy":
            with np.errstate(divide="ignore"):
                return np.log1p(-pi) - np.log(pi)
        if self.variant == "scaled_quadratic":
            return self.beta * (1.0 - 2.0 * pi)
        return np.where(pi < self.center, self.a1, -self.a2)

    def d2g(self, pi):
        pi = np.asarray(pi, dtype=float)
        if self.variant == "cross_entropy":
            with np.errstate(divide="ignore"):
                return -1.0 / (pi * (1.0 - pi))
        if self.variant == "scaled_quadratic":
            return np.full_like(pi, -2.0 * self.beta)
        return np.zeros_like(pi)

    def Ag(self, pi):
        """``0.5 * pi^2 (1-pi)^2 g''(pi)``, closed form per variant."""
        pi = np.asarray(pi, dtype=float)
        q = pi * (1.0 - pi)
        if self.variant == "cross_entropy":
            return -0.5 * q
        if self.variant == "scaled_quadratic":
            return -self.beta * q * q
        return np.zeros_like(pi)

    def dAg(self, pi):
        pi = np.asarray(pi, dtype=float)
        if self.variant == "cross_entropy":
            return pi - 0.5
        if self.variant == "scaled_quadratic":
            return -2.0 * self.beta * pi * (2.0 * pi * pi - 3.0 * pi + 1.0)
        return np.zeros_like(pi)

    def sup_norm(self) -> float:
        if self.variant == "cross_entropy":
            return math.log(2.0)
        if self.variant == "scaled_quadratic":
            return self.beta / 4.0
        return float(self.g(self.center))


def eval_loss(loss: LossModel, pi: float):
    """Return ``(g, g', Ag)`` at a single point.

    Endpoints return ``g = 0`` exactly with infinite or one-sided slope.
    The classic loss raises :class:`NonDifferentiableError` at its kink.
    """
    pi = float(pi)
    if not 0.0 <= pi <= 1.0 or math.isnan(pi):
        raise DomainError(f"pi={pi} outside [0, 1]")
    if loss.variant == "classic" and pi == loss.center:
        raise NonDifferentiableError(f"classic loss has a kink at pi={pi}")
    g = 0.0 if pi in (0.0, 1.0) else float(loss.g(pi))
    return g, float(loss.dg(pi)), float(loss.Ag(pi))


# ---------------------------------------------------------------- signal


@dataclass(frozen=True)
class SignalModel:
    lambda0: float = 1.0
    lambda1: float = 0.0

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.lambda1 > -self.lambda0:
            raise ValueError("lambda1 must exceed -lambda0")

    @property
    def lower_bound(self) -> float:
        """``lambda0 ∧ (lambda0 + lambda1)``, the advertised volatility floor."""
        return min(self.lambda0, self.lambda0 + self.lambda1)

    @property
    def upper_bound(self) -> float:
        return self.lambda0 + 2.0 * max(self.lambda1, 0.0)

    def eta(self, f0, f1):
        return self.lambda0 + self.lambda1 * (np.asarray(f0) + np.asarray(f1))


# ---------------------------------------------------------------- mollifier


@dataclass(frozen=True)
class Mollifier:
    """Bump ``k(u) ∝ (u (w-u))^3`` on ``[0, w]``: weight on the recent past."""

    width: float = 0.5

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("mollifier width must be positive")

    @property
    def norm(self) -> float:
        # ∫_0^w u^3 (w-u)^3 du = w^7 B(4, 4) = w^7 / 140
        return self.width**7 / 140.0

    def kernel(self, u):
        u = np.asarray(u, dtype=float)
        w = self.width
        inside = (u >= 0.0) & (u <= w)
        uc = np.clip(u, 0.0, w)
        return np.where(inside, (uc * (w - uc)) ** 3 / self.norm, 0.0)


# ---------------------------------------------------------------- measures


def _pwl_cdf(grid, values, s):
    """Piecewise-linear CDF with zero mass before time 0."""
    s = np.asarray(s, dtype=float)
    out = np.interp(s, grid, values)
    return np.where(s < grid[0], 0.0, out)


@dataclass(frozen=True, eq=False)
class StoppedMeasurePair:
    """Conditional stopping-time CDFs ``(F0, F1)`` on a shared time grid."""

    time_grid: np.ndarray
    F0: np.ndarray
    F1: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("time grid must be increasing and start at 0")
        arrs = []
        for F in (self.F0, self.F1):
            F = np.clip(np.asarray(F, dtype=float), 0.0, 1.0)
            if F.shape != grid.shape:
                raise ValueError("CDF arrays must match the time grid")
            F = np.maximum.accumulate(F)
            F[-1] = 1.0
            arrs.append(F)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "F0", arrs[0])
        object.__setattr__(self, "F1", arrs[1])

    @property
    def T(self) -> float:
        return float(self.time_grid[-1])

    def cdf(self, j: int):
        return self.F1 if j == 1 else self.F0

    @classmethod
    def uniform(cls, grid):
        grid = np.asarray(grid, dtype=float)
        F = grid / grid[-1]
        return cls(grid, F, F.copy())

    @classmethod
    def point_mass(cls, grid, at: float):
        """Everybody stops at ``at`` (right-continuous step, linearised on the grid)."""
        grid = np.asarray(grid, dtype=float)
        F = (grid >= at).astype(float)
        return cls(grid, F, F.copy())

    def mix(self, other: "StoppedMeasurePair", weight: float) -> "StoppedMeasurePair":
        """``(1-weight)*self + weight*other``."""
        if not np.array_equal(self.time_grid, other.time_grid):
            raise ValueError("time grids differ")
        return StoppedMeasurePair(
            self.time_grid,
            (1.0 - weight) * self.F0 + weight * other.F0,
            (1.0 - weight) * self.F1 + weight * other.F1,
        )


def mollified_fraction(measure: StoppedMeasurePair, mollifier: Mollifier, j: int, t):
    """``∫ mu^j[0, s] phi(t - s) ds``, integrated exactly.

    The integrand is the degree-6 kernel times a piecewise-linear CDF, so a
    4-point Gauss-Legendre rule on every piece between CDF breakpoints is
    exact up to rounding.
    """
    T = measure.T
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0.0) or np.any(ts > T * (1 + 1e-12)):
        raise DomainError(f"t outside [0, {T}]")
    grid = measure.time_grid
    F = measure.cdf(j)
    w = mollifier.width
    out = np.empty_like(ts)
    for k, tk in enumerate(ts):
        brk = tk - grid
        brk = brk[(brk > 0.0) & (brk < w)]
        pts = np.concatenate(([0.0], np.sort(brk), [w]))
        if 0.0 < tk < w:
            pts = np.union1d(pts, [tk])
        a, b = pts[:-1], pts[1:]
        half = 0.5 * (b - a)
        u = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = mollifier.kernel(u) * _pwl_cdf(grid, F, tk - u)
        out[k] = np.sum(half[:, None] * _GL_WEIGHTS[None, :] * vals)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def volatility(signal: SignalModel, measure: StoppedMeasurePair, mollifier: Mollifier, t):
    """Raw volatility ``lambda0 + lambda1*(F0 + F1)`` (no floor applied)."""
    f0 = mollified_fraction(measure, mollifier, 0, t)
    f1 = mollified_fraction(measure, mollifier, 1, t)
    return signal.eta(f0, f1)


# ---------------------------------------------------------------- assumptions


@dataclass
class AssumptionReport:
    variant: str
    h_lower: float
    h_upper: float
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def violations(self):
        return [name for name, ok in self.checks.items() if not ok]

    @property
    def all_hold(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {
            "variant": self.variant,
            "h_lower": self.h_lower,
            "h_upper": self.h_upper,
            "checks": dict(self.checks),
            "violations": self.violations,
            "all_hold": self.all_hold,
            "notes": list(self.notes),
        }


def check_assumptions(loss: LossModel, signal: SignalModel, c: float, n_grid: int = 1000):
    """Grid checks of the standing assumptions; violations are reported, never raised."""
    h, H = signal.lower_bound, signal.upper_bound
    report = AssumptionReport(loss.variant, h, H)
    if loss.smooth:
        pi = np.linspace(0.0, 1.0, n_grid + 1)
        inner = pi[1:-1]
        g = loss.g(pi)
        sym = bool(np.max(np.abs(g - loss.g(1.0 - pi))) <= 1e-12)
        concave = bool(np.all(loss.d2g(inner) <= 0.0))
        ends = bool(g[0] == 0.0 and g[-1] == 0.0)
        report.checks["G1"] = sym and concave and ends
        dA = loss.dAg(inner)
        left, right = inner < 0.5, inner > 0.5
        report.checks["G2"] = bool(np.all(dA[left] < 0.0) and np.all(dA[right] > 0.0))
        report.checks["G3"] = bool(float(loss.Ag(0.5)) < -c / h**2)
        if not report.checks["G3"]:
            report.notes.append(
                f"G3 fails: Ag(1/2)={float(loss.Ag(0.5)):.6g} >= -c/h^2={-c / h**2:.6g}"
            )
    else:
        report.checks["C1"] = True
        report.checks["C2"] = signal.lambda1 <= 0.0
        report.notes.append(
            "C2 (monotone decreasing volatility) holds for every measure iff lambda1 <= 0"
        )
    return report
