"""Fixed-point map from stopped measures to the induced stopping-time laws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import export
from .agent_solver import ValueSurface, solve_value
from .config import Problem
from .filtering import VolatilityCurve
from .model import StoppedMeasurePair, volatility
from .population import response_measure


def kolmogorov_distance(mu: StoppedMeasurePair, nu: StoppedMeasurePair) -> float:
    if mu.time_grid.shape != nu.time_grid.shape or not np.array_equal(mu.time_grid, nu.time_grid):
        raise ValueError("measures live on different time grids")
    return float(max(np.max(np.abs(mu.F0 - nu.F0)), np.max(np.abs(mu.F1 - nu.F1))))


def time_grid(problem: Problem):
    return np.linspace(0.0, problem.T, problem.n_time + 1)


def initial_measure(problem: Problem, kind: str | None = None) -> StoppedMeasurePair:
    kind = problem.init if kind is None else kind
    grid = time_grid(problem)
    if kind == "uniform":
        return StoppedMeasurePair.uniform(grid)
    if kind == "stop_at_0":
        return StoppedMeasurePair.point_mass(grid, 0.0)
    if kind == "stop_at_T":
        return StoppedMeasurePair.point_mass(grid, problem.T)
    raise ValueError(f"unknown initial measure {kind!r}")


def volatility_curve(mu: StoppedMeasurePair, problem: Problem):
    """Raw and floored volatility induced by ``mu`` on its time grid."""
    t = mu.time_grid
    if problem.signal.lambda1 == 0.0:
        raw = np.full(t.size, problem.signal.lambda0)
    else:
        raw = np.asarray(volatility(problem.signal, mu, problem.mollifier, t), dtype=float)
    return VolatilityCurve(t, raw), raw


@dataclass(frozen=True, eq=False)
class PhiOutput:
    measure: StoppedMeasurePair
    surface: ValueSurface
    eta: VolatilityCurve
    eta_raw: np.ndarray
    se0: np.ndarray
    se1: np.ndarray


def apply_phi(mu: StoppedMeasurePair, problem: Problem) -> PhiOutput:
    """One application of the best-response map (same MC seed every call)."""
    eta, raw = volatility_curve(mu, problem)
    surface = solve_value(eta, problem.loss, problem.c, problem.T, problem.n_space,
                          problem.n_time, substeps=problem.substeps)
    nu, se0, se1 = response_measure(surface, eta, problem.prior, problem.paths, problem.dt,
                                    problem.seed, with_se=True)
    return PhiOutput(nu, surface, eta, raw, se0, se1)


def boundary_distance(s1: ValueSurface, s2: ValueSurface) -> float:
    return float(max(np.max(np.abs(s1.b - s2.b)), np.max(np.abs(s1.B - s2.B))))


@dataclass(eq=False)
class EquilibriumResult:
    measure: StoppedMeasurePair        # response to the final input measure
    input_measure: StoppedMeasurePair  # final damped iterate
    surface: ValueSurface
    eta: VolatilityCurve
    se0: np.ndarray
    se1: np.ndarray
    iterations: int
    distances: list = field(default_factory=list)
    boundary_distances: list = field(default_factory=list)
    initial_distance: float = float("nan")
    converged: bool = False
    config: dict = field(default_factory=dict)
    seed: int = 0
    eta_min: float = float("nan")
    h_lower: float = float("nan")

    @property
    def value_at_prior(self) -> float:
        prior = self.config.get("prior", 0.5)
        return self.surface.value_at(0, prior)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "converged": self.converged,
            "iterations": self.iterations,
            "trace": {
                "kolmogorov": [float(d) for d in self.distances],
                "boundary_sup": [float(d) for d in self.boundary_distances],
                "initial_kolmogorov": float(self.initial_distance),
            },
            "eta_min_empirical": float(self.eta_min),
            "eta_lower_bound": float(self.h_lower),
            "value_at_prior": self.value_at_prior,
        }

    def write(self, out_dir):
        """``result.json``, ``boundaries.csv``, ``cdfs.csv`` and ``value_t0.csv``."""
        export.write_json(f"{out_dir}/result.json", self.summary())
        export.write_boundaries(f"{out_dir}/boundaries.csv", self.surface.boundaries)
        export.write_cdfs(f"{out_dir}/cdfs.csv", self.measure)
        export.write_csv(f"{out_dir}/value_t0.csv", ["pi", "V"],
                         [self.surface.pi, self.surface.V[0]])


def fixed_point(problem: Problem, mu_init: StoppedMeasurePair | None = None,
                damping: float | None = None, tol: float | None = None,
                max_iter: int | None = None, seed: int | None = None,
                callback=None) -> EquilibriumResult:
    """Damped iteration ``mu <- (1 - rho) mu + rho Phi(mu)``.

    Iteration ``k`` forms the next damped iterate and applies the map once;
    its distance is ``d(mu_k, Phi(mu_k))``.  With no interaction the map is
    constant, so a full step (``rho = 1``) converges at ``k = 1``.
    """
    if seed is not None:
        problem = problem.with_seed(seed)
    rho = problem.damping if damping is None else float(damping)
    tol = problem.tol if tol is None else float(tol)
    max_iter = problem.max_iter if max_iter is None else int(max_iter)
    if not 0.0 < rho <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")

    mu = initial_measure(problem) if mu_init is None else mu_init
    out = apply_phi(mu, problem)
    d0 = kolmogorov_distance(mu, out.measure)
    eta_min = float(np.min(out.eta_raw))
    dists, bdists = [], []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        prev = out
        mu = mu.mix(prev.measure, rho)
        out = apply_phi(mu, problem)
        eta_min = min(eta_min, float(np.min(out.eta_raw)))
        dists.append(kolmogorov_distance(mu, out.measure))
        bdists.append(boundary_distance(prev.surface, out.surface))
        if callback is not None:
            callback(k, dists[-1], bdists[-1])
        if dists[-1] <= tol:
            converged = True
            break

    return EquilibriumResult(
        measure=out.measure, input_measure=mu, surface=out.surface, eta=out.eta,
        se0=out.se0, se1=out.se1, iterations=k, distances=dists,
        boundary_distances=bdists, initial_distance=d0, converged=converged,
        config=problem.raw, seed=problem.seed, eta_min=eta_min,
        h_lower=problem.signal.lower_bound,
    )
