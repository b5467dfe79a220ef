import numpy as np
import pytest

from mfgseqtest.agent_solver import BoundaryCurves, ValueSurface, solve_value
from mfgseqtest.errors import GridError
from mfgseqtest.filtering import VolatilityCurve
from mfgseqtest.model import LossModel
from mfgseqtest.population import (
    TransformedBoundaries,
    hitting_cdf_mc,
    hitting_cdf_pde,
    response_measure,
)

ETA1 = VolatilityCurve.constant(1.0, 5.0)


def _band(T=1.0, n=51, a=1.5):
    return TransformedBoundaries.constant(np.linspace(0.0, T, n), -a, a)


def _check_cdf(res):
    F = res.cdf
    assert np.all(np.diff(F) >= 0.0)
    assert np.all((F >= 0.0) & (F <= 1.0))
    assert F[-1] == 1.0


def refined_oracle(m, M, T, dt, n, theta, seed):
    """Plain numpy walk with randomised bridge crossings; returns exit times and sides."""
    rng = np.random.default_rng(seed)
    tau = np.full(n, T)
    side = np.zeros(n, dtype=int)
    L = np.zeros(n)
    idx = np.arange(n)
    sd, drift = np.sqrt(dt), (2 * theta - 1) * dt / 2
    for k in range(int(round(T / dt))):
        L1 = L + drift + sd * rng.standard_normal(L.size)
        up, dn = L1 >= M, L1 <= m
        inside = ~(up | dn)
        pl = np.where(inside, np.exp(-2 * (L - m) * (L1 - m) / dt), 0.0)
        pu = np.where(inside, np.exp(-2 * (M - L) * (M - L1) / dt), 0.0)
        bl = rng.random(L.size) < pl
        bu = ~bl & (rng.random(L.size) < pu)
        hit = up | dn | bl | bu
        tau[idx[hit]] = (k + 0.5) * dt
        side[idx[hit]] = np.where(up | bu, 1, -1)[hit]
        L, idx = L1[~hit], idx[~hit]
        if idx.size == 0:
            break
    return tau, side


# ---------------------------------------------------------------- Monte Carlo

def test_start_on_boundary_stops_at_zero():
    times = np.linspace(0.0, 1.0, 11)
    bounds = TransformedBoundaries.constant(times, 0.0, 0.0)
    for fn in (hitting_cdf_mc, hitting_cdf_pde):
        res = fn(bounds, ETA1, 0.0, 1, 100) if fn is hitting_cdf_mc else fn(bounds, ETA1, 0.0, 1)
        assert np.all(res.cdf == 1.0)


def test_positive_drift_against_refined_oracle():
    bounds = _band()
    mc = hitting_cdf_mc(bounds, ETA1, 0.0, 1, 100_000, seed=1)
    _check_cdf(mc)
    tau, side = refined_oracle(-1.5, 1.5, 1.0, 0.02 / 4, 1_000_000, 1, seed=3)
    up, down = np.mean(side == 1), np.mean(side == -1)
    assert up > down + 5 * np.sqrt((up + down) / tau.size)
    for t in np.arange(0.1, 1.0, 0.1):
        k = int(round(t / 0.02))
        F_or = np.mean(tau <= t)
        se = np.sqrt(mc.se[k] ** 2 + F_or * (1 - F_or) / tau.size)
        assert abs(mc.cdf[k] - F_or) <= 3 * se


def test_tiny_horizon_puts_mass_at_the_end():
    times = np.linspace(0.0, 1e-3, 11)
    bounds = TransformedBoundaries(times, -5.0 - times * 1e3, 5.0 + times * 1e3,
                                   np.zeros(times.size, bool))
    res = hitting_cdf_mc(bounds, ETA1, 0.0, 1, 10_000)
    assert np.all(res.cdf[:-1] == 0.0) and res.cdf[-1] == 1.0


def test_step_larger_than_grid_rejected():
    with pytest.raises(GridError):
        hitting_cdf_mc(_band(n=51), ETA1, 0.0, 1, 100, dt=0.05)


def test_mc_deterministic_and_prefix_stable():
    a = hitting_cdf_mc(_band(), ETA1, 0.2, 0, 20_000, seed=9)
    b = hitting_cdf_mc(_band(), ETA1, 0.2, 0, 20_000, seed=9)
    assert np.array_equal(a.cdf, b.cdf)
    c = hitting_cdf_mc(_band(), ETA1, 0.2, 0, 20_000, seed=10)
    assert not np.array_equal(a.cdf, c.cdf)


# ---------------------------------------------------------------- forward equation

def test_pde_conserves_mass_on_moving_band():
    times = np.linspace(0.0, 2.0, 201)
    bounds = TransformedBoundaries(times, -2.0 + 0.5 * times, 2.0 - 0.4 * times,
                                   np.zeros(times.size, bool))
    eta = VolatilityCurve.from_function(lambda t: 1.0 + 0.3 * np.sin(t), 2.0)
    res = hitting_cdf_pde(bounds, eta, 0.1, 1)
    assert res.mass_defect <= 1e-6
    _check_cdf(res)


def test_pde_reflection_symmetry():
    bounds = _band(T=2.0, n=101, a=1.2)
    up = hitting_cdf_pde(bounds, ETA1, 0.0, 1)
    down = hitting_cdf_pde(bounds, ETA1, 0.0, 0)
    assert np.max(np.abs(up.cdf - down.cdf)) < 1e-10


def test_pde_peclet_guard():
    bounds = _band(T=1.0, a=40.0)
    with pytest.raises(GridError):
        hitting_cdf_pde(bounds, VolatilityCurve.constant(0.2, 1.0), 0.0, 1, n_x=10)


def test_mc_matches_pde_on_constant_band():
    bounds = _band(T=2.0, n=201)
    for th in (0, 1):
        mc = hitting_cdf_mc(bounds, ETA1, 0.3, th, 100_000, seed=2)
        pde = hitting_cdf_pde(bounds, ETA1, 0.3, th)
        assert np.max(np.abs(mc.cdf - pde.cdf)) <= 0.01


def test_mc_matches_pde_on_equilibrium(ce_equilibria):
    res = ce_equilibria[0.0]
    bounds = TransformedBoundaries.from_curves(res.surface.boundaries)
    for th in (0, 1):
        mc = hitting_cdf_mc(bounds, res.eta, 0.0, th, 100_000, dt=5.0 / 2000, seed=0)
        pde = hitting_cdf_pde(bounds, res.eta, 0.0, th, n_x=400, n_t=2000)
        assert pde.mass_defect <= 1e-6
        assert np.max(np.abs(mc.cdf - pde.cdf)) <= 0.01


# ---------------------------------------------------------------- response

def test_empty_continuation_everyone_stops_at_zero():
    surf = solve_value(ETA1, LossModel.cross_entropy(), 1e3, 5.0, n_space=100, n_time=20)
    pair = response_measure(surf, ETA1, 0.5, n_paths=1000)
    assert np.all(pair.F0 == 1.0) and np.all(pair.F1 == 1.0)


def test_response_symmetric_and_deterministic():
    surf = solve_value(ETA1, LossModel.cross_entropy(), 0.1, 5.0, n_space=400, n_time=400)
    pair, se0, se1 = response_measure(surf, ETA1, 0.5, n_paths=50_000, seed=4, with_se=True)
    assert np.all(np.abs(pair.F0 - pair.F1) <= 3 * np.sqrt(se0**2 + se1**2) + 1e-15)
    again = response_measure(surf, ETA1, 0.5, n_paths=50_000, seed=4)
    assert np.array_equal(pair.F0, again.F0) and np.array_equal(pair.F1, again.F1)


# ---------------------------------------------------------------- stability

def _shifted(bounds, d):
    return TransformedBoundaries(bounds.times, bounds.m + d, bounds.M - d, bounds.empty)


def stability_levels(surface: ValueSurface, eta, n_paths=50_000):
    """Kolmogorov distances to the base CDF under boundary and volatility perturbations."""
    bounds = TransformedBoundaries.from_curves(surface.boundaries)
    base = hitting_cdf_mc(bounds, eta, 0.0, 1, n_paths, seed=6).cdf
    shift, coef = [], []
    for d in (0.04, 0.02, 0.01):
        shift.append(np.max(np.abs(hitting_cdf_mc(_shifted(bounds, d), eta, 0.0, 1, n_paths,
                                                  seed=6).cdf - base)))
        coef.append(np.max(np.abs(hitting_cdf_mc(bounds, eta.perturbed(d), 0.0, 1, n_paths,
                                                 seed=6).cdf - base)))
    return shift, coef


def test_hitting_time_stability():
    surf = solve_value(ETA1, LossModel.cross_entropy(), 0.1, 5.0, n_space=400, n_time=500)
    shift, coef = stability_levels(surf, ETA1)
    for levels in (shift, coef):
        assert levels[0] > levels[1] > levels[2] > 0.0
