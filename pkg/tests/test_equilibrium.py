import numpy as np
import pytest

from conftest import make_problem
from mfgseqtest.equilibrium import (
    apply_phi,
    fixed_point,
    initial_measure,
    kolmogorov_distance,
    volatility_curve,
)
from mfgseqtest.model import StoppedMeasurePair

SMALL = dict(grid__n_space=300, grid__n_time=200, grid__substeps=4, mc__paths=20_000)


def small(lambda1, **extra):
    return make_problem(lambda1, **{**SMALL, **extra})


# ---------------------------------------------------------------- metric

GRID = np.linspace(0.0, 5.0, 101)


def test_distance_zero_on_identical():
    mu = StoppedMeasurePair.uniform(GRID)
    assert kolmogorov_distance(mu, mu) == 0.0


def test_distance_of_shift():
    mu = StoppedMeasurePair.uniform(GRID)
    nu = StoppedMeasurePair(GRID, np.minimum(mu.F0 + 0.1, 1.0), np.minimum(mu.F1 + 0.1, 1.0))
    assert kolmogorov_distance(mu, nu) == pytest.approx(0.1, abs=1e-15)
    assert kolmogorov_distance(nu, mu) == kolmogorov_distance(mu, nu)


def test_triangle_inequality():
    rng = np.random.default_rng(0)

    def rand():
        F0, F1 = (np.sort(rng.uniform(size=GRID.size)) for _ in range(2))
        return StoppedMeasurePair(GRID, F0, F1)

    for _ in range(100):
        a, b, c = rand(), rand(), rand()
        assert kolmogorov_distance(a, c) <= kolmogorov_distance(a, b) + kolmogorov_distance(b, c) + 1e-15


def test_distance_grid_mismatch():
    with pytest.raises(ValueError):
        kolmogorov_distance(StoppedMeasurePair.uniform(GRID),
                            StoppedMeasurePair.uniform(np.linspace(0.0, 5.0, 51)))


# ---------------------------------------------------------------- map

def test_no_interaction_map_is_constant():
    p = small(0.0)
    a = apply_phi(initial_measure(p, "stop_at_0"), p)
    b = apply_phi(initial_measure(p, "uniform"), p)
    assert np.array_equal(a.measure.F0, b.measure.F0)
    assert np.array_equal(a.measure.F1, b.measure.F1)
    assert kolmogorov_distance(a.measure, apply_phi(a.measure, p).measure) == 0.0


def test_war_of_attrition_orders_volatility_and_value():
    p = small(1.0)
    late = apply_phi(initial_measure(p, "stop_at_T"), p)
    early = apply_phi(initial_measure(p, "stop_at_0"), p)
    grid = late.eta.times
    assert np.all(early.eta(grid) >= late.eta(grid))
    assert np.all(early.surface.V <= late.surface.V + 1e-8)
    assert early.surface.value_at(0, 0.5) < late.surface.value_at(0, 0.5)


def test_volatility_curve_without_interaction_is_constant():
    p = small(0.0)
    eta, raw = volatility_curve(initial_measure(p), p)
    assert np.all(raw == 1.0)


# ---------------------------------------------------------------- iteration

def test_full_step_converges_in_one_iteration():
    res = fixed_point(small(0.0), damping=1.0)
    assert res.converged and res.iterations == 1
    assert res.distances == [0.0]


def test_trace_invariants_and_determinism():
    p = small(-0.5)
    a = fixed_point(p)
    assert a.converged
    assert len(a.distances) == a.iterations == len(a.boundary_distances)
    assert a.distances[-1] <= p.tol
    assert min(a.distances) <= a.distances[0]
    b = fixed_point(p)
    assert a.distances == b.distances
    assert np.array_equal(a.measure.F0, b.measure.F0)
    assert np.array_equal(a.surface.V, b.surface.V)


def test_nonconvergence_is_reported_not_raised():
    res = fixed_point(small(-0.5), max_iter=2, tol=1e-9)
    assert not res.converged and res.iterations == 2
    assert res.summary()["converged"] is False


def test_invalid_iteration_parameters():
    with pytest.raises(ValueError):
        fixed_point(small(0.0), damping=0.0)
    with pytest.raises(ValueError):
        fixed_point(small(0.0), tol=0.0)


def test_two_start_probe():
    # uniqueness is not established; the gap between the two limits is only reported
    p = small(-0.5)
    lo = fixed_point(p, mu_init=initial_measure(p, "stop_at_0"))
    hi = fixed_point(p, mu_init=initial_measure(p, "stop_at_T"))
    gap = max(np.max(np.abs(lo.surface.b - hi.surface.b)), np.max(np.abs(lo.surface.B - hi.surface.B)))
    print(f"two-start boundary gap {gap:.3e} (converged {lo.converged}, {hi.converged})")
    assert lo.converged and hi.converged


def test_summary_schema(ce_equilibria):
    s = ce_equilibria[0.0].summary()
    assert set(s) == {"config", "seed", "converged", "iterations", "trace",
                      "eta_min_empirical", "eta_lower_bound", "value_at_prior"}
    assert set(s["trace"]) == {"kolmogorov", "boundary_sup", "initial_kolmogorov"}
    assert s["eta_min_empirical"] == 1.0 and s["eta_lower_bound"] == 1.0
