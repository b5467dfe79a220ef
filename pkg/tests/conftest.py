import time

import pytest

from mfgseqtest import config as cfg
from mfgseqtest.equilibrium import fixed_point

CE_LAMBDAS = (-0.5, 0.0, 1.0)
CLASSIC_LAMBDAS = (-0.5, -0.25, 0.0)


def make_problem(lambda1=0.0, loss=None, **extra):
    raw = {
        "c": 0.1, "T": 5.0, "prior": 0.5,
        "loss": loss or {"variant": "cross_entropy"},
        "signal": {"lambda0": 1.0, "lambda1": lambda1},
    }
    for key, value in extra.items():
        raw = cfg.apply_overrides(raw, [f"{key.replace('__', '.')}={value}"])
    return cfg.from_dict(raw)


# wall-clock seconds spent building each session fixture
TIMINGS = {}

CLASSIC = {"variant": "classic", "params": {"a1": 3.0, "a2": 1.5}}


@pytest.fixture(scope="session")
def ce_equilibria():
    start = time.perf_counter()
    runs = {lam: fixed_point(make_problem(lam)) for lam in CE_LAMBDAS}
    TIMINGS["ce"] = time.perf_counter() - start
    return runs


@pytest.fixture(scope="session")
def classic_equilibria():
    # 999 cells put the kink of g exactly on a node
    start = time.perf_counter()
    runs = {lam: fixed_point(make_problem(lam, CLASSIC, grid__n_space=999))
            for lam in CLASSIC_LAMBDAS}
    TIMINGS["classic"] = time.perf_counter() - start
    return runs
