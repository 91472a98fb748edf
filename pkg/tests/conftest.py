import numpy as np
import pytest

import seqjde
from seqjde import coeffopt


@pytest.fixture(scope="session")
def mean_model():
    return seqjde.make_shift_in_mean(4.0, 1.7, 1.0, 0.5)


@pytest.fixture(scope="session")
def var_model():
    return seqjde.make_shift_in_variance(0.1, 1.0, 1.3, 1.7, 0.5, 0.5)


@pytest.fixture(scope="session")
def small_spec():
    # fast shift-in-mean grids for unit tests
    return seqjde.GridSpec(
        x_axis=seqjde.Axis(-15.0, 15.0, 301),
        theta_axis=seqjde.Axis(-12.0, 12.0, 481),
        t_axis=seqjde.Axis(-8.0, 8.0, 81),
        horizon=8,
    )


@pytest.fixture(scope="session")
def small_build(mean_model, small_spec):
    return seqjde.build(mean_model, small_spec)


@pytest.fixture(scope="session")
def small_design(mean_model, small_spec):
    # loose-ish constraints keep the toy test from running to truncation
    k = coeffopt.Constraints(0.1, 0.1, 0.8, 0.8)
    return coeffopt.design(mean_model, small_spec, k, coeffopt.DesignOptions(tol=1e-9))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260810)
