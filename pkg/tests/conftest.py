import numpy as np
import pytest

from phifit import (ModelKind, build_square_model, reference_fixtures,
                    solve_intercept)


@pytest.fixture(scope="session")
def fixtures():
    return reference_fixtures()


@pytest.fixture(scope="session")
def models():
    """The five square-table models for I = 4 under multinomial sampling."""
    return {
        "sat": build_square_model(ModelKind.SATURATED, 4),
        "s": build_square_model(ModelKind.SYMMETRY, 4),
        "oqs": build_square_model(ModelKind.ORDINAL_QUASI_SYMMETRY, 4),
        "qs": build_square_model(ModelKind.QUASI_SYMMETRY, 4),
        "mh": build_square_model(ModelKind.MARGINAL_HOMOGENEITY, 4),
    }


@pytest.fixture(scope="session")
def truth_thetas(models, fixtures):
    """Parameter vectors (with intercepts solved for unit total) per model."""
    return {
        "s": solve_intercept(models["s"], fixtures.theta_s, 1.0),
        "oqs": solve_intercept(models["oqs"], fixtures.theta_oqs, 1.0),
        "qs": solve_intercept(models["qs"], fixtures.theta_qs, 1.0),
        "mh": solve_intercept(models["mh"], fixtures.theta_mh, 1.0),
        "sat": solve_intercept(models["sat"], fixtures.theta_mh, 1.0),
    }


def random_positive_table(rng, I=4, low=1, high=21):
    return rng.integers(low, high, size=(I, I)).astype(np.int64)
