import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from pptrial.errors import EstimationError, RankDeficientError, SeparationError
from pptrial.glm import DesignMatrix, fit_glm, predict


def logistic_oracle(X, y, w):
    def nll(b):
        eta = X @ b
        return -np.sum(w * (y * eta - np.logaddexp(0, eta)))

    def grad(b):
        return -X.T @ (w * (y - expit(X @ b)))

    return minimize(nll, np.zeros(X.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-10}).x


def test_logit_matches_direct_likelihood(rng):
    n = 3000
    x1, x2 = rng.normal(size=n), rng.binomial(1, 0.4, n)
    y = rng.binomial(1, expit(-0.5 + 0.8 * x1 - 1.1 * x2)).astype(float)
    w = rng.uniform(0.5, 2.0, n)
    X = DesignMatrix.from_columns({"x1": x1, "x2": x2})
    m = fit_glm(X, y, weights=w)
    assert m.converged
    np.testing.assert_allclose(m.coefficients, logistic_oracle(X.values, y, w), atol=1e-5)
    np.testing.assert_allclose(predict(m, X), m.fitted)


def test_identity_matches_normal_equations(rng):
    n = 500
    x = rng.normal(size=n)
    y = 1.0 + 2.0 * x + rng.normal(size=n)
    X = DesignMatrix.from_columns({"x": x})
    m = fit_glm(X, y, link="identity")
    beta = np.linalg.solve(X.values.T @ X.values, X.values.T @ y)
    np.testing.assert_allclose(m.coefficients, beta, rtol=1e-10)
    assert abs(m.scale - 1.0) < 0.1


def test_separation_detected():
    x = np.arange(20.0)
    y = (x > 9.5).astype(float)
    with pytest.raises(SeparationError):
        fit_glm(DesignMatrix.from_columns({"x": x}), y)


def test_rank_deficiency_names_columns():
    x = np.arange(10.0)
    X = DesignMatrix.from_columns({"x": x, "twice": 2 * x})
    with pytest.raises(RankDeficientError) as err:
        fit_glm(X, (x > 4).astype(float))
    assert err.value.columns


def test_input_checks():
    X = DesignMatrix.from_columns({"x": np.arange(4.0)})
    with pytest.raises(EstimationError, match="0/1"):
        fit_glm(X, np.array([0, 1, 2, 0.0]))
    with pytest.raises(EstimationError, match="non-finite"):
        DesignMatrix.from_columns({"x": np.array([1.0, np.nan])})
    with pytest.raises(EstimationError, match="non-negative"):
        fit_glm(X, np.array([0, 1, 1, 0.0]), weights=-np.ones(4))
    m = fit_glm(X, np.array([0, 1, 0, 1.0]))
    with pytest.raises(EstimationError, match="labels"):
        predict(m, DesignMatrix.from_columns({"z": np.arange(4.0)}))
