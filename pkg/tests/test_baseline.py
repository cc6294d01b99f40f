import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslab.baseline import fit_linear, linear_risk
from reslab.data import Dataset
from reslab.examples import NONMONOTONE_X, NONMONOTONE_Y, prop1_dataset
from reslab.instances import random_dataset, trial_rng
from reslab.loss import LossKind

SQ, LG = LossKind.SQUARED, LossKind.LOGISTIC


@pytest.mark.parametrize("rho", [0.1, 0.5, 1.0, math.sqrt(1.25)])
def test_six_point_linear_risk(rho):
    fit = fit_linear(prop1_dataset(rho), SQ, with_bias=True)
    assert abs(fit.risk - 8 * rho * rho / 15) <= 1e-10
    assert fit.grad_residual <= 1e-12


def test_exact_linear_data():
    X = np.array([1.0, 2.0, -3.0, 0.5])
    fit = fit_linear(Dataset(X, 2.5 * X), SQ)
    assert fit.risk <= 1e-28
    assert np.allclose(fit.t_hat, [2.5])
    assert np.allclose(fit.slope, [2.5])


def test_three_point_affine_fit():
    fit = fit_linear(Dataset(NONMONOTONE_X, NONMONOTONE_Y), SQ, with_bias=True)
    assert abs(fit.risk - 0.3205) <= 1e-4
    assert fit.slope.shape == (1,)


@pytest.mark.parametrize("loss", [SQ, LG])
@pytest.mark.parametrize("with_bias", [False, True])
def test_fit_beats_random_predictors(loss, with_bias):
    rng = trial_rng(200, int(with_bias))
    ds = random_dataset(rng, 3, loss, n=40)
    fit = fit_linear(ds, loss, with_bias=with_bias)
    assert fit.attained
    for _ in range(100):
        t = fit.t_hat + rng.standard_normal(fit.t_hat.size) * rng.uniform(0.01, 3.0)
        assert linear_risk(ds, loss, t, with_bias)[0] >= fit.risk - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([SQ, LG]))
def test_bias_never_hurts(seed, loss):
    ds = random_dataset(trial_rng(201, seed), 2, loss, n=25)
    plain = fit_linear(ds, loss)
    biased = fit_linear(ds, loss, with_bias=True)
    assert biased.risk <= plain.risk + 1e-10


def test_logistic_gradient_residual():
    ds = random_dataset(trial_rng(202, 0), 4, LG, n=60)
    fit = fit_linear(ds, LG, tol=1e-10)
    assert fit.attained and fit.grad_residual <= 1e-10
    assert np.linalg.norm(linear_risk(ds, LG, fit.t_hat)[1]) <= 1e-10


def test_separable_logistic_flags_unattained():
    X = np.array([-2.0, -1.0, 1.0, 2.0])
    fit = fit_linear(Dataset(X, np.sign(X)), LG, max_iters=50)
    assert not fit.attained
    assert fit.risk < 1e-3
