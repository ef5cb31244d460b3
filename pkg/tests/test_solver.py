import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from glmd.datagen import SimDesign, gen_design, gen_response, true_beta
from glmd.errors import ArgumentError, SingularFisherError
from glmd.glm_core import LOGISTIC, POISSON, PROBIT, Dataset, fisher_info, log_likelihood, score
from glmd.solver import FitOptions, fit_mle, newton_update, one_step_update


def _probit_data(n=200, beta0=(0.3, -0.4), seed=7):
    design = SimDesign("probit", n=n, p=len(beta0), rho=0.5, seed=seed)
    z = gen_design(design)
    return Dataset(z, gen_response(PROBIT, z, np.asarray(beta0), seed + 1))


def test_balanced_logistic_intercept_is_zero():
    fit = fit_mle(LOGISTIC, Dataset([[1.0], [1.0]], [0.0, 1.0]))
    assert fit.converged
    assert fit.iterations == 0
    assert_array_equal(fit.estimate, [0.0])
    assert fit.local_n == 2


def test_poisson_intercept_is_log_mean():
    fit = fit_mle(POISSON, Dataset([[1.0], [1.0], [1.0]], [2.0, 3.0, 1.0]))
    assert fit.converged
    assert fit.estimate[0] == pytest.approx(math.log(2.0), rel=1e-9)
    assert fit.final_score_norm <= FitOptions().score_tolerance


def test_probit_fit_is_a_local_maximum():
    data = _probit_data()
    fit = fit_mle(PROBIT, data)
    assert fit.converged
    best = log_likelihood(PROBIT, data, fit.estimate)
    for dx in (-1e-4, 0.0, 1e-4):
        for dy in (-1e-4, 0.0, 1e-4):
            assert log_likelihood(PROBIT, data, fit.estimate + [dx, dy]) <= best + 1e-12


def test_likelihood_trace_is_non_decreasing():
    fit = fit_mle(PROBIT, _probit_data())
    trace = np.array(fit.log_likelihood_trace)
    assert len(trace) == fit.iterations + 1
    assert np.all(np.diff(trace) >= 0.0)


def test_fisher_returned_at_estimate():
    data = _probit_data()
    fit = fit_mle(PROBIT, data)
    assert_array_equal(fit.fisher_at_estimate, fisher_info(PROBIT, data, fit.estimate))


def test_iteration_cap_reports_non_convergence():
    fit = fit_mle(PROBIT, _probit_data(), opts=FitOptions(max_iterations=1, score_tolerance=1e-14))
    assert not fit.converged
    assert fit.iterations == 1


def test_warm_start_from_mle_needs_no_iterations():
    data = _probit_data()
    fit = fit_mle(PROBIT, data)
    again = fit_mle(PROBIT, data, init=fit.estimate)
    assert again.converged
    assert again.iterations == 0


def test_collinear_design_raises_singular_fisher():
    data = Dataset([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], [0.0, 1.0, 1.0])
    with pytest.raises(SingularFisherError):
        fit_mle(LOGISTIC, data)


def test_invalid_response_is_rejected():
    with pytest.raises(ArgumentError):
        fit_mle(LOGISTIC, Dataset([[1.0], [1.0]], [0.0, 2.0]))


def test_one_step_update_hand_arithmetic():
    beta = one_step_update(POISSON, Dataset([[1.0], [1.0]], [1.0, 3.0]), [0.0])
    assert beta[0] == pytest.approx(1.0, rel=1e-15)


def test_one_step_update_fixed_point():
    data = _probit_data()
    fit = fit_mle(PROBIT, data)
    inv_norm = np.linalg.norm(np.linalg.inv(fit.fisher_at_estimate), 2)
    moved = one_step_update(PROBIT, data, fit.estimate)
    assert np.max(np.abs(moved - fit.estimate)) <= 10 * FitOptions().score_tolerance * max(inv_norm, 1.0)


def test_one_step_update_is_beta_plus_fisher_solve():
    data = _probit_data(n=150, beta0=(0.2, 0.1))
    beta0 = np.array([0.1, 0.0])
    expected = beta0 + np.linalg.solve(fisher_info(PROBIT, data, beta0), score(PROBIT, data, beta0))
    assert_allclose(one_step_update(PROBIT, data, beta0), expected, rtol=1e-12)


def test_newton_equals_fisher_scoring_for_canonical_links():
    design = SimDesign("logistic", n=300, p=3, seed=3)
    z = gen_design(design)
    data = Dataset(z, gen_response(LOGISTIC, z, true_beta("logistic", 3), 4))
    beta0 = np.array([0.1, -0.1, 0.0])
    assert_array_equal(newton_update(LOGISTIC, data, beta0), one_step_update(LOGISTIC, data, beta0))


def test_fit_options_validation_and_mapping():
    opts = FitOptions.from_mapping({"max_iterations": "7", "score_tolerance": 1e-6, "unrelated": True})
    assert opts == FitOptions(max_iterations=7, score_tolerance=1e-6)
    assert FitOptions.from_mapping(None) == FitOptions()
    with pytest.raises(ArgumentError):
        FitOptions(max_iterations=0)
    with pytest.raises(ArgumentError):
        FitOptions(score_tolerance=0.0)
    with pytest.raises(ArgumentError):
        FitOptions(step_halving_max=-1)


@pytest.mark.parametrize("model", ["probit", "logistic", "poisson"])
def test_likelihood_trace_never_decreases_at_tight_tolerance(model):
    design = SimDesign(model, n=500, p=4, seed=21)
    z = gen_design(design)
    family = design.family
    data = Dataset(z, gen_response(family, z, true_beta(model, 4), 22))
    fit = fit_mle(family, data, opts=FitOptions(score_tolerance=1e-12))
    assert np.all(np.diff(fit.log_likelihood_trace) >= 0.0)


@pytest.mark.parametrize("c", [0.25, 3.0])
def test_rescaled_column_rescales_the_estimate(c):
    design = SimDesign("logistic", n=400, p=3, seed=31)
    z = gen_design(design)
    y = gen_response(LOGISTIC, z, true_beta("logistic", 3), 32)
    factors = np.array([1.0, c, 1.0])
    base = fit_mle(LOGISTIC, Dataset(z, y))
    scaled = fit_mle(LOGISTIC, Dataset(z * factors, y))
    assert base.converged and scaled.converged
    assert_allclose(scaled.estimate * factors, base.estimate, rtol=1e-8, atol=1e-9)
