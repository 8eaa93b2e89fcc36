import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _truths import noiseless_truth, truth
from spinshelve.errors import FitError
from spinshelve.fitting import (
    MODELS,
    PAPER_MODELS,
    FitResult,
    fit,
    get_model,
    initial_guess,
    model_eval,
    numeric_jacobian,
)
from spinshelve.fitting.engine import _levenberg_marquardt, _Problem

Y_SCALED = {
    "exp_decay": ("y0", "A"),
    "exp_recovery": ("y0", "A"),
    "damped_sin": ("A",),
    "damped_sin_offset": ("y0", "A"),
    "double_gaussian": ("b", "A1", "A2"),
    "power_law": ("t0", "b"),
    "linear": ("c0", "c1"),
}


def test_paper_models_are_registered():
    assert set(PAPER_MODELS) <= set(MODELS)
    assert len(PAPER_MODELS) == 6
    with pytest.raises(FitError):
        get_model("nope")


@pytest.mark.parametrize("name", sorted(MODELS))
def test_numeric_jacobian_matches_complex_step(name, rng):
    x, p = truth(name, rng)
    m = get_model(name)
    jac = numeric_jacobian(name, p, x)
    h = 1e-20
    for j in range(len(p)):
        pc = np.array(p, dtype=complex)
        pc[j] += 1j * h * max(1.0, abs(p[j]))
        exact = m.func(x.astype(complex), *pc).imag / (h * max(1.0, abs(p[j])))
        assert np.allclose(jac[:, j], exact, rtol=1e-5, atol=1e-7 * np.abs(exact).max())


@pytest.mark.parametrize("name", sorted(MODELS))
def test_noiseless_round_trip(name, rng):
    for _ in range(10):
        x, p = noiseless_truth(name, rng)
        res = fit(name, x, model_eval(name, p, x))
        assert res.converged
        assert np.allclose(res.values, p, rtol=1e-6, atol=0)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_chi_square_never_increases(name, rng):
    x, p = truth(name, rng)
    y = model_eval(name, p, x) * (1 + 0.02 * rng.standard_normal(len(x)))
    m = get_model(name)
    prob = _Problem(m, x, y, np.ones_like(y))
    trace = []
    _levenberg_marquardt(prob, prob.to_q(initial_guess(m, x, y).values), trace)
    assert len(trace) >= 2
    assert all(b <= a for a, b in zip(trace, trace[1:]))


@given(st.floats(0.01, 1000), st.floats(-100, 100))
def test_exp_decay_scale_and_offset_equivariance(scale, shift):
    x = np.linspace(0, 150, 120)
    y = model_eval("exp_decay", [1.0, 0.8, 24.0], x)
    y = y + 0.01 * np.sin(7 * x)  # deterministic misfit so errors are nonzero
    base = fit("exp_decay", x, y)
    res = fit("exp_decay", x, scale * y + shift)
    assert res["T"] == pytest.approx(base["T"], rel=1e-6)
    assert res["A"] == pytest.approx(scale * base["A"], rel=1e-6)
    assert res.error("T") == pytest.approx(base.error("T"), rel=1e-4)


def test_error_bars_cover_truth(rng):
    hits = 0
    for _ in range(100):
        x = np.linspace(0, 150, 150)
        y = model_eval("exp_recovery", [1.2, 0.5, 24.0], x) + 0.01 * rng.standard_normal(len(x))
        res = fit("exp_recovery", x, y)
        hits += abs(res["T"] - 24.0) < res.error("T")
    assert 55 <= hits <= 80  # one-sigma coverage near 68 %


def test_sigma_weighting_matches_scaled_residuals():
    x = np.linspace(0, 10, 30)
    y = 2 + 3 * x + 0.1 * np.cos(5 * x)
    a = fit("linear", x, y, sigma=0.5)
    b = fit("linear", x, y)
    assert np.allclose(a.values, b.values)
    assert a.chi2 == pytest.approx(4 * b.chi2)


def test_linear_matches_polyfit(rng):
    x = np.linspace(0, 5, 40)
    y = 1.5 - 0.3 * x + 0.05 * rng.standard_normal(40)
    res = fit("linear", x, y)
    c1, c0 = np.polyfit(x, y, 1)
    assert res["c0"] == pytest.approx(c0, rel=1e-8) and res["c1"] == pytest.approx(c1, rel=1e-8)


def test_damped_sin_canonical_form():
    x = np.linspace(0, 200, 300)
    y = model_eval("damped_sin", [-1.0, 80.0, 40.0, 5.0], x)
    res = fit("damped_sin", x, y)
    assert res["A"] > 0
    assert -20.0 <= res["tau0"] < 20.0
    assert np.allclose(res(x), y, atol=1e-9)


def test_double_gaussian_orders_peaks():
    x = np.linspace(3.0, 4.0, 300)
    y = model_eval("double_gaussian", [1.0, -0.2, 3.8, 0.04, -0.1, 3.2, 0.05], x)
    res = fit("double_gaussian", x, y)
    assert res["mu1"] == pytest.approx(3.2) and res["mu2"] == pytest.approx(3.8)


def test_too_few_points_and_bad_input():
    with pytest.raises(FitError):
        fit("exp_decay", [1.0, 2.0], [1.0, 2.0])
    with pytest.raises(FitError):
        fit("linear", [1, 2, np.nan], [1, 2, 3])
    with pytest.raises(FitError):
        fit("linear", [1, 2, 3], [1, 2, 3], sigma=0)


def test_domain_check_on_explicit_init():
    with pytest.raises(FitError):
        fit("exp_decay", np.arange(10.0), np.exp(-np.arange(10.0)), init=[0, 1, -5])


def test_fit_result_json_round_trip(rng):
    x, p = truth("exp_decay", rng)
    res = fit("exp_decay", x, model_eval("exp_decay", p, x) + 0.01 * rng.standard_normal(len(x)))
    data = json.loads(res.to_json())
    assert data["model"] == "exp_decay" and set(data["params"]) == {"y0", "A", "T"}
    back = FitResult.from_dict(data)
    assert np.array_equal(back.values, res.values) and back.converged == res.converged


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("c", [1e-3, 7.0, 1e4])
def test_argmin_invariant_under_joint_y_sigma_scaling(name, c, rng):
    x, p = truth(name, rng)
    y = model_eval(name, p, x) * (1 + 0.01 * rng.standard_normal(len(x)))
    sigma = 0.01 * np.abs(y) + 1e-3
    a = fit(name, x, y, sigma)
    b = fit(name, x, c * y, c * sigma)
    # parameters that scale with y; the rest must not move
    linear = [i for i, n in enumerate(a.names) if n in Y_SCALED[name]]
    expected = a.values.copy()
    expected[linear] *= c
    # chi-square rounding limits how finely the minimum is located (~3e-9)
    np.testing.assert_allclose(b.values, expected, rtol=1e-8, atol=0)


def test_model_examples():
    assert model_eval("damped_sin", [1.0, 50.0, 40.0, 7.0], [7.0])[0] == pytest.approx(0.0, abs=1e-15)
    assert model_eval("power_law", [2.0, 3.0, -0.7], [1.0])[0] == pytest.approx(5.0)
    assert model_eval("exp_recovery", [1.3, 0.5, 24.0], [1e6])[0] == pytest.approx(1.3)
    with pytest.raises(FitError):
        model_eval("exp_decay", [1.0, 1.0, -1.0], [0.0])
