import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import rossler_data
from pemude.errors import InvalidArgument
from pemude.odesim import TimeSeries
from pemude.pem import PemUdeProblem, null_correction
from pemude.symreg import (FeatureLibrary, SymbolicModel, build_library, direct_stlsq_on_derivatives,
                           load_models, refine_parameters, save_models, stlsq, stlsq_coefficients)
from pemude.systems import rossler_system

LIB3 = FeatureLibrary(("x", "y", "z"), 2)


@pytest.fixture(scope="module")
def attractor():
    data = rossler_data(500.0, 0.1)
    return data.values[-5000:]


def rossler_term_model(px, py, threshold=0.1):
    xi = np.zeros(len(LIB3))
    xi[LIB3.terms.index("x")] = px
    xi[LIB3.terms.index("y")] = py
    return SymbolicModel(LIB3, xi, "y", threshold)


# ------------------------------------------------------------------- library

def test_two_variable_library_terms():
    lib, Theta = build_library([[2.0, 3.0]], ("x", "y"), 2)
    assert lib.terms == ["1", "x", "y", "x^2", "x*y", "y^2"]
    assert np.array_equal(Theta, [[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]])


def test_three_variable_library_has_ten_columns():
    lib, Theta = build_library(np.ones((4, 3)), ("x", "y", "z"), 2)
    assert len(lib) == 10 and Theta.shape == (4, 10)
    assert set(lib.terms) == {"1", "x", "y", "z", "x^2", "x*y", "x*z", "y^2", "y*z", "z^2"}


def test_library_validation():
    with pytest.raises(InvalidArgument):
        FeatureLibrary(("x", "x"), 2)
    with pytest.raises(InvalidArgument):
        FeatureLibrary(("x",), 0)
    with pytest.raises(InvalidArgument):
        build_library(np.zeros((0, 2)), ("x", "y"), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3))
def test_library_terms_distinct_with_constant_first(n_vars, degree):
    lib = FeatureLibrary(tuple(f"v{i}" for i in range(n_vars)), degree)
    terms = lib.terms
    assert terms[0] == "1" and len(set(terms)) == len(terms)
    degrees = lib.exponents.sum(axis=1)
    assert np.all(np.diff(degrees) >= 0)


# --------------------------------------------------------------------- STLSQ

def test_exact_single_term_recovery():
    rng = np.random.default_rng(0)
    lib, Theta = build_library(rng.standard_normal((200, 2)), ("x", "y"), 2)
    y = 2.0 * Theta[:, 1]
    m = stlsq(Theta, y, 0.1, library=lib)
    assert m.support_terms == {"x"}
    assert abs(m.coefficient("x") - 2.0) < 1e-10


def test_over_thresholding_gives_flagged_empty_model():
    rng = np.random.default_rng(1)
    lib, Theta = build_library(rng.standard_normal((100, 2)), ("x", "y"), 2)
    y = 0.5 * Theta[:, 1] - 0.3 * Theta[:, 4]
    m = stlsq(Theta, y, 1.0, library=lib)
    assert m.empty and "empty-model" in m.flags


def test_noisy_rossler_term_on_attractor(attractor):
    rng = np.random.default_rng(2)
    lib, Theta = build_library(attractor, ("x", "y", "z"), 2)
    y = attractor[:, 0] + 0.2 * attractor[:, 1] + 0.01 * rng.standard_normal(len(attractor))
    m = stlsq(Theta, y, 0.1, library=lib)
    assert m.support_terms == {"x", "y"}
    # oracle: ordinary least squares restricted to the true support
    ols = np.linalg.lstsq(Theta[:, [1, 2]], y, rcond=None)[0]
    assert abs(m.coefficient("x") - 1.0) < 0.05 and abs(m.coefficient("y") - 0.2) < 0.05
    assert np.allclose([m.coefficient("x"), m.coefficient("y")], ols, atol=1e-6)


def test_stlsq_validation():
    with pytest.raises(InvalidArgument):
        stlsq(np.ones((2, 5)), np.ones(2))
    with pytest.raises(InvalidArgument):
        stlsq(np.ones((5, 2)), np.ones(5), threshold=-1.0)


def _random_problem(seed, n_rows=60, n_cols=6):
    rng = np.random.default_rng(seed)
    Theta = rng.standard_normal((n_rows, n_cols))
    y = Theta @ rng.standard_normal(n_cols) + 0.3 * rng.standard_normal(n_rows)
    return Theta, y


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.5))
def test_stlsq_idempotent(seed, lam):
    Theta, y = _random_problem(seed)
    xi = stlsq_coefficients(Theta, y, lam)
    keep = xi != 0
    assume(keep.any())
    again = stlsq_coefficients(Theta[:, keep], y, lam)
    assert np.array_equal(again != 0, np.ones(keep.sum(), bool))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_support_size_non_increasing_in_threshold(seed):
    Theta, y = _random_problem(seed)
    sizes = [np.count_nonzero(stlsq_coefficients(Theta, y, lam)) for lam in np.linspace(0, 2, 21)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100.0))
def test_scale_equivariance_without_threshold(seed, s):
    Theta, y = _random_problem(seed)
    a = stlsq_coefficients(Theta, y, 0.0, ridge=0.0)
    b = stlsq_coefficients(Theta, s * y, 0.0, ridge=0.0)
    assert np.allclose(b, s * a, rtol=1e-9, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.5))
def test_exact_recovery_of_large_coefficients(seed, lam):
    rng = np.random.default_rng(seed)
    lib, Theta = build_library(rng.uniform(-2, 2, (80, 3)), ("x", "y", "z"), 2)
    support = rng.choice(len(lib), size=rng.integers(1, 5), replace=False)
    xi = np.zeros(len(lib))
    xi[support] = rng.choice([-1, 1], support.size) * rng.uniform(lam * 1.5, 3.0, support.size)
    m = stlsq(Theta, Theta @ xi, lam, library=lib)
    assert set(m.support) == set(support)


# --------------------------------------------------------------- model files

def test_model_render_and_round_trip(tmp_path):
    m = rossler_term_model(1.0, 0.2)
    assert m.render(3) == "dy/dt = 1.000*x + 0.200*y"
    path = save_models(tmp_path / "models.json", [m])
    back = load_models(path)
    assert back == [m]
    assert back[0].threshold == m.threshold


# ---------------------------------------------------------------- refinement

def _refine(model, data):
    prob = PemUdeProblem(rossler_system(learn=True), null_correction(3), data, [0.0, 0.25, 0.0])
    models = [model]
    for k in (0.25, 0.1, 0.05, 0.02):
        res = refine_parameters(models, prob.with_gain([0.0, k, 0.0]))
        models = res.models
    return res


def test_refinement_at_truth_is_a_fixed_point(rossler_short):
    res = _refine(rossler_term_model(1.0, 0.2), rossler_short)
    m = res.models[0]
    assert abs(m.coefficient("x") - 1.0) < 1e-4 and abs(m.coefficient("y") - 0.2) < 1e-4


def test_refinement_corrects_stlsq_estimate(rossler_short):
    res = _refine(rossler_term_model(1.01, 0.17), rossler_short)
    m = res.models[0]
    assert m.support_terms == {"x", "y"}
    assert abs(m.coefficient("x") - 1.0) <= 1e-3 and abs(m.coefficient("y") - 0.2) <= 1e-3
    assert res.loss < res.initial_loss


def test_refinement_rejects_empty_model(rossler_short):
    prob = PemUdeProblem(rossler_system(learn=True), null_correction(3), rossler_short, [0.0, 0.25, 0.0])
    with pytest.raises(InvalidArgument):
        refine_parameters([SymbolicModel(LIB3, np.zeros(10))], prob)


# ------------------------------------------------------------ direct baseline

def test_direct_baseline_on_clean_rossler_data():
    data = rossler_data(200.0, 0.05)
    models = direct_stlsq_on_derivatives(data, thresholds=(0.1,))
    assert models[0.1].support_terms == {"x", "y"}


def test_direct_baseline_needs_a_full_window():
    short = TimeSeries(np.arange(5.0), np.zeros((5, 3)), ("x", "y", "z"))
    with pytest.raises(InvalidArgument):
        direct_stlsq_on_derivatives(short)
