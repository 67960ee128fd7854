import math
from fractions import Fraction

import numpy as np
import pytest

from photogeom.errors import NotApplicableError
from photogeom.fockops import DiagonalOperator, exp_diag, fock_projector, hs_inner, normal_exp_diag
from photogeom.geometry import contravariant_coords, truncate_observable
from photogeom.photocounting import (
    PhotocountingModel,
    laguerre,
    laguerre_coefficients,
    pc_basis,
    pc_click_operator,
    pc_contravariant_catalog,
    pc_covm_element,
    pc_covm_laguerre_diag,
    pc_covm_q_symbol,
    pc_duality_defect,
    pc_efficiency_matrix,
    pc_efficiency_transform,
    pc_metric_contr,
    pc_metric_cov,
    pc_metric_matrices,
    pc_povm,
    pc_povm_element,
    trace_formula_check,
)

from oracles import binomial_pmf, photocount_gram

ETAS = (0.3, 0.5, 0.7, 0.9, 1.0)


def test_ideal_detection_gives_fock_projectors():
    model = PhotocountingModel(1.0)
    for n in range(5):
        d = pc_povm_element(model, n, 10).diag
        assert list(d) == [float(k == n) for k in range(10)]


def test_povm_entries():
    assert pc_povm_element(PhotocountingModel(0.5), 0, 4).diag[1] == pytest.approx(0.5)
    assert pc_povm_element(PhotocountingModel(0.7), 2, 5).diag[3] == pytest.approx(0.441, abs=1e-15)


def test_povm_matches_binomial_oracle_exactly():
    model = PhotocountingModel(Fraction(3, 10))
    for n in range(6):
        d = pc_povm_element(model, n, 12, exact=True).diag
        assert list(d) == [binomial_pmf(n, k, Fraction(3, 10)) for k in range(12)]


def test_dark_counts_rejected():
    model = PhotocountingModel(0.5, 0.1)
    for call in (
        lambda: pc_povm_element(model, 0, 5),
        lambda: pc_metric_cov(model, 0, 0),
        lambda: pc_covm_element(model, 1),
        lambda: pc_contravariant_catalog(model, "number"),
    ):
        with pytest.raises(ValueError):
            call()
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            PhotocountingModel(bad)
    with pytest.raises(ValueError):
        PhotocountingModel(0.5, -1.0)


def test_metric_examples():
    half = PhotocountingModel(0.5)
    assert pc_metric_cov(half, 0, 0, exact=True) == Fraction(4, 3)
    assert pc_metric_contr(half, 1, 1, exact=True) == 5
    assert pc_metric_contr(half, 0, 1, exact=True) == -1
    one = PhotocountingModel(1.0)
    for n in range(4):
        for m in range(4):
            assert pc_metric_cov(one, n, m) == (n == m)
            assert pc_metric_contr(one, n, m) == (n == m)


@pytest.mark.parametrize("eta", ETAS)
def test_metric_matches_fock_sum(eta):
    g, _ = pc_metric_matrices(PhotocountingModel(eta), 15)
    assert np.max(np.abs(g - photocount_gram(eta, 15))) < 1e-10


@pytest.mark.parametrize("eta", (Fraction(1, 2), Fraction(7, 10), Fraction(9, 10), Fraction(1)))
def test_metrics_are_inverse(eta):
    # the contraction runs over all outcomes (it converges for eta >= 1/2);
    # rational arithmetic avoids the cancellation between large alternating terms
    model = PhotocountingModel(eta)
    K = 160
    g = [[pc_metric_cov(model, k, m, exact=True) for m in range(15)] for k in range(K)]
    worst = 0.0
    for n in range(15):
        gc = [pc_metric_contr(model, n, k, exact=True) for k in range(K)]
        for m in range(15):
            worst = max(worst, abs(float(sum(gc[k] * g[k][m] for k in range(K)) - (n == m))))
    assert worst < 1e-8


def test_window_inverse_exact_only_with_full_contraction():
    # a finite section of the covariant metric is not inverted by the matching contravariant section
    g, gc = pc_metric_matrices(PhotocountingModel(Fraction(1, 2)), 6, exact=True)
    assert sum(gc[5][k] * g[k][5] for k in range(6)) != 1


def test_tiny_efficiency_warns():
    from photogeom.errors import ConditioningWarning

    with pytest.warns(ConditioningWarning):
        pc_metric_contr(PhotocountingModel(1e-4), 1, 1)


def test_covm_example_and_laguerre_form():
    half = PhotocountingModel(0.5)
    assert list(pc_covm_element(half, 1, 4).diag) == [-1.0, 2.0, 0.0, 0.0]
    for eta in (0.3, 0.5, 0.7, 0.9):
        model = PhotocountingModel(eta)
        for n in range(12):
            direct = pc_covm_element(model, n).diag
            assert np.max(np.abs(direct - pc_covm_laguerre_diag(model, n))) < 1e-9 * max(1, np.max(np.abs(direct)))
    with pytest.raises(ValueError):
        pc_covm_laguerre_diag(PhotocountingModel(1.0), 1)


def test_laguerre_recurrence_matches_coefficients():
    x = np.linspace(0, 10, 21)
    for n in range(15):
        poly = sum(float(c) * x**i for i, c in enumerate(laguerre_coefficients(n)))
        assert np.allclose(laguerre(n, x), poly, rtol=1e-9, atol=1e-9)
    assert laguerre_coefficients(2) == [1, -2, Fraction(1, 2)]


def test_q_symbol_of_dual_is_poisson_average():
    model = PhotocountingModel(0.7)
    x = np.array([0.0, 0.5, 2.0])
    for n in range(5):
        d = pc_covm_element(model, n).diag
        direct = [sum(d[k] * math.exp(-xi) * xi**k / math.factorial(k) for k in range(len(d))) for xi in x]
        assert np.allclose(pc_covm_q_symbol(model, n, x), direct, atol=1e-12)


@pytest.mark.parametrize("eta", ETAS)
def test_duality_exact(eta):
    assert pc_duality_defect(PhotocountingModel(Fraction(eta)), 15) == 0


def test_duality_at_moderate_efficiency_in_float():
    assert pc_duality_defect(PhotocountingModel(0.7), 15, exact=False) < 1e-8


@pytest.mark.parametrize("eta", (0.5, 0.7))
def test_catalog_matches_geometry(eta):
    model = PhotocountingModel(eta)
    basis = pc_basis(model, 12, 400)
    obs = [
        ("number", None, truncate_observable(lambda k: k, 11)),
        ("normal_moment", 2, truncate_observable(lambda k: k * (k - 1), 11)),
        ("moment", 3, truncate_observable(lambda k: k**3, 11)),
        ("lossless_projector", 4, fock_projector(4, 12)),
    ]
    for kind, param, op in obs:
        cat = pc_contravariant_catalog(model, kind, param, 12).values
        geo = contravariant_coords(basis, op).values
        assert np.max(np.abs(cat - geo)) < 1e-8 * max(1, np.max(np.abs(cat)))


def test_catalog_examples():
    half = PhotocountingModel(Fraction(1, 2))
    assert pc_contravariant_catalog(half, "number", exact=True)[3] == 6
    assert pc_contravariant_catalog(PhotocountingModel(0.37), "click_operator").values[4] == 4
    assert pc_contravariant_catalog(half, "normal_moment", 2, exact=True)[3] == 24
    with pytest.raises(ValueError):
        pc_contravariant_catalog(half, "bogus")


def test_catalog_number_is_n_over_eta():
    for eta in (0.5, 0.7):
        vals = pc_contravariant_catalog(PhotocountingModel(eta), "number").values
        assert np.allclose(vals, np.arange(15) / eta, rtol=1e-14)


def test_normal_exp_catalog_matches_dual_traces():
    model = PhotocountingModel(0.6)
    t = -0.4
    cat = pc_contravariant_catalog(model, "normal_exp_generating", t, 8).values
    for n in range(8):
        d = pc_covm_element(model, n).diag
        direct = sum(d[k] * (1 + t) ** k for k in range(len(d)))
        assert cat[n] == pytest.approx(direct, rel=1e-12)


def test_exp_catalog_taylor_expansion_gives_moments():
    model = PhotocountingModel(0.6)
    h = 1e-2
    # central differences of order 4 recover the first four moments
    ts = h * np.arange(-3, 4)
    vals = np.array([pc_contravariant_catalog(model, "exp_generating", t, 8).values for t in ts])
    derivs = {
        1: (-vals[0] + 9 * vals[1] - 45 * vals[2] + 45 * vals[4] - 9 * vals[5] + vals[6]) / (60 * h),
        2: (2 * vals[0] - 27 * vals[1] + 270 * vals[2] - 490 * vals[3] + 270 * vals[4] - 27 * vals[5] + 2 * vals[6]) / (180 * h**2),
        3: (vals[0] - 8 * vals[1] + 13 * vals[2] - 13 * vals[4] + 8 * vals[5] - vals[6]) / (8 * h**3),
        4: (-vals[0] + 12 * vals[1] - 39 * vals[2] + 56 * vals[3] - 39 * vals[4] + 12 * vals[5] - vals[6]) / (6 * h**4),
    }
    for m, d in derivs.items():
        moments = pc_contravariant_catalog(model, "moment", m, 8).values
        assert np.allclose(d, moments, rtol=1e-3, atol=1e-3)


def test_click_operator_diagonal_is_eta_k():
    eta = Fraction(7, 10)
    d = pc_click_operator(PhotocountingModel(eta), 20, exact=True).diag
    assert all(d[k] == eta * k for k in range(20))


def test_efficiency_transform_examples():
    assert pc_efficiency_transform(0.5, 1.0, 0, 1) == pytest.approx(-1.0)
    assert np.array_equal(pc_efficiency_matrix(0.6, 0.6, 8), np.eye(8))
    with pytest.raises(ValueError):
        pc_efficiency_transform(0.0, 0.5, 0, 0)


def test_efficiency_transform_composes():
    a, b, c = 0.4, 0.7, 0.9
    lhs = pc_efficiency_matrix(b, c, 8) @ pc_efficiency_matrix(a, b, 8)
    assert np.max(np.abs(lhs - pc_efficiency_matrix(a, c, 8))) < 1e-10
    fa, fb, fc = Fraction(2, 5), Fraction(7, 10), Fraction(9, 10)
    x = pc_efficiency_matrix(fb, fc, 6, exact=True)
    y = pc_efficiency_matrix(fa, fb, 6, exact=True)
    z = pc_efficiency_matrix(fa, fc, 6, exact=True)
    assert all(sum(x[i][k] * y[k][j] for k in range(6)) == z[i][j] for i in range(6) for j in range(6))


def test_efficiency_transform_maps_probabilities():
    # counts at eta_to are a linear image of the counts at eta_from
    rho = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    low = np.array([[binomial_pmf(m, k, 0.4) for k in range(5)] for m in range(5)]) @ rho
    high = np.array([[binomial_pmf(m, k, 0.8) for k in range(5)] for m in range(5)]) @ rho
    assert np.allclose(pc_efficiency_matrix(0.8, 0.4, 5) @ high, low, atol=1e-14)
    assert np.allclose(pc_efficiency_matrix(0.4, 0.8, 5) @ low, high, atol=1e-12)


def test_metrics_factorize_through_loss_matrices():
    eta, size = 0.3, 8
    window = 3000
    T = np.array([[binomial_pmf(n, k, eta) for k in range(window)] for n in range(size)])
    g, gc = pc_metric_matrices(PhotocountingModel(eta), size)
    assert np.max(np.abs(T @ T.T - g)) < 1e-8
    S = pc_efficiency_matrix(eta, 1.0, size)
    assert np.max(np.abs(S.T @ S - gc)) / np.max(np.abs(gc)) < 1e-8


def test_trace_formula_examples():
    vac = fock_projector(0, 30)
    assert trace_formula_check(vac, vac) == pytest.approx(1.0, abs=1e-6)
    p0 = pc_povm_element(PhotocountingModel(0.5), 0)
    assert trace_formula_check(p0, p0) == pytest.approx(4 / 3, abs=1e-6)
    e = normal_exp_diag(1.0, 30)
    assert trace_formula_check(e, e) == pytest.approx(1.0, abs=1e-6)


def test_trace_formula_agrees_with_hs_inner():
    a = pc_povm_element(PhotocountingModel(0.7), 2)
    b = exp_diag(0.8)
    assert trace_formula_check(a, b) == pytest.approx(hs_inner(a, b), abs=1e-6)


def test_trace_formula_not_applicable():
    from photogeom.errors import NotHSClassError

    wide = DiagonalOperator(np.ones(60) * 0.1, 1.0, 0)
    with pytest.raises(NotApplicableError):
        trace_formula_check(wide, wide)
    with pytest.raises(NotHSClassError):
        trace_formula_check(normal_exp_diag(0.0, 5), fock_projector(0))


def test_gram_duals_recover_span_coefficients():
    model = PhotocountingModel(0.6)
    povm = pc_povm(model, 8, 300)
    c = np.array([0.5, -1.0, 2.0, 0.0, 1.5, -0.3, 0.2, 1.0])
    op = DiagonalOperator(sum(ci * p.diag for ci, p in zip(c, povm)), 0.0, 0)
    got = contravariant_coords(pc_basis(model, 8, 300, duals="gram"), op).values
    assert np.max(np.abs(got - c)) < 1e-6


def test_closed_form_duals_match_catalog_on_truncated_observable():
    model = PhotocountingModel(0.6)
    op = truncate_observable(lambda k: k**2, 6)
    got = contravariant_coords(pc_basis(model, 10, 300), op).values
    want = [sum(k**2 * pc_covm_element(model, n, 10).diag[k] for k in range(7)) for n in range(10)]
    assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


def test_povm_window_default_certifies_tail():
    for n in range(4):
        op = pc_povm_element(PhotocountingModel(0.3), n)
        assert op.tail_bound < 1e-12
    ops = pc_povm(PhotocountingModel(0.3), 5)
    assert len({op.truncation_dim for op in ops}) == 1
