import io
import math
from fractions import Fraction

import numpy as np
import pytest

from photogeom.clickdet import ArrayDetector, array_basis, array_povm
from photogeom.errors import RankDeficientError
from photogeom.fockops import fock_projector
from photogeom.geometry import CoordinateVector, estimate_expectation
from photogeom.phasespace import click_probabilities, sample_clicks
from photogeom.pseudoinv import (
    default_fock_window,
    dump_matrix,
    moore_penrose,
    penrose_conditions,
    photocount_element,
    reconstruct_pn_least_squares,
    s_matrix_from_duals,
    stirling_pseudoinverse,
    t_matrix,
    transform_pair,
)

from oracles import stirling1_unsigned, stirling2

DET10 = ArrayDetector(10)


def _fock_stats(det, n):
    p = np.zeros(n + 1)
    p[n] = 1.0
    return click_probabilities(det, p)


def test_t_matrix_examples():
    T = t_matrix(DET10, 40)
    assert T.shape == (10, 40)
    assert T[1, 2] == pytest.approx(0.1) and T[2, 2] == pytest.approx(0.9)
    assert T[0, 2] == 0 and np.all(T[3:, 2] == 0)
    assert list(T[:, 0]) == [1] + [0] * 9
    assert default_fock_window(DET10) == 40
    with pytest.raises(ValueError):
        t_matrix(DET10, 5)


def test_t_entries_match_stirling_oracle():
    T = t_matrix(ArrayDetector(6), 20, include_saturated=True)
    for m in range(7):
        for n in range(20):
            want = math.comb(6, m) * math.factorial(m) * stirling2(n, m) / 6**n
            assert T[m, n] == pytest.approx(want, rel=1e-14, abs=1e-300)


def test_t_columns_are_click_distributions():
    T = t_matrix(DET10, 40, include_saturated=True)
    assert np.max(np.abs(T.sum(axis=0) - 1)) < 1e-12
    # the effective rows alone sum to one only below N photons
    short = t_matrix(DET10, 40).sum(axis=0)
    assert np.allclose(short[:10], 1) and np.all(short[10:] < 1)


def test_t_rows_expand_click_elements_in_photocount_elements():
    # Pi_m(eta, nu) = sum_n T[m, n] Lambda_n(eta, nu), independent of eta and nu
    for eta, nu in ((1.0, 0.0), (0.7, 0.05)):
        det = ArrayDetector(6, eta, nu)
        T = t_matrix(det, 250, include_saturated=True)
        povm = array_povm(det, 30)
        lam = np.array([photocount_element(n, eta, nu, 30).diag for n in range(250)])
        assert np.max(np.abs(T @ lam - np.array([p.diag for p in povm]))) < 1e-8


def test_moore_penrose_closed_forms():
    assert np.allclose(moore_penrose(np.eye(4)), np.eye(4))
    r = np.array([[1.0, 2.0, -2.0]])
    assert np.allclose(moore_penrose(r), r.T / 9)
    with pytest.raises(RankDeficientError) as info:
        moore_penrose(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert len(info.value.singular_values) == 2


def test_penrose_conditions_hold():
    T = t_matrix(DET10, 40)
    S = moore_penrose(T)
    assert max(penrose_conditions(T, S).values()) < 1e-8


def test_pseudoinverse_matches_normal_equations():
    T = t_matrix(ArrayDetector(5), 20)
    oracle = T.T @ np.linalg.inv(T @ T.T)
    assert np.max(np.abs(moore_penrose(T) - oracle)) < 1e-8


def test_least_squares_optimality():
    pair = transform_pair(DET10, 40)
    rng = np.random.default_rng(2)
    rho = rng.dirichlet(np.ones(10))
    p = pair.S @ rho
    best = np.linalg.norm(pair.T @ p - rho)
    for _ in range(200):
        q = p + rng.normal(scale=1e-3, size=p.shape)
        assert np.linalg.norm(pair.T @ q - rho) >= best - 1e-12
    # among all minimizers it has the smallest norm
    null = np.linalg.svd(pair.T)[2][10:]
    for v in null[:5]:
        assert np.linalg.norm(p + 0.01 * v) > np.linalg.norm(p)


def test_projector_onto_row_space():
    pair = transform_pair(DET10, 40)
    rng = np.random.default_rng(8)
    v = pair.T.T @ rng.normal(size=10)
    assert np.max(np.abs(pair.S @ pair.T @ v - v)) < 1e-6 * np.max(np.abs(v))


def test_stirling_pseudoinverse_entries():
    St = stirling_pseudoinverse(DET10, 40, exact=True)
    assert St[0][0] == 1 and St[0][1] == 0 and St[1][1] == 1
    for m in range(10):
        for n in range(10):
            want = (
                Fraction((-1) ** (n - m) * 10**m * stirling1_unsigned(n, m), math.comb(10, n) * math.factorial(n))
                if n >= m
                else 0
            )
            assert St[m][n] == want
    assert all(v == 0 for row in St[10:] for v in row)


def test_stirling_pseudoinverse_is_right_inverse_but_not_moore_penrose():
    T = t_matrix(DET10, 40)
    St = stirling_pseudoinverse(DET10, 40)
    assert np.max(np.abs(T @ St - np.eye(10))) < 1e-10
    checks = penrose_conditions(T, St)
    assert checks["TST=T"] < 1e-8 and checks["STS=S"] < 1e-8 and checks["(TS)^T=TS"] < 1e-8
    assert checks["(ST)^T=ST"] > 1.0


def test_vacuum_reconstruction():
    rec = reconstruct_pn_least_squares(DET10, _fock_stats(DET10, 0))
    assert rec.p_tilde[0] == pytest.approx(1, abs=1e-8)
    assert np.max(np.abs(rec.p_tilde[1:])) < 1e-8
    assert rec.residual < 1e-12


def test_two_photon_reconstruction_is_optimal():
    rho = _fock_stats(DET10, 2)
    rec = reconstruct_pn_least_squares(DET10, rho)
    T = t_matrix(DET10, 40)
    truth = np.zeros(40)
    truth[2] = 1
    assert rec.residual <= np.linalg.norm(T @ truth - rho[:10]) + 1e-12
    assert rec.p_tilde[2] > 0.99


def test_eight_photons_are_corrupted():
    rec = reconstruct_pn_least_squares(DET10, _fock_stats(DET10, 8))
    assert rec.p_tilde[8] < 0.5
    assert np.sum(np.abs(rec.p_tilde) > 0.05) >= 4
    assert rec.completion_norms[8] > 0.7
    assert rec.completion_norms[0] < 1e-6


def test_completion_norms_match_fock_mismatch():
    from photogeom.clickdet import observable_mismatch

    rec = reconstruct_pn_least_squares(ArrayDetector(10), _fock_stats(DET10, 0), 400)
    for n in (2, 5, 8):
        assert rec.completion_norms[n] == pytest.approx(observable_mismatch(DET10, "fock_projector", n)[1], abs=1e-7)


def test_histogram_input_and_validation():
    h = sample_clicks(_fock_stats(DET10, 3), 5000, seed=1)
    rec = reconstruct_pn_least_squares(DET10, h)
    assert rec.p_tilde.shape == (40,)
    with pytest.raises(ValueError):
        reconstruct_pn_least_squares(DET10, [0.5, 0.5])


def test_least_squares_equals_geometric_estimate():
    # with a long Fock window the pseudoinverse reproduces the dual-basis estimates of |n><n|
    det = DET10
    basis = array_basis(det)
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(15))
    rho = click_probabilities(det, p)
    rec = reconstruct_pn_least_squares(det, rho, 400)
    stats = CoordinateVector(rho, "covariant", tuple(range(11)))
    for n in range(12):
        est = estimate_expectation(basis, fock_projector(n), stats).estimate
        assert rec.p_tilde[n] == pytest.approx(est, abs=1e-8)


def test_dual_s_matrix_equals_pseudoinverse_for_ideal_detector():
    S = s_matrix_from_duals(DET10, 40)
    mp = moore_penrose(t_matrix(DET10, 400))[:40]
    assert np.max(np.abs(S - mp)) < 1e-8


def test_pseudoinverse_of_t_is_independent_of_detector_parameters():
    a = transform_pair(ArrayDetector(10, 1.0, 0.0), 40)
    b = transform_pair(ArrayDetector(10, 0.7, 0.05), 40)
    assert np.max(np.abs(a.T - b.T)) == 0 and np.max(np.abs(a.S - b.S)) == 0


def test_dual_s_matrix_is_independent_of_detector_parameters():
    # S computed through the dual click basis at each (eta, nu); see the decisions ledger
    ideal = s_matrix_from_duals(ArrayDetector(10, 1.0, 0.0), 40)
    lossy = s_matrix_from_duals(ArrayDetector(10, 0.7, 0.05), 40)
    diff = float(np.max(np.abs(ideal - lossy)))
    assert diff < 1e-8, f"max |S(1,0) - S(0.7,0.05)| = {diff:.4g}"


def test_photocount_element_with_dark_counts():
    lam = [photocount_element(n, 0.6, 0.2, 60) for n in range(80)]
    total = sum(op.diag for op in lam)
    assert np.max(np.abs(total - 1)) < 1e-12
    assert lam[0].diag[0] == pytest.approx(math.exp(-0.2))
    assert lam[3].tail_bound < 1e-9
    assert math.isinf(photocount_element(5, 0.6, 0.0, 3).tail_bound)


def test_dump_format():
    buf = io.StringIO()
    dump_matrix(buf, np.array([[1.0, 1 / 3], [0.0, -2.5e-20]]), "S")
    assert buf.getvalue() == "# S 2 2\n1 0.333333333333\n0 -2.5e-20\n"
