import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdplab.entropic import (CouplingError, EntropicConfig, check_symmetry, entropic_coupling,
                             mutual_information_bits, perfect_perception_objective,
                             perfect_perception_sweep, rdp_curve_perfect_perception,
                             rdp_point, read_coupling_csv, write_coupling_csv)
from rdplab.source import (entropy_bits, entropy_of, make_source,
                           quantized_gaussian_source, squared_error_matrix)
from rdplab.curve import check_shape

from conftest import hb, sources

FORCED = np.array([[0.4, 0.1], [0.1, 0.4]])
RATE_AT_POINT_TWO = 0.2780719051126377  # 1 - H_b(0.2)


def oracle_rate(pmf, W, D):
    """Brute-force convex program: min I(X;Xhat) over couplings with both
    marginals pmf and expected distortion <= D (bits)."""
    m = pmf.size
    B = cp.Variable((m, m), nonneg=True)
    cons = [cp.sum(B, axis=1) == pmf, cp.sum(B, axis=0) == pmf, cp.sum(cp.multiply(W, B)) <= D]
    prob = cp.Problem(cp.Minimize(-cp.sum(cp.entr(B))), cons)
    prob.solve(solver=cp.CLARABEL)
    return 2 * entropy_of(pmf) + prob.value / np.log(2)


def test_lambda_zero_is_independent():
    p = np.array([0.2, 0.3, 0.5])
    W = squared_error_matrix([0, 1, 3], [0, 1, 3])
    B = entropic_coupling(W, p, 0.0)
    np.testing.assert_allclose(B.matrix, np.outer(p, p), atol=1e-12)
    assert rdp_point(B, p, W).rate_bits == pytest.approx(0.0, abs=1e-12)


def test_large_lambda_is_diagonal():
    p = np.array([0.2, 0.3, 0.5])
    W = squared_error_matrix([0, 1, 2], [0, 1, 2])
    B = entropic_coupling(W, p, 1e4)
    off = B.matrix[~np.eye(3, dtype=bool)]
    assert off.max() < 1e-8
    pt = rdp_point(B, p, W)
    assert pt.distortion < 1e-8
    assert pt.rate_bits == pytest.approx(entropy_of(p), abs=1e-8)


def test_binary_forced_coupling_at_point_two():
    W = squared_error_matrix([0, 1], [0, 1])
    B = entropic_coupling(W, np.array([0.5, 0.5]), np.log(4.0))
    np.testing.assert_allclose(B.matrix, FORCED, atol=1e-12)


def test_point_and_mutual_information_of_forced_coupling():
    W = squared_error_matrix([0, 1], [0, 1])
    pt = rdp_point(FORCED, [0.5, 0.5], W)
    assert pt.rate_bits == pytest.approx(RATE_AT_POINT_TWO, abs=1e-12)
    assert pt.distortion == pytest.approx(0.2, abs=1e-15)
    assert pt.perception == 0.0
    assert mutual_information_bits(FORCED) == pytest.approx(RATE_AT_POINT_TWO, abs=1e-12)


def test_mutual_information_examples():
    p = np.array([0.1, 0.2, 0.7])
    assert mutual_information_bits(np.outer(p, p)) == pytest.approx(0.0, abs=1e-15)
    assert mutual_information_bits(np.diag(p)) == pytest.approx(entropy_of(p), abs=1e-14)


def test_rdp_point_rejects_wrong_marginals():
    W = squared_error_matrix([0, 1], [0, 1])
    with pytest.raises(CouplingError):
        rdp_point(np.array([[0.5, 0.2], [0.1, 0.2]]), [0.5, 0.5], W)


def test_binary_curve_closed_form():
    src = make_source([0, 1], [0.5, 0.5])
    curve = rdp_curve_perfect_perception(src, squared_error_matrix(src, src))
    d, r = curve.distortions, curve.rates
    assert d.min() < 0.01 and d.max() == pytest.approx(0.5)
    np.testing.assert_allclose(r, 1 - hb(d), atol=1e-6)


def test_deterministic_source():
    src = make_source([2.0], [1.0])
    curve = rdp_curve_perfect_perception(src, squared_error_matrix(src, src))
    assert [(p.rate_bits, p.distortion) for p in curve.points] == [(0.0, 0.0)]


def test_rejects_asymmetric_or_zero_mass():
    W = squared_error_matrix([0, 1], [0, 1])
    with pytest.raises(CouplingError):
        entropic_coupling(W, np.array([1.0, 0.0]), 1.0)
    with pytest.raises(CouplingError):
        entropic_coupling(squared_error_matrix([0, 1], [0, 2]), np.array([0.5, 0.5]), 1.0)
    with pytest.raises(CouplingError):
        entropic_coupling(W, np.array([0.2, 0.3, 0.5]), 1.0)
    with pytest.raises(ValueError):
        entropic_coupling(W, np.array([0.5, 0.5]), -1.0)


def test_symmetry_check_examples():
    diag = np.diag([0.3, 0.7])
    rec = check_symmetry(diag)
    assert rec.passed and rec.max_asymmetry == 0.0
    # feasible (both marginals uniform) but asymmetric
    B = np.array([[0.2, 0.1, 0.0333333333333333],
                  [0.0, 0.2, 0.1333333333333333],
                  [0.1333333333333334, 0.0333333333333334, 0.1666666666666666]])
    p = np.full(3, 1 / 3)
    rec = check_symmetry(B, 1e-8, p)
    assert not rec.passed
    assert rec.symmetrized_objective <= rec.objective + 1e-12


def test_coupling_csv_round_trip(tmp_path):
    src = make_source([0, 1, 3], [0.2, 0.3, 0.5])
    B = entropic_coupling(squared_error_matrix(src, src), src.pmf, 0.7)
    write_coupling_csv(B, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("# coupling m=3\n")
    np.testing.assert_array_equal(read_coupling_csv(tmp_path / "b.csv"), B.matrix)


@settings(max_examples=20, deadline=None)
@given(sources(min_size=2, max_size=10), st.floats(0.0, 200.0))
def test_coupling_symmetric_with_tight_marginals(src, lam):
    B = entropic_coupling(squared_error_matrix(src, src), src.pmf, lam)
    assert B.converged
    assert check_symmetry(B, 1e-8).passed
    assert B.residual <= 1e-10


@settings(max_examples=10, deadline=None)
@given(sources(min_size=2, max_size=6), st.floats(0.01, 5.0))
def test_alternating_scheme_agrees(src, t):
    # plain two-sided scaling crawls when the kernel is nearly block diagonal,
    # so lambda is scaled to keep every kernel entry above exp(-5)
    W = squared_error_matrix(src, src)
    lam = t / W.values.max()
    a = entropic_coupling(W, src.pmf, lam)
    b = entropic_coupling(W, src.pmf, lam, EntropicConfig(scheme="alternating", max_iters=20_000))
    assert b.converged
    assert check_symmetry(b, 1e-8).passed
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(sources(min_size=2, max_size=8))
def test_sweep_is_monotone_and_consistent(src):
    W = squared_error_matrix(src, src)
    sweep = perfect_perception_sweep(src, W, np.concatenate([[0], np.logspace(-2, 2, 20)]))
    d = np.array([pt.distortion for _, pt in sweep])
    r = np.array([pt.rate_bits for _, pt in sweep])
    assert np.all(np.diff(d) <= 1e-9)
    assert np.all(np.diff(r) >= -1e-9)
    for B, pt in sweep:
        assert pt.rate_bits == pytest.approx(mutual_information_bits(B), abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_matches_convex_program_oracle(seed):
    rng = np.random.default_rng(seed)
    m = 2 + seed % 3
    src = make_source(rng.normal(size=m), rng.dirichlet(np.ones(m)) + 0.02)
    W = squared_error_matrix(src, src)
    sweep = perfect_perception_sweep(src, W, np.logspace(-1, 1.5, 8))
    for _, pt in sweep:
        assert pt.rate_bits == pytest.approx(oracle_rate(src.pmf, W.values, pt.distortion), abs=1e-4)


def test_gaussian_curve_shape_and_endpoint():
    src = quantized_gaussian_source(0, 1, 65, 4)
    curve = rdp_curve_perfect_perception(src, squared_error_matrix(src, src))
    ok, worst = check_shape(curve)
    assert ok, worst
    assert curve.distortions[0] < 1e-6
    assert curve.rates[0] == pytest.approx(entropy_bits(src), abs=1e-3)
    assert curve.rates[-1] == pytest.approx(0.0, abs=1e-9)


def test_objective_equals_mi_when_marginals_match():
    p = np.array([0.25, 0.25, 0.5])
    B = np.array([[0.2, 0.05, 0.0], [0.05, 0.1, 0.1], [0.0, 0.1, 0.4]])
    assert perfect_perception_objective(B, p) == pytest.approx(mutual_information_bits(B), abs=1e-12)
