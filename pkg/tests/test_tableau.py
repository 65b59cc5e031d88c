import numpy as np
import pytest

from hsav.tableau import (
    CLASSICAL_RK4,
    CRANK_NICOLSON,
    GAUSS2_TABLE,
    GAUSS3_TABLE,
    ButcherTableau,
    check_stability,
    format_tableau,
    gauss_tableau,
)

R3, R15 = np.sqrt(3.0), np.sqrt(15.0)


def test_one_stage_is_midpoint():
    t = gauss_tableau(1)
    assert t.A.tolist() == [[0.5]]
    assert t.b.tolist() == [1.0]
    assert t.c.tolist() == [0.5]


def test_two_stage_closed_form():
    t = gauss_tableau(2)
    np.testing.assert_allclose(t.c, [0.5 - R3 / 6, 0.5 + R3 / 6], rtol=0, atol=1e-14)
    np.testing.assert_allclose(t.b, [0.5, 0.5], rtol=0, atol=1e-14)
    np.testing.assert_allclose(t.A, [[0.25, 0.25 - R3 / 6], [0.25 + R3 / 6, 0.25]], rtol=0, atol=1e-14)


def test_three_stage_closed_form():
    t = gauss_tableau(3)
    np.testing.assert_allclose(t.b, [5 / 18, 4 / 9, 5 / 18], rtol=0, atol=1e-14)
    np.testing.assert_allclose(t.c, [0.5 - R15 / 10, 0.5, 0.5 + R15 / 10], rtol=0, atol=1e-14)
    np.testing.assert_allclose(t.A[1], [5 / 36 + R15 / 24, 2 / 9, 5 / 36 - R15 / 24], rtol=0, atol=1e-14)


@pytest.mark.parametrize("gen,table", [(2, GAUSS2_TABLE), (3, GAUSS3_TABLE)])
def test_generator_matches_reference_tables(gen, table):
    t = gauss_tableau(gen)
    for a, b in [(t.A, table.A), (t.b, table.b), (t.c, table.c)]:
        assert np.max(np.abs(a - b)) <= 1e-14


@pytest.mark.parametrize("s", range(1, 6))
def test_order_conditions_and_stability(s):
    t = gauss_tableau(s)
    for k in range(1, 2 * s + 1):
        assert abs(np.sum(t.b * t.c ** (k - 1)) - 1 / k) <= 1e-12
    rep = check_stability(t)
    assert rep.passes
    assert rep.max_residual <= 1e-15
    np.testing.assert_allclose(t.A.sum(axis=1), t.c, rtol=0, atol=1e-14)
    np.testing.assert_allclose(t.c + t.c[::-1], 1.0, rtol=0, atol=1e-13)
    assert np.all(np.diff(t.c) > 0) and 0 <= t.c[0] and t.c[-1] <= 1
    assert abs(t.b.sum() - 1) <= 1e-14


@pytest.mark.parametrize("s", [6, 8, 10])
def test_high_stage_counts(s):
    t = gauss_tableau(s)
    assert check_stability(t).passes
    for k in range(1, 2 * s + 1):
        assert abs(np.sum(t.b * t.c ** (k - 1)) - 1 / k) <= 1e-12


@pytest.mark.parametrize("s", [0, 11, 2.5])
def test_out_of_range(s):
    with pytest.raises(ValueError):
        gauss_tableau(s)


def test_gauss2_residual_by_substitution():
    rep = check_stability(GAUSS2_TABLE)
    assert rep.passes and rep.max_residual <= 1e-15


def test_explicit_rk4_fails():
    rep = check_stability(CLASSICAL_RK4)
    assert not rep.passes
    # diagonal entries of B A + A^T B - b b^T are -b_i^2 for an explicit method
    assert rep.max_residual >= (1 / 3) ** 2 - 1e-15


def test_trapezoidal_rule_fails():
    # M_11 = 2 b_1 a_11 - b_1^2 = -1/4, so the trapezoidal rule is not
    # algebraically stable
    rep = check_stability(CRANK_NICOLSON)
    assert not rep.passes
    assert rep.max_residual == pytest.approx(0.25, abs=1e-16)


def test_negative_weight_fails():
    t = ButcherTableau([[0.5, 0.0], [0.0, 0.5]], [1.5, -0.5], [0.5, 0.5])
    rep = check_stability(t)
    assert rep.min_weight == -0.5
    assert not rep.passes


def test_format():
    text = format_tableau(gauss_tableau(2))
    assert "0.21132486540518711" in text
    assert text.count("\n") == 3
