import numpy as np
import pytest

from hsav.models import AllenCahnParams, allen_cahn, linear_model
from hsav.sav import (
    RadicandError,
    SavState,
    energy,
    energy_increment,
    energy_values,
    init_consistent,
    normalized_variation,
    q_gap,
    stage_rhs,
)
from hsav.spectral import Field, Grid2D


@pytest.fixture
def grid():
    return Grid2D(16, 16)


def ac(grid, **kw):
    p = dict(M=1.0, eps=1.0, gamma0=0.0, C0=1.0)
    p.update(kw)
    return allen_cahn(AllenCahnParams(**p), grid)


class TestInit:
    def test_zero_field(self, grid):
        st = init_consistent(grid.zeros(), ac(grid))
        assert st.q == pytest.approx(np.sqrt(grid.area / 4 + 1), rel=1e-15)
        assert st.t == 0.0

    def test_unit_field(self, grid):
        st = init_consistent(Field(grid, np.ones(grid.shape)), ac(grid))
        assert st.q == 1.0

    def test_zero_radicand_rejected(self, grid):
        with pytest.raises(RadicandError, match="C0"):
            init_consistent(Field(grid, np.ones(grid.shape)), ac(grid, C0=0.0))


class TestStageRhs:
    def test_constant_stage(self, grid):
        gamma0, M, Q = 1.0, 2.0, 0.7
        model = ac(grid, gamma0=gamma0, M=M, C0=50.0)
        Phi = Field(grid, np.ones(grid.shape))
        # g(1) = -gamma0/2 per unit area
        root = np.sqrt(-gamma0 / 2 * grid.area + 50.0)
        k, l = stage_rhs(Phi, Q, model)
        expected = -M * (gamma0 + Q * (-gamma0) / root)
        np.testing.assert_allclose(k.values, expected, rtol=1e-13)
        assert l == pytest.approx(0.5 * (-gamma0 / root) * expected * grid.area, rel=1e-13)

    def test_q_zero_is_linear_flow(self, grid):
        model = ac(grid, gamma0=1.0, C0=20.0)
        X, Y = grid.mesh()
        Phi = np.sin(X) * np.cos(2 * Y)
        k, _ = stage_rhs(Phi, 0.0, model)
        # G L on this mode: -M * (gamma0 + eps^2 * 5)
        np.testing.assert_allclose(k, -(1.0 + 5.0) * Phi, atol=1e-13)

    def test_l_matches_direct_quadrature(self):
        grid = Grid2D(8, 8)
        model = ac(grid, gamma0=1.0, C0=10.0)
        X, _ = grid.mesh()
        Phi = np.sin(X)
        k, l = stage_rhs(Phi, 1.3, model)
        b, root = normalized_variation(Phi, model)
        direct = 0.0
        for i in reversed(range(8)):
            for j in reversed(range(8)):
                direct += b[i, j] / 2 * k[i, j] * grid.hx * grid.hy
        assert abs(l - direct) <= 1e-14 * max(1.0, abs(l))
        # same denominator reused for k and l
        l_again = 0.5 * grid.cell * np.sum(model.g_variation(Phi) / root * k)
        assert abs(l - l_again) <= 1e-15 * max(1.0, abs(l))

    def test_radicand_failure_mid_solve(self, grid):
        model = ac(grid, gamma0=1.0, C0=1.0)
        with pytest.raises(RadicandError):
            stage_rhs(np.ones(grid.shape), 1.0, model)


class TestEnergy:
    def test_minimiser(self, grid):
        model = ac(grid)
        e = energy(SavState(Field(grid, np.ones(grid.shape)), 1.0, 0.0), model)
        assert e.modified == 0.0
        assert e.raw == 0.0

    def test_consistent_state(self, grid):
        model = ac(grid, gamma0=1.0, C0=200.0)
        X, Y = grid.mesh()
        st = init_consistent(Field(grid, 0.8 * np.sin(X) * np.sin(Y)), model)
        e = energy(st, model)
        assert abs(e.modified - e.raw) <= 1e-12 * (1 + abs(e.raw))
        assert q_gap(st, model) <= 1e-15

    def test_raw_energy_by_independent_quadrature(self):
        grid = Grid2D(32, 32)
        model = ac(grid)
        X, _ = grid.mesh()
        phi = np.sin(X)
        st = init_consistent(Field(grid, phi), model)
        # |grad sin x|^2 = cos^2 x and g = (sin^2 x - 1)^2 / 4 = cos^4 x / 4
        grad = 0.5 * np.sum(np.cos(X) ** 2) * grid.cell
        pot = np.sum(0.25 * np.cos(X) ** 4) * grid.cell
        assert energy(st, model).raw == pytest.approx(grad + pot, abs=1e-11)

    def test_gap_formula(self, grid):
        model = ac(grid, gamma0=1.0, C0=200.0)
        X, Y = grid.mesh()
        phi = 0.5 * np.sin(X) * np.sin(Y)
        e = energy_values(phi, 3.0, model)
        assert abs(e.modified - e.raw) == pytest.approx(abs(9.0 - model.radicand(phi)), rel=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
    def test_quadratic_in_state(self, grid, alpha):
        model = linear_model(grid, C0=1.0)
        X, Y = grid.mesh()
        phi = np.cos(X) + 0.3 * np.sin(2 * Y)
        q = 1.7
        e1 = energy_values(phi, q, model).modified + model.C0
        ea = energy_values(alpha * phi, alpha * q, model).modified + model.C0
        assert ea == pytest.approx(alpha ** 2 * e1, rel=1e-14, abs=1e-14)


def test_energy_increment_matches_subtraction(grid):
    model = ac(grid, gamma0=1.0, C0=200.0)
    X, Y = grid.mesh()
    phi0 = 0.5 * np.sin(X) * np.sin(Y)
    phi1 = phi0 + 1e-3 * np.cos(2 * X)
    d = energy_increment(phi0, 3.0, phi1 - phi0, -0.1, model)
    direct = energy_values(phi1, 2.9, model).modified - energy_values(phi0, 3.0, model).modified
    assert d == pytest.approx(direct, rel=1e-10)
    assert energy_increment(phi0, 3.0, 0 * phi0, 0.0, model) == 0.0
