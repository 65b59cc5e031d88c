import numpy as np
import pytest

from hsav import harness
from hsav.harness import (
    ConvergenceRow,
    ConvergenceTable,
    disk_volume,
    energy_sweep,
    fit_power_law,
    linear_exact,
    observed_orders,
    oracle_reference,
    refinement_study,
)
from hsav.models import AllenCahnParams, CahnHilliardParams, allen_cahn, cahn_hilliard, disk, linear_model, random_field
from hsav.sav import init_consistent
from hsav.spectral import Field, Grid2D
from hsav.stepper import hsav_rk_step
from hsav.tableau import gauss_tableau


def smooth(grid, amp=0.5):
    X, Y = grid.mesh()
    return Field(grid, amp * np.sin(X) * np.sin(Y) + 0.2 * amp * np.cos(2 * X))


def test_observed_orders_halving():
    orders = observed_orders([0.1, 0.05, 0.025], [1.0, 0.25, 0.0625])
    assert orders[0] is None
    assert orders[1] == pytest.approx(2.0) and orders[2] == pytest.approx(2.0)


class TestRefinement:
    def test_linear_midpoint_order_two(self):
        grid = Grid2D(16, 16)
        model = linear_model(grid)
        phi0 = smooth(grid)
        st0 = init_consistent(phi0, model)
        tab = refinement_study(
            model, st0, "gauss1", [0.1, 0.05, 0.025, 0.0125], 1.0, reference="analytic",
            exact=lambda g, t: linear_exact(model, phi0, t),
        )
        assert tab.rows[0].observed_order is None
        assert np.all(np.abs(tab.orders[1:] - 2) <= 0.1)

    def test_reference_kinds_consistent(self):
        grid = Grid2D(16, 16)
        model = linear_model(grid)
        st0 = init_consistent(smooth(grid), model)
        dts = [0.05, 0.025, 0.0125, 0.00625]
        c = refinement_study(model, st0, "gauss1", dts, 1.0, "cauchy")
        f = refinement_study(model, st0, "gauss1", dts, 1.0, "finest_dt", norm="max")
        assert len(c.rows) == len(f.rows) == 3
        assert f.norm == "max" and c.reference == "cauchy"
        # a finest-dt reference biases its last pair upward (15/3 ratio), so compare the first pair
        assert abs(c.orders[1] - f.orders[1]) <= 0.3

    @pytest.mark.parametrize("dts", [[0.1, 0.1, 0.05], [0.05, 0.1], [0.1], [0.3, 0.15]])
    def test_bad_dt_lists(self, dts):
        grid = Grid2D(8, 8)
        model = linear_model(grid)
        st0 = init_consistent(smooth(grid), model)
        with pytest.raises(ValueError):
            refinement_study(model, st0, "gauss1", dts, 1.0)

    def test_floor_filter(self):
        rows = (ConvergenceRow(0.1, 1e-6), ConvergenceRow(0.05, 1e-8, 6.6), ConvergenceRow(0.025, 1e-13, 16.0))
        assert ConvergenceTable(rows).orders_above_floor(1e-12).tolist() == [6.6]


class TestEnergySweep:
    def test_traces_monotone_and_consistent(self):
        grid = Grid2D(16, 16, 4 * np.pi, 4 * np.pi)
        model = cahn_hilliard(CahnHilliardParams(lam=0.1, eps=0.1, C0=200.0), grid)
        st0 = init_consistent(random_field(grid, 0.2, seed=2), model)
        traces = energy_sweep(model, st0, ["gauss2", "cn"], [0.01, 0.001], 0.05)
        assert [(t.method, t.dt) for t in traces] == [("gauss2", 0.01), ("gauss2", 0.001), ("cn", 0.01), ("cn", 0.001)]
        for tr in traces:
            assert tr.ok and tr.monotone()
            assert tr.t.size == int(round(0.05 / tr.dt)) + 1
        fine = traces[1]
        assert np.max(np.abs(fine.modified - fine.raw) / np.abs(fine.raw)) <= 1e-4

    def test_empty(self):
        grid = Grid2D(8, 8)
        model = linear_model(grid)
        assert energy_sweep(model, init_consistent(smooth(grid), model), [], [0.1], 1.0) == []

    def test_failures_recorded(self):
        grid = Grid2D(16, 16)
        model = allen_cahn(AllenCahnParams(C0=50.0), grid)
        st0 = init_consistent(smooth(grid), model)
        from hsav.stepper import SolverConfig

        traces = energy_sweep(model, st0, ["gauss2", "cn"], [0.1], 0.3, SolverConfig(max_iterations=2))
        assert traces[0].failure is not None and traces[0].t.size == 1
        assert traces[1].ok


class TestDisk:
    def test_volume_of_initial_disk(self):
        grid = Grid2D(256, 256, 256, 256, -128, -128)
        vol = disk_volume(disk(grid, 100).values, grid)
        # one cell-perimeter worth of area
        assert abs(vol - np.pi * 100 ** 2) <= 2 * np.pi * 100 * grid.hx

    def test_setup(self):
        model, st0 = harness.disk_setup(N=64)
        assert model.grid.x[0] == -128 and st0.q > 0

    def test_linear_fit(self):
        t = np.linspace(0, 10, 11)
        slope, icpt = harness.linear_fit(t, 5 - 2 * t, (2, 10))
        assert slope == pytest.approx(-2) and icpt == pytest.approx(5)


class TestPowerLaw:
    def test_recovers_slope(self):
        t = np.geomspace(1, 1000, 50)
        fit = fit_power_law(t, 3 * t ** (-1 / 3), (10, 1000))
        assert fit.slope == pytest.approx(-1 / 3, abs=1e-12)
        assert fit.intercept == pytest.approx(np.log(3))
        assert fit.fit_window == (10, 1000)

    def test_too_few_samples(self):
        t = np.array([1.0, 5, 20, 30, 40, 50])
        with pytest.raises(ValueError, match="at least 5"):
            fit_power_law(t, t ** -0.3, (10, 45))

    def test_nonpositive_energy(self):
        t = np.linspace(10, 20, 10)
        with pytest.raises(ValueError):
            fit_power_law(t, np.linspace(-1, 1, 10), (10, 20))


class TestOracle:
    def test_linear_matches_exponential(self):
        grid = Grid2D(8, 8)
        model = linear_model(grid)
        phi0 = smooth(grid)
        ref = oracle_reference(model, phi0, 0.01)
        assert np.max(np.abs(ref.values - linear_exact(model, phi0, 0.01))) <= 1e-9

    def test_zero_time(self):
        grid = Grid2D(8, 8)
        phi0 = smooth(grid)
        out = oracle_reference(linear_model(grid), phi0, 0.0)
        np.testing.assert_array_equal(out.values, phi0.values)

    def test_limits(self):
        with pytest.raises(ValueError):
            oracle_reference(linear_model(Grid2D(32, 32)), smooth(Grid2D(32, 32)), 0.01)
        with pytest.raises(ValueError, match="budget"):
            oracle_reference(linear_model(Grid2D(8, 8)), smooth(Grid2D(8, 8)), 1.0)

    def test_gauss2_step_matches_oracle(self):
        grid = Grid2D(8, 8)
        model = allen_cahn(AllenCahnParams(C0=50.0), grid)
        X, Y = grid.mesh()
        phi0 = Field(grid, np.sin(X) * np.sin(Y))
        ref = oracle_reference(model, phi0, 1e-3)
        st, _ = hsav_rk_step(init_consistent(phi0, model), model, gauss_tableau(2), 1e-3)
        assert harness.norm_h(st.phi.values - ref.values, grid) <= 1e-10


def test_csv_round_trip(tmp_path):
    tr = harness.EnergyTrace("gauss2", 0.1, np.array([0.0, 0.1]), np.array([2.0, 1.5]), np.array([2.0, 1.4]), np.array([1.0, 0.9]))
    header = harness.manifest_comment({"a": 1}, 7)
    harness.write_energy_csv(tmp_path / "energy.csv", tr, header)
    text = (tmp_path / "energy.csv").read_text()
    assert text.startswith("# manifest: config_sha256=") and "seed=7" in text.splitlines()[0]
    assert "\r" not in text
    cols = harness.read_csv(tmp_path / "energy.csv")
    assert list(cols) == ["t", "E_modified", "E_raw", "q"]
    np.testing.assert_array_equal(cols["E_raw"], tr.raw)

    table = ConvergenceTable((ConvergenceRow(0.1, 1e-3), ConvergenceRow(0.05, 1e-4, 3.32)), method="cn")
    harness.write_convergence_csv(tmp_path / "convergence.csv", table, header)
    cols = harness.read_csv(tmp_path / "convergence.csv")
    assert np.isnan(cols["order"][0]) and cols["order"][1] == 3.32

    dt = harness.DiskTrace("gauss3", 0.1, np.array([0.0, 1.0]), np.array([3.0, 2.0]))
    harness.write_disk_csv(tmp_path / "disk.csv", dt, header)
    assert list(harness.read_csv(tmp_path / "disk.csv")) == ["t", "volume"]


def test_config_hash_is_order_independent():
    assert harness.config_hash({"a": 1, "b": 2}) == harness.config_hash({"b": 2, "a": 1})
