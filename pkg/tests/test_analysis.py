import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import optimize

from src.core import analysis
from src.core.analysis import (
    ScreenedPair,
    compare_screened,
    fit_loglog,
    harmonic_majorant_check,
    hartree_ratio,
    interior_mass_identity,
    ionization_scan,
    radius_from_density,
    radius_of_atom,
    screened_diagonal,
    screening_constant,
    small_r_constant,
)
from src.core.errors import FitError, ParameterError
from src.core.radial_core import RadialFunction, build_grid, default_grid, resample, tf_grid
from src.core.tf_solver import ModelConstants, tf_atomic_solve
from src.core.tfdw_solver import BoundFlag, FlowConfig, TFDWSolution, tfdw_minimize, tfdw_terms


def _shells(grid, rng, count=3):
    """Random sum of Gaussian shells centred in [0.5, 5]."""
    r = grid.nodes
    vals = np.zeros(grid.n)
    for _ in range(count):
        centre, width, amp = rng.uniform(0.5, 5.0), rng.uniform(0.2, 1.0), rng.uniform(0.1, 2.0)
        vals += amp * np.exp(-((r - centre) / width) ** 2)
    return RadialFunction(grid, vals, is_density=True)


def _solution(rho, Z, N, terms=None):
    psi = RadialFunction(rho.grid, np.sqrt(rho.values))
    return TFDWSolution(psi=psi, rho0=rho, energy=0.0, mu=0.0, iterations=0, residual=0.0,
                        constants=ModelConstants(Z=Z, N=N), terms=terms)


class TestFit:
    def test_exact_power_law(self):
        x = np.geomspace(0.1, 10.0, 20)
        slope, intercept = fit_loglog(x, 3.0 * x**-2.5)
        assert slope == pytest.approx(-2.5, abs=1e-12)
        assert intercept == pytest.approx(math.log(3.0), abs=1e-12)

    def test_too_few_points(self):
        x = np.geomspace(0.1, 10.0, 5)
        with pytest.raises(FitError):
            fit_loglog(x, x)

    def test_zero_values_are_skipped(self):
        x = np.geomspace(0.1, 10.0, 10)
        y = x**2
        y[3] = 0.0
        with pytest.raises(FitError, match="9 usable"):
            fit_loglog(x, y, min_points=10)


class TestScreenedDiagonal:
    def test_no_electrons(self, exp_grid):
        zero = RadialFunction(exp_grid, np.zeros(exp_grid.n), is_density=True)
        np.testing.assert_allclose(screened_diagonal(zero, 3.0).values, 3.0 / exp_grid.nodes)

    def test_uniform_ball(self, unit_ball):
        diag = screened_diagonal(unit_ball, 1.0)
        i = int(np.searchsorted(unit_ball.grid.nodes, 0.5))
        assert diag.values[i] == pytest.approx(1.75, rel=1e-8)

    def test_tf_screening_constant(self, tf_z5):
        diag = screened_diagonal(tf_z5.rho_tf, 5.0)
        C = screening_constant(diag, 5.0 ** (-1.0 / 3.0), 1.0)
        # Φ_r(r) <= Z/r bounds r⁴Φ_r(r) by Z r_hi³
        assert 0.0 < C <= 5.0
        with pytest.raises(ParameterError):
            screening_constant(diag, 2e3, 3e3)

    def test_tf_screening_constant_grid_doubling(self, tf_z5):
        lo = 5.0 ** (-1.0 / 3.0)
        fine = tf_atomic_solve(ModelConstants(Z=5.0), grid=tf_grid(5.0, n=8000))
        coarse_C = screening_constant(screened_diagonal(tf_z5.rho_tf, 5.0), lo, 1.0)
        fine_C = screening_constant(screened_diagonal(fine.rho_tf, 5.0), lo, 1.0)
        assert fine_C == pytest.approx(coarse_C, rel=0.05)

    def test_small_r_constant(self):
        Z = 8.0
        r = np.geomspace(1e-4, 2.0, 200)
        diff = 2.0 * Z ** (4.0 / 3.0) * r ** (1.0 / 12.0)
        pair = ScreenedPair(r, diff, np.zeros_like(r), diff)
        assert small_r_constant(pair, Z) == pytest.approx(2.0, rel=1e-12)
        with pytest.raises(ParameterError):
            small_r_constant(ScreenedPair(r[r > 1.0], r[r > 1.0], r[r > 1.0], r[r > 1.0]), Z)

    @pytest.mark.slow
    def test_small_r_regime_bounded(self):
        constants = {}
        for Z in (10.0, 50.0):
            sol = tfdw_minimize(ModelConstants(Z=Z), strict=False)
            pair = compare_screened(sol, tf_atomic_solve(ModelConstants(Z=Z)))
            constants[Z] = small_r_constant(pair, Z)
        assert all(0.0 < C <= 10.0 for C in constants.values())
        assert constants[50.0] <= 2.0 * constants[10.0]

    def test_compare_identical_models(self, tf_z5):
        grid = default_grid(5.0, 5.0)
        rho0 = resample(tf_z5.rho_tf, grid)
        pair = compare_screened(_solution(rho0, 5.0, 5.0), tf_z5, window=(0.05, 0.5))
        r = pair.r_values
        assert np.all(np.isfinite(pair.diff))
        assert np.all(np.abs(pair.diff) <= 1e-4 * 5.0 / r)
        assert pair.phi_diag[0] == pytest.approx(5.0 / r[0], rel=1e-4)
        assert pair.phi_tf_diag[0] == pytest.approx(5.0 / r[0], rel=1e-4)
        assert math.isfinite(pair.slope)

    def test_compare_rejects_mismatch(self, tf_z5, exp_density):
        with pytest.raises(ParameterError, match="charges"):
            compare_screened(_solution(exp_density, 1.0, 1.0), tf_z5)
        with pytest.raises(ParameterError):
            compare_screened(_solution(exp_density, 5.0, 1.0), tf_z5)

    def test_compare_needs_fit_points(self, tf_z5):
        rho0 = resample(tf_z5.rho_tf, default_grid(5.0, 5.0))
        # Z^{-1/3} > 0.5: the default window is empty for Z = 5
        with pytest.raises(FitError):
            compare_screened(_solution(rho0, 5.0, 5.0), tf_z5)


class TestInteriorMassIdentity:
    def test_identical_densities(self, exp_density):
        assert interior_mass_identity(exp_density, exp_density, 1.0, 1.0) == (0.0, 0.0)

    def test_ball_against_vacuum(self, unit_ball, ball_grid):
        zero = RadialFunction(ball_grid, np.zeros(ball_grid.n), is_density=True)
        lhs, rhs = interior_mass_identity(unit_ball, zero, 1.0, 1.5)
        assert lhs == pytest.approx(1.0, rel=1e-10)
        assert rhs == pytest.approx(1.0, rel=1e-10)

    def test_tf_against_exponential(self, tf_z1, exp_density):
        lhs, rhs = interior_mass_identity(tf_z1.rho_tf, exp_density, 1.0, 1.0)
        assert lhs == pytest.approx(rhs, rel=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_pairs(self, seed):
        rng = np.random.default_rng(seed)
        grid = build_grid(1e-4, 20.0, 1500)
        a, b = _shells(grid, rng), _shells(grid, rng)
        Z = rng.uniform(1.0, 10.0)
        r = rng.uniform(0.1, 10.0)
        lhs, rhs = interior_mass_identity(a, b, Z, r)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-14)

    def test_radius_off_grid(self, exp_density):
        with pytest.raises(ParameterError):
            interior_mass_identity(exp_density, exp_density, 1.0, 100.0)


class TestHarmonicMajorant:
    def test_vacuum(self, exp_grid):
        zero = RadialFunction(exp_grid, np.zeros(exp_grid.n), is_density=True)
        report = harmonic_majorant_check(zero, 2.0, 1.0)
        assert report.passed
        assert report.value_at_r == pytest.approx(2.0)

    def test_tf_atom(self, tf_z5):
        assert harmonic_majorant_check(tf_z5.rho_tf, 5.0, 5.0 ** (-1.0 / 3.0)).passed

    @pytest.mark.parametrize("seed", range(10))
    def test_random_densities(self, seed):
        rng = np.random.default_rng(100 + seed)
        grid = build_grid(1e-4, 20.0, 1500)
        rho = _shells(grid, rng)
        assert harmonic_majorant_check(rho, rng.uniform(1.0, 10.0), rng.uniform(0.1, 10.0)).passed


class TestRadius:
    def test_exponential_closed_form(self, exp_density):
        def tail(R):
            return math.exp(-R) * (1.0 + R + R * R / 2.0)

        expected = optimize.brentq(lambda R: tail(R) - 0.5, 0.1, 20.0, xtol=1e-14)
        result = radius_from_density(exp_density, 0.5, 1.0)
        assert result.R == pytest.approx(expected, rel=1e-6)
        assert result.ratio == pytest.approx(0.5 ** (1.0 / 3.0) * result.R)

    def test_monotone_in_kappa(self, exp_density):
        radii = [radius_from_density(exp_density, k, 1.0).R for k in (0.01, 0.1, 0.3, 0.6, 0.9)]
        assert all(a >= b for a, b in zip(radii, radii[1:]))

    def test_whole_mass(self, exp_density):
        result = radius_from_density(exp_density, 1.0, 1.0, total=1.0)
        assert result.R == 0.0

    def test_invalid_kappa(self, exp_density):
        with pytest.raises(ParameterError):
            radius_from_density(exp_density, 0.0, 1.0)
        with pytest.raises(ParameterError):
            radius_from_density(exp_density, 2.0, 1.0)
        with pytest.raises(ParameterError, match="exceeds N"):
            radius_of_atom(_solution(exp_density, 1.0, 1.0), 1.5)

    def test_tf_radius_trend(self, tf_z5):
        # in the TF limit κ^{1/3} R / B_tf tends to one as κ shrinks
        sol = _solution(tf_z5.rho_tf, 5.0, 5.0)
        ratios = [radius_of_atom(sol, k).ratio for k in (1.0, 0.1, 0.01)]
        gaps = [abs(x - 1.0) for x in ratios]
        assert gaps[0] > gaps[1] > gaps[2]


class TestIonization:
    def test_invalid_arguments(self):
        with pytest.raises(ParameterError):
            ionization_scan([], 0.25)
        with pytest.raises(ParameterError):
            ionization_scan([1.0, -2.0], 0.25)
        with pytest.raises(ParameterError):
            ionization_scan([1.0], 0.0)

    def test_bisection_warm_starts_from_latest_solution(self, monkeypatch):
        calls = []

        def fake_solve(base, Z, N, config, warm):
            calls.append((N, None if warm is None else warm.N))
            return SimpleNamespace(N=N)

        monkeypatch.setattr(analysis, "_solve_at", fake_solve)
        monkeypatch.setattr(analysis, "bound_state_test",
                            lambda sol, config: BoundFlag.BOUND if sol.N <= 1.8 else BoundFlag.UNBOUND)
        lo, hi, flag = analysis.critical_electron_number(1.0, 0.25, FlowConfig(), ModelConstants(Z=1.0))
        assert lo <= 1.8 < hi
        assert hi - lo <= 0.25
        assert flag == BoundFlag.UNBOUND.value
        assert calls[0] == (1.0, None)
        for (_, warm), (previous, _) in zip(calls[1:], calls):
            assert warm == previous

    @pytest.mark.slow
    def test_small_scan(self):
        curve = ionization_scan([1.0, 2.0], scan_step=0.25, config=FlowConfig(max_iter=5000))
        assert not curve.failures
        for Z, Nc, upper in zip(curve.Z_values, curve.Nc_values, curve.upper_values):
            assert Nc >= Z
            assert upper - Nc <= 0.25
        assert all(curve.coarse_bound_check)


def test_hartree_ratio(exp_density):
    c = ModelConstants(Z=1.0)
    psi = RadialFunction(exp_density.grid, np.sqrt(exp_density.values))
    sol = _solution(exp_density, 1.0, 1.0, terms=tfdw_terms(psi, c))
    assert hartree_ratio(sol) == pytest.approx(5.0 / 32.0 / 2.0, rel=1e-6)
    with pytest.raises(ParameterError):
        hartree_ratio(_solution(exp_density, 1.0, 1.0))


@pytest.mark.slow
def test_radius_of_heavy_atom():
    sol = tfdw_minimize(ModelConstants(Z=200.0, N=200.0), strict=False)
    results = [radius_of_atom(sol, k) for k in (10.0, 30.0, 100.0)]
    for res in results:
        assert abs(res.ratio - 1.0) <= 0.25
    assert results[0].R >= results[1].R >= results[2].R


@pytest.mark.slow
def test_ionization_sweep_has_no_growth():
    Zs = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]
    curve = ionization_scan(Zs, scan_step=0.25, workers=3)
    assert not curve.failures
    assert all(Nc >= Z for Z, Nc in zip(curve.Z_values, curve.Nc_values))
    assert abs(curve.excess_slope) <= 0.02
    assert all(curve.coarse_bound_check)
