import math

import numpy as np
import pytest

from src.core.coulomb import (
    FEFFERMAN_SECO_CONSTANT,
    check_coulomb_inequalities,
    coulomb_norm,
    enclosed_mass,
    fefferman_seco_check,
    newton_potential,
    partial_newton_potential,
    potential_at,
)
from src.core.errors import ParameterError
from src.core.radial_core import RadialFunction, build_grid


def _ball_potential(r, q=1.0, R=1.0):
    return np.where(r < R, q / (2.0 * R) * (3.0 - r**2 / R**2), q / r)


class TestNewtonPotential:
    def test_uniform_ball(self, unit_ball):
        r = unit_ball.grid.nodes
        V = newton_potential(unit_ball).values
        np.testing.assert_allclose(V, _ball_potential(r), rtol=1e-10)

    def test_exponential_closed_form(self, exp_density):
        r = exp_density.grid.nodes
        sel = r > 1e-3
        expected = 1.0 / r - (0.5 + 1.0 / r) * np.exp(-r)
        np.testing.assert_allclose(newton_potential(exp_density).values[sel], expected[sel], rtol=1e-6)

    def test_potential_at_off_grid(self, unit_ball):
        assert potential_at(unit_ball, 0.3) == pytest.approx(_ball_potential(0.3), rel=1e-10)
        assert potential_at(unit_ball, 5.0) == pytest.approx(0.2, rel=1e-10)
        with pytest.raises(ParameterError):
            potential_at(unit_ball, 0.0)

    def test_enclosed_mass(self, unit_ball):
        assert enclosed_mass(unit_ball, 0.5) == pytest.approx(0.125, rel=1e-10)
        assert enclosed_mass(unit_ball, math.inf) == pytest.approx(1.0, rel=1e-10)


class TestPartialPotential:
    def test_limits(self, unit_ball):
        full = newton_potential(unit_ball).values
        np.testing.assert_allclose(partial_newton_potential(unit_ball, math.inf).values, full)
        np.testing.assert_allclose(partial_newton_potential(unit_ball, 10.0).values, full)
        assert not partial_newton_potential(unit_ball, 1e-9).values.any()
        with pytest.raises(ParameterError):
            partial_newton_potential(unit_ball, 0.0)

    def test_outside_is_point_charge(self, unit_ball):
        r = unit_ball.grid.nodes
        V = partial_newton_potential(unit_ball, 0.5).values
        outside = r >= 0.5
        np.testing.assert_allclose(V[outside] * r[outside], 0.125, rtol=1e-10)

    def test_interior_plus_exterior_is_full(self, unit_ball):
        interior = partial_newton_potential(unit_ball, 0.5).values
        exterior = newton_potential(unit_ball.restricted(0.5)).values
        np.testing.assert_allclose(interior + exterior, newton_potential(unit_ball).values, rtol=1e-10)

    def test_inside_matches_difference(self, unit_ball):
        # inside the cut, interior potential = full potential minus the shell part
        r = unit_ball.grid.nodes
        V = partial_newton_potential(unit_ball, 0.5).values
        inside = r < 0.4
        shell = 1.5 * (1.0 - 0.25)  # 2π ρ (1 - 0.5²) with ρ = 3/(4π)
        np.testing.assert_allclose(V[inside], _ball_potential(r[inside]) - shell, rtol=1e-9)


def _signed_pair(grid, seed):
    """Two random sums of Gaussian shells, returned as signed charges."""
    rng = np.random.default_rng(seed)
    r = grid.nodes
    out = []
    for _ in range(2):
        vals = np.zeros(grid.n)
        for _ in range(3):
            centre, width, amp = rng.uniform(0.5, 5.0), rng.uniform(0.2, 1.0), rng.uniform(-2.0, 2.0)
            vals += amp * np.exp(-((r - centre) / width) ** 2)
        out.append(RadialFunction(grid, vals))
    return out


class TestCoulombNorm:
    def test_ball_self_energy(self, unit_ball):
        # (3/5) q² / R
        assert coulomb_norm(unit_ball) == pytest.approx(0.6, rel=1e-10)

    def test_exponential(self, exp_density):
        assert coulomb_norm(exp_density) == pytest.approx(5.0 / 32.0, rel=1e-6)

    def test_signed_norm_is_positive(self, unit_ball, ball_grid):
        inner = np.where(ball_grid.nodes <= 0.5, 1.0, 0.0)
        f = unit_ball.with_values(unit_ball.values - 8.0 * 3.0 / (4.0 * math.pi) * inner, is_density=False)
        assert coulomb_norm(f) > 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_random_signed_pairs(self, seed):
        grid = build_grid(1e-5, 30.0, 2000)
        f, g = _signed_pair(grid, seed)
        diff = f.with_values(f.values - g.values)
        total = f.with_values(f.values + g.values)
        Df, Dg = coulomb_norm(f), coulomb_norm(g)
        assert coulomb_norm(diff) >= 0.0
        assert Df >= 0.0 and Dg >= 0.0
        assert coulomb_norm(total) <= (2.0 * Df + 2.0 * Dg) * (1.0 + 1e-12)

    def test_dilation(self, exp_density):
        lam = 2.0
        grid = exp_density.grid
        squeezed = RadialFunction(build_grid(grid.r_min / lam, grid.r_max / lam, grid.n), exp_density.values.copy())
        assert coulomb_norm(squeezed) == pytest.approx(coulomb_norm(exp_density) / lam**5, rel=1e-6)


class TestCoulombInequalities:
    def test_constants_finite(self, exp_density):
        first, second = check_coulomb_inequalities(exp_density, 1.0)
        for report in (first, second):
            assert np.isfinite(report.implied_constant)
            assert report.implied_constant > 0.0
            assert not report.degenerate

    def test_exponential_family_has_no_blowup(self, exp_grid):
        reports = [check_coulomb_inequalities(RadialFunction(exp_grid, np.exp(-k * exp_grid.nodes)), 1.0)
                   for k in (1.0, 2.0, 4.0, 8.0)]
        for which in (0, 1):
            constants = np.array([pair[which].implied_constant for pair in reports])
            assert np.all(np.isfinite(constants))
            assert np.all((constants >= 0.1) & (constants <= 10.0))
            assert constants.max() <= 10.0 * constants.min()

    def test_zero_function_is_degenerate(self, exp_grid):
        zero = RadialFunction(exp_grid, np.zeros(exp_grid.n))
        first, second = check_coulomb_inequalities(zero, 1.0)
        assert first.degenerate and second.degenerate
        assert first.implied_constant == 0.0

    @pytest.mark.parametrize("lam", [0.5, 3.0])
    def test_scale_invariance(self, lam):
        grid = build_grid(1e-5, 80.0, 3000)
        scaled_grid = build_grid(1e-5 / lam, 80.0 / lam, 3000)
        f = RadialFunction(grid, np.exp(-grid.nodes) * (1.0 + grid.nodes))
        g = RadialFunction(scaled_grid, f.values.copy())  # g(r) = f(λr)
        base = check_coulomb_inequalities(f, 2.0)
        dilated = check_coulomb_inequalities(g, 2.0 / lam)
        for a, b in zip(base, dilated):
            assert b.implied_constant == pytest.approx(a.implied_constant, rel=1e-8)

    def test_fefferman_seco_bound(self, exp_density):
        grid = exp_density.grid
        f = RadialFunction(grid, np.exp(-grid.nodes**2))
        report = fefferman_seco_check(f, exp_density)
        assert report.implied_constant <= FEFFERMAN_SECO_CONSTANT

    def test_fefferman_seco_near_equality(self):
        grid = build_grid(1e-6, 1e4, 4000)
        g = RadialFunction(grid, np.exp(-grid.nodes) / (8.0 * math.pi), is_density=True)
        f = RadialFunction(grid, newton_potential(g).values)
        report = fefferman_seco_check(f, g)
        assert report.implied_constant == pytest.approx(FEFFERMAN_SECO_CONSTANT, rel=1e-3)

    def test_fefferman_seco_needs_shared_grid(self, exp_density, unit_ball):
        with pytest.raises(ParameterError):
            fefferman_seco_check(unit_ball, exp_density)
