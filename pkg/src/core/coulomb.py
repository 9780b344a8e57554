"""Newton potentials of radial charge distributions and the Coulomb norm.

For radial ρ, Newton's theorem gives

    (ρ * |x|^-1)(r) = M(r)/r + 4π ∫_r^∞ s ρ(s) ds,   M(r) = ∫_{|y|<r} ρ.

Both pieces are accumulated with the grid's own product weights (4πr² for
M, 4πr for the outer integral), so r·V(r) equals the quadrature mass exactly
beyond the support of ρ.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.core.errors import ParameterError
from src.core.radial_core import (
    RadialFunction,
    cell_integrals,
    cumulative,
    enclosed,
    gradient_energy,
    integrate,
    lp_norm,
    tail_integral,
)

logger = logging.getLogger(__name__)

# Exact constant of the Fefferman–Seco inequality
FEFFERMAN_SECO_CONSTANT = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class CoulombEstimateReport:
    """Both sides of a Coulomb inequality; implied_constant = lhs / rhs_without_constant."""

    lhs: float
    rhs_without_constant: float
    implied_constant: float
    degenerate: bool = False


def _outer_integrals(rho: RadialFunction) -> np.ndarray:
    """4π ∫_{r_i}^∞ s ρ(s) ds at every node, tail included."""
    per_cell = cell_integrals(rho.grid, rho.values, power=1)
    outer = np.concatenate((np.cumsum(per_cell[::-1])[::-1], [0.0]))
    return outer + tail_integral(rho, power=1)


def newton_potential(rho: RadialFunction) -> RadialFunction:
    """ρ * |x|^-1 sampled on rho's grid."""
    r = rho.grid.nodes
    V = cumulative(rho) / r + _outer_integrals(rho)
    return RadialFunction(rho.grid, V, tail_exponent=1.0)


def enclosed_mass(rho: RadialFunction, r: float) -> float:
    """M(r) = ∫_{|y|<=r} ρ; r = inf gives the total including the tail."""
    if math.isinf(r):
        return integrate(rho)
    return enclosed(rho, r)


def potential_at(rho: RadialFunction, x: float) -> float:
    """(ρ * |x|^-1) at an arbitrary radius x > 0."""
    if not x > 0.0:
        raise ParameterError(f"radius must be positive, given {x}")
    grid = rho.grid
    if x >= grid.r_max:
        return integrate(rho) / x
    total_outer = float(cumulative(rho, power=1)[-1]) + tail_integral(rho, power=1)
    return enclosed(rho, x) / x + total_outer - enclosed(rho, x, power=1)


def partial_newton_potential(rho: RadialFunction, r_cut: float) -> RadialFunction:
    """∫_{|y|<=r_cut} ρ(y)/|x-y| dy on rho's grid.

    r_cut below the first node gives zero; r_cut at or beyond r_max (inf
    included) gives the full Newton potential.
    """
    if not (r_cut > 0.0):
        raise ParameterError(f"r_cut must be positive, given {r_cut}")
    grid = rho.grid
    if r_cut >= grid.r_max:
        return newton_potential(rho)
    if r_cut < grid.r_min:
        return RadialFunction(grid, np.zeros(grid.n), tail_exponent=1.0)

    r = grid.nodes
    M_cut = enclosed(rho, r_cut)
    O_cut = enclosed(rho, r_cut, power=1)
    inside = r < r_cut
    V = np.where(
        inside,
        cumulative(rho) / r + (O_cut - cumulative(rho, power=1)),
        M_cut / r,
    )
    return RadialFunction(grid, V, tail_exponent=1.0)


def coulomb_norm(f: RadialFunction) -> float:
    """𝔇(f) = ½ ∫ f (f * |x|^-1) for radial, possibly signed f."""
    V = newton_potential(f)
    tail = None if f.tail_exponent is None else f.tail_exponent + 1.0
    product = f.with_values(f.values * V.values, tail_exponent=tail, is_density=False)
    return 0.5 * integrate(product)


def _report(lhs: float, rhs: float) -> CoulombEstimateReport:
    if rhs > 0.0:
        return CoulombEstimateReport(lhs, rhs, lhs / rhs)
    # 0/0 is reported as 0
    return CoulombEstimateReport(lhs, rhs, 0.0, degenerate=True)


def check_coulomb_inequalities(f: RadialFunction, x: float) -> Tuple[CoulombEstimateReport, CoulombEstimateReport]:
    """Evaluate both Coulomb estimates for |f| at radius x.

    First:  (|f| * |x|^-1)(x)        vs ‖f‖_{5/3}^{5/7} 𝔇(|f|)^{1/7}
    Second: ∫_{|y|<|x|} |f|/|x-y|    vs ‖f‖_{5/3}^{5/6} (|x| 𝔇(|f|))^{1/12}
    """
    g = f.with_values(np.abs(f.values), is_density=True)
    lp_norm(g, 6.0 / 5.0)          # raises on a non-integrable tail
    norm53 = lp_norm(g, 5.0 / 3.0)
    D = max(coulomb_norm(g), 0.0)

    lhs_full = potential_at(g, x)
    lhs_inner = enclosed(g, x) / x
    first = _report(lhs_full, norm53 ** (5.0 / 7.0) * D ** (1.0 / 7.0))
    second = _report(lhs_inner, norm53 ** (5.0 / 6.0) * (x * D) ** (1.0 / 12.0))
    logger.debug("coulomb estimates x=%g C1=%.6g C2=%.6g", x, first.implied_constant,
                 second.implied_constant)
    return first, second


def fefferman_seco_check(f: RadialFunction, g: RadialFunction) -> CoulombEstimateReport:
    """|∫ f g| against ‖∇f‖₂ √𝔇(g); the implied constant is at most (2π)^{-1/2}."""
    if f.grid is not g.grid:
        raise ParameterError("f and g must share a grid")
    tail = None
    if f.tail_exponent is not None and g.tail_exponent is not None:
        tail = f.tail_exponent + g.tail_exponent
    lhs = abs(integrate(f.with_values(f.values * g.values, tail_exponent=tail, is_density=False)))
    rhs = math.sqrt(gradient_energy(f)) * math.sqrt(max(coulomb_norm(g), 0.0))
    return _report(lhs, rhs)
