"""Liquid drop model with a nuclear background, restricted to concentric shells.

    𝓔_Z(Ω) = |∂Ω| - Z∫_Ω dx/|x| + 𝔇(1_Ω)

Ω is a finite union of shells {a_k < |x| < b_k}. Surface and attraction are
closed forms; the self-repulsion is the Coulomb norm of the indicator on a
grid with knots at every shell boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import optimize

from src.core.coulomb import coulomb_norm, newton_potential
from src.core.errors import InvariantViolation, ParameterError, ScanError
from src.core.radial_core import RadialFunction, RadialGrid, build_grid, integrate

logger = logging.getLogger(__name__)

SURFACE_COEFF = (36.0 * math.pi) ** (1.0 / 3.0)                      # e(N) = a N^{2/3} + b N^{5/3}
REPULSION_COEFF = 0.6 * (4.0 * math.pi / 3.0) ** (1.0 / 3.0)
SPLIT_FAMILIES = ("equal", "scanned")
DROP_GRID_NODES = 4096


def ball_radius(volume: float) -> float:
    return (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class DropConfig:
    """Union of shells (a_k, b_k), ordered and pairwise separated, plus the background charge Z."""

    shells: Tuple[Tuple[float, float], ...]
    Z: float = 0.0

    def __post_init__(self):
        shells = tuple((float(a), float(b)) for a, b in self.shells)
        for a, b in shells:
            if a < 0.0 or not b > a:
                raise ParameterError(f"shell must satisfy 0 <= a < b, given ({a}, {b})")
        for (_, b0), (a1, _) in zip(shells, shells[1:]):
            if not b0 < a1:
                raise ParameterError(f"shells overlap or touch: b={b0} >= next a={a1}")
        if self.Z < 0.0:
            raise ParameterError(f"Z must be >= 0, given {self.Z}")
        object.__setattr__(self, "shells", shells)

    @property
    def volume(self) -> float:
        return sum(4.0 * math.pi / 3.0 * (b**3 - a**3) for a, b in self.shells)

    def dilated(self, factor: float) -> "DropConfig":
        return DropConfig(tuple((a * factor, b * factor) for a, b in self.shells), self.Z)


@dataclass(frozen=True)
class DropEnergy:
    surface: float
    attraction: float
    repulsion: float

    @property
    def total(self) -> float:
        return self.surface + self.attraction + self.repulsion


def ball(volume: float, Z: float = 0.0) -> DropConfig:
    if volume < 0.0:
        raise ParameterError(f"volume must be >= 0, given {volume}")
    if volume == 0.0:
        return DropConfig((), Z)
    return DropConfig(((0.0, ball_radius(volume)),), Z)


def ball_energy(volume: float, Z: float = 0.0) -> DropEnergy:
    """Closed form for a centred ball: 4πR², -2πZR², (3/5)V²/R."""
    if volume == 0.0:
        return DropEnergy(0.0, 0.0, 0.0)
    R = ball_radius(volume)
    return DropEnergy(4.0 * math.pi * R**2, -2.0 * math.pi * Z * R**2, 0.6 * volume**2 / R)


def _drop_grid(config: DropConfig, n: int) -> RadialGrid:
    b_max = config.shells[-1][1]
    knots = sorted({r for shell in config.shells for r in shell if r > 0.0})
    return build_grid(1e-6 * b_max, 2.0 * b_max, n, knots=knots)


def indicator(config: DropConfig, grid: RadialGrid) -> RadialFunction:
    """1_Ω on the grid; knot nodes hold left limits."""
    r = grid.nodes
    inside = np.zeros(grid.n, dtype=bool)
    for a, b in config.shells:
        inside |= (r > a) & (r <= b)
    return RadialFunction(grid, inside.astype(float), is_density=True)


def drop_energy(config: DropConfig, n: int = DROP_GRID_NODES) -> DropEnergy:
    if not config.shells:
        return DropEnergy(0.0, 0.0, 0.0)
    surface = sum(4.0 * math.pi * (a**2 + b**2) if a > 0.0 else 4.0 * math.pi * b**2
                  for a, b in config.shells)
    attraction = -config.Z * sum(2.0 * math.pi * (b**2 - a**2) for a, b in config.shells)
    repulsion = coulomb_norm(indicator(config, _drop_grid(config, n)))

    floor = SURFACE_COEFF * config.volume ** (2.0 / 3.0)
    if surface < floor - 1e-8:
        raise InvariantViolation(f"surface {surface:.12g} below isoperimetric floor {floor:.12g}")
    return DropEnergy(surface, attraction, repulsion)


def split_energy(N: float, Z: float, m: float, separation: float = math.inf) -> float:
    """Ball of volume N - m at the nucleus plus a free ball of volume m at ``separation``."""
    energy = drop_energy(ball(N - m, Z)).total + drop_energy(ball(m, 0.0)).total
    if math.isfinite(separation):
        if separation < ball_radius(N - m) + ball_radius(m):
            raise ParameterError(f"balls overlap at separation {separation}")
        energy += (m * (N - m) - Z * m) / separation
    return energy


def binding_test(N: float, Z: float, m: float, separation: float = math.inf) -> bool:
    """True iff the single ball of volume N is no worse than splitting off m."""
    if not 0.0 < m < N:
        raise ParameterError(f"split must satisfy 0 < m < N, given m={m}, N={N}")
    return drop_energy(ball(N, Z)).total <= split_energy(N, Z, m, separation)


def split_masses(N: float, family: str) -> np.ndarray:
    if family == "equal":
        return np.array([N / 2.0])
    if family == "scanned":
        fractions = N * np.arange(1, 9) / 16.0
        absolute = np.geomspace(1e-2, N / 2.0, 48) if N / 2.0 > 1e-2 else np.empty(0)
        masses = np.unique(np.concatenate((fractions, absolute)))
        return masses[(masses > 0.0) & (masses < N)]
    raise ParameterError(f"split family must be one of {SPLIT_FAMILIES}, given {family!r}")


def _split_margins(N: float, Z: float, masses: np.ndarray) -> np.ndarray:
    """split energy minus whole-ball energy for each m, from the closed forms."""
    whole = ball_energy(N, Z).total
    return np.array([ball_energy(N - m, Z).total + ball_energy(m).total - whole for m in masses])


@dataclass(frozen=True)
class FissionThreshold:
    Z: float
    family: str
    threshold: float
    best_split: float
    margins: List[float] = field(default_factory=list)


def fission_threshold(Z: float, family: str = "scanned", rtol: float = 1e-9) -> FissionThreshold:
    """Largest stable volume N*(Z) among balls, against splits from ``family``.

    Radial balls only, so N* is a consistency check rather than the threshold
    of the unrestricted problem.
    """
    if Z < 0.0:
        raise ParameterError(f"Z must be >= 0, given {Z}")
    split_masses(1.0, family)

    def stability(N: float) -> float:
        return 1.0 if np.all(_split_margins(N, Z, split_masses(N, family)) >= 0.0) else -1.0

    lo, hi = 1e-3, 2.0 * Z + 16.0
    if stability(lo) < 0.0:
        raise ScanError(f"no stable volume at N={lo} for Z={Z}", lo)
    for _ in range(60):
        if stability(hi) < 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ScanError(f"no unstable volume up to N={hi} for Z={Z}", hi)

    N_star = optimize.bisect(stability, lo, hi, xtol=1e-14, rtol=rtol, maxiter=400)
    masses = split_masses(N_star, family)
    margins = _split_margins(N_star, Z, masses)
    best = float(masses[int(np.argmin(margins))])
    logger.info("fission threshold Z=%g family=%s N*=%.12g best_split=%.6g", Z, family, N_star, best)
    return FissionThreshold(Z, family, float(N_star), best, margins.tolist())


def volume_upper_bound(Z: float) -> float:
    """2Z + 8: no minimizing drop has a larger volume."""
    return 2.0 * Z + 8.0


def equal_split_threshold_zero_charge() -> float:
    """N* at Z = 0 against equal splits, solved from e(N) = 2e(N/2)."""
    return SURFACE_COEFF * (2.0 ** (1.0 / 3.0) - 1.0) / (REPULSION_COEFF * (1.0 - 2.0 ** (-2.0 / 3.0)))


def repulsion_cross_check(R1: float, R2: float, n: int = DROP_GRID_NODES) -> Tuple[float, float]:
    """𝔇(1_B1 - 1_B2) directly and as 𝔇(1_B1) + 𝔇(1_B2) - 2 D(1_B1, 1_B2)."""
    if not (R1 > 0.0 and R2 > 0.0):
        raise ParameterError(f"radii must be positive, given ({R1}, {R2})")
    R = max(R1, R2)
    grid = build_grid(1e-6 * R, 2.0 * R, n, knots=sorted({R1, R2}))
    f1 = indicator(DropConfig(((0.0, R1),)), grid)
    f2 = indicator(DropConfig(((0.0, R2),)), grid)
    direct = coulomb_norm(f1.with_values(f1.values - f2.values, is_density=False))
    cross = 0.5 * integrate(f1.with_values(f1.values * newton_potential(f2).values, is_density=False))
    return direct, coulomb_norm(f1) + coulomb_norm(f2) - 2.0 * cross

