"""Measurable consequences of the TFDW/TF comparison.

Screened potentials Φ_r(x) = Z/|x| - ∫_{|y|<=r} ρ(y)/|x-y| dy are only
needed on the diagonal |x| = r, where Newton's theorem reduces them to
(Z - M(r))/r with the closed-ball mass M(r).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from src.core.coulomb import partial_newton_potential
from src.core.errors import FitError, ParameterError, ScanError
from src.core.radial_core import RadialFunction, cumulative, enclosed, integrate
from src.core.tf_solver import ModelConstants, TFAtomicSolution
from src.core.tfdw_solver import (
    BoundFlag,
    FlowConfig,
    TFDWSolution,
    bound_state_test,
    tfdw_minimize,
)

logger = logging.getLogger(__name__)

DEFAULT_FIT_WINDOW_HI = 0.5
MIN_FIT_POINTS = 8


@dataclass(frozen=True)
class ScreenedPair:
    r_values: np.ndarray
    phi_diag: np.ndarray
    phi_tf_diag: np.ndarray
    diff: np.ndarray
    slope: Optional[float] = None


@dataclass(frozen=True)
class RadiusResult:
    kappa: float
    R: float
    ratio: float


@dataclass(frozen=True)
class HarmonicReport:
    r: float
    value_at_r: float
    max_beyond: float
    passed: bool


@dataclass(frozen=True)
class IonizationCurve:
    Z_values: List[float]
    Nc_values: List[float]
    excess: List[float]
    coarse_constant: float
    coarse_bound_check: List[bool]
    excess_constant: float
    excess_slope: float
    upper_values: List[float] = field(default_factory=list)
    upper_flags: List[str] = field(default_factory=list)
    failures: Dict[float, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------

def fit_loglog(x: np.ndarray, y: np.ndarray, min_points: int = MIN_FIT_POINTS) -> Tuple[float, float]:
    """Least-squares slope and intercept of log|y| against log x; zero y are skipped."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    sel = (x > 0.0) & (y > 0.0) & np.isfinite(y)
    if sel.sum() < min_points:
        raise FitError(f"{int(sel.sum())} usable points, need at least {min_points}")
    slope, intercept = np.polyfit(np.log(x[sel]), np.log(y[sel]), 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# Screened potentials
# ---------------------------------------------------------------------------

def screened_diagonal(rho: RadialFunction, Z: float) -> RadialFunction:
    """Φ_r(r) = (Z - M(r)) / r at every node, the shell at r counted as interior."""
    integrate(rho)  # raises on a divergent tail
    r = rho.grid.nodes
    return RadialFunction(rho.grid, (Z - cumulative(rho)) / r, tail_exponent=1.0)


def screening_constant(diagonal: RadialFunction, r_lo: float, r_hi: float) -> float:
    """max r⁴ Φ_r(r) over [r_lo, r_hi]."""
    r = diagonal.grid.nodes
    sel = (r >= r_lo) & (r <= r_hi)
    if not sel.any():
        raise ParameterError(f"no nodes in [{r_lo}, {r_hi}]")
    return float(np.max(r[sel] ** 4 * diagonal.values[sel]))


def compare_screened(sol_tfdw: TFDWSolution, sol_tf: TFAtomicSolution,
                     window: Optional[Tuple[float, float]] = None) -> ScreenedPair:
    """Diagonal screened potentials of ρ₀ and ρ^TF on the TFDW grid, with the decay slope of their difference."""
    Z = sol_tfdw.constants.Z
    if sol_tf.constants.Z != Z:
        raise ParameterError(f"charges differ: {Z} vs {sol_tf.constants.Z}")
    if sol_tfdw.constants.N < Z:
        raise ParameterError(f"comparison needs N >= Z, given N={sol_tfdw.constants.N}")

    diag = screened_diagonal(sol_tfdw.rho0, Z)
    diag_tf = screened_diagonal(sol_tf.rho_tf, Z)
    r = diag.grid.nodes
    phi_tf = diag_tf.evaluate(r)
    diff = diag.values - phi_tf
    lo, hi = window or (Z ** (-1.0 / 3.0), DEFAULT_FIT_WINDOW_HI)
    sel = (r >= lo) & (r <= hi)
    slope, _ = fit_loglog(r[sel], diff[sel])
    logger.info("screened comparison Z=%g window=[%.3g, %.3g] slope=%.4f", Z, lo, hi, slope)
    return ScreenedPair(r, diag.values, phi_tf, diff, slope)


def small_r_constant(pair: ScreenedPair, Z: float) -> float:
    """max |Φ_r - Φ_r^TF| Z^{-4/3} r^{-1/12} over r <= Z^{-1/3}."""
    r = pair.r_values
    sel = r <= Z ** (-1.0 / 3.0)
    if not sel.any():
        raise ParameterError(f"no nodes below Z^(-1/3) = {Z ** (-1.0 / 3.0):.3g}")
    return float(np.max(np.abs(pair.diff[sel]) * Z ** (-4.0 / 3.0) * r[sel] ** (-1.0 / 12.0)))


def interior_mass_identity(rho_a: RadialFunction, rho_b: RadialFunction, Z: float,
                           r: float) -> Tuple[float, float]:
    """(M_a(r) - M_b(r), r (Φ_r^b - Φ_r^a)(r)); Newton's theorem makes them equal."""
    for rho in (rho_a, rho_b):
        if not rho.grid.r_min <= r < rho.grid.r_max:
            raise ParameterError(f"r={r} outside grid [{rho.grid.r_min}, {rho.grid.r_max}]")
    lhs = enclosed(rho_a, r) - enclosed(rho_b, r)

    def s_phi(rho):
        # s Φ_r(s) is constant for s >= r; read it at the first node beyond r
        i = int(np.searchsorted(rho.grid.nodes, r, side="left"))
        s = rho.grid.nodes[i]
        return s * (Z / s - partial_newton_potential(rho, r).values[i])

    return float(lhs), float(s_phi(rho_b) - s_phi(rho_a))


def harmonic_majorant_check(rho: RadialFunction, Z: float, r: float,
                            rtol: float = 1e-8) -> HarmonicReport:
    """Check that s Φ_r(s) over s >= r is maximal at s = r (logged, not raised)."""
    grid = rho.grid
    if not grid.r_min <= r < grid.r_max:
        raise ParameterError(f"r={r} outside grid [{grid.r_min}, {grid.r_max}]")
    s = grid.nodes
    sphi = s * (Z / s - partial_newton_potential(rho, r).values)
    i = int(np.searchsorted(s, r, side="left"))
    at_r = float(sphi[i])
    beyond = float(np.max(sphi[i:]))
    passed = beyond <= at_r + rtol * max(abs(at_r), 1.0)
    if not passed:
        logger.warning("harmonic majorant violated at r=%g: sup=%.12g value=%.12g", r, beyond, at_r)
    return HarmonicReport(float(s[i]), at_r, beyond, passed)


# ---------------------------------------------------------------------------
# Radius
# ---------------------------------------------------------------------------

def radius_from_density(rho: RadialFunction, kappa: float, B_tf: float,
                        total: Optional[float] = None) -> RadiusResult:
    """Largest R with ∫_{|x|>=R} ρ = κ."""
    total = integrate(rho) if total is None else total
    if not kappa > 0.0:
        raise ParameterError(f"kappa must be > 0, given {kappa}")
    if kappa > total * (1.0 + 1e-12):
        raise ParameterError(f"kappa={kappa} exceeds the mass {total}")
    if kappa >= total:
        return RadiusResult(kappa, 0.0, 0.0)

    grid = rho.grid
    exterior = total - cumulative(rho)
    above = np.nonzero(exterior >= kappa)[0]
    if above.size == 0:
        R = 0.0
    elif above[-1] >= grid.n - 1:
        logger.warning("radius for kappa=%g lies beyond r_max; clamped", kappa)
        R = grid.r_max
    else:
        j = int(above[-1])
        R = optimize.brentq(lambda x: total - enclosed(rho, x) - kappa,
                            grid.nodes[j], grid.nodes[j + 1], xtol=1e-14, rtol=1e-12)
    return RadiusResult(kappa, float(R), float(kappa ** (1.0 / 3.0) * R / B_tf))


def radius_of_atom(sol: TFDWSolution, kappa: float) -> RadiusResult:
    N = float(sol.constants.N)
    if kappa > N:
        raise ParameterError(f"kappa={kappa} exceeds N={N}")
    return radius_from_density(sol.rho0, kappa, sol.constants.B_tf, total=integrate(sol.rho0))


# ---------------------------------------------------------------------------
# Ionization scan
# ---------------------------------------------------------------------------

def _solve_at(base: ModelConstants, Z: float, N: float, config: FlowConfig,
              warm: Optional[TFDWSolution]) -> TFDWSolution:
    """TFDW minimizer at (Z, N); with a warm start both inits run and the lower energy wins.

    The bisection passes the most recent solution, which is the nearest in N.
    """
    constants = base.with_charge(Z, N)
    best = tfdw_minimize(constants, config=config, strict=False)
    if warm is not None:
        other = tfdw_minimize(constants, config=config, init=warm.psi, strict=False)
        if other.energy < best.energy:
            best = other
    return best


def critical_electron_number(Z: float, scan_step: float, config: FlowConfig,
                             base: ModelConstants) -> Tuple[float, float, str]:
    """Bisect N over [Z, 3Z + 10] on the bound-state proxy.

    Returns (largest bound N, smallest non-bound N, flag at the latter).
    Inconclusive flags count as not bound.
    """
    lo, hi = float(Z), 3.0 * Z + 10.0
    seen = set()

    lo_sol = _solve_at(base, Z, lo, config, None)
    flag = bound_state_test(lo_sol, config)
    seen.add(flag)
    if flag is not BoundFlag.BOUND:
        raise ScanError(f"N=Z is not detected as bound (flag={flag.value})", lo)
    hi_sol = _solve_at(base, Z, hi, config, lo_sol)
    last_sol = hi_sol
    hi_flag = bound_state_test(hi_sol, config)
    seen.add(hi_flag)
    if hi_flag is BoundFlag.BOUND:
        raise ScanError(f"N={hi} is still bound", hi)

    while hi - lo > scan_step:
        mid = 0.5 * (lo + hi)
        sol = _solve_at(base, Z, mid, config, last_sol)
        last_sol = sol
        flag = bound_state_test(sol, config)
        seen.add(flag)
        logger.info("ionization Z=%g N=%.6g flag=%s", Z, mid, flag.value)
        if flag is BoundFlag.BOUND:
            lo = mid
        else:
            hi, hi_flag = mid, flag
    if BoundFlag.UNBOUND not in seen:
        raise ScanError(f"no unbound N found for Z={Z}; every upper flag inconclusive", hi)
    return lo, hi, hi_flag.value


def _scan_task(args) -> Tuple[float, Optional[Tuple[float, float, str]], Optional[str]]:
    Z, scan_step, config, base = args
    try:
        return Z, critical_electron_number(Z, scan_step, config, base), None
    except ScanError as e:
        return Z, None, str(e)


def ionization_scan(Z_values: Sequence[float], scan_step: float = 0.25,
                    config: Optional[FlowConfig] = None,
                    base: Optional[ModelConstants] = None,
                    workers: int = 1) -> IonizationCurve:
    """Critical electron number N_c(Z) for each charge, one task per Z."""
    if not scan_step > 0.0:
        raise ParameterError(f"scan_step must be > 0, given {scan_step}")
    if not Z_values or any(not z > 0.0 for z in Z_values):
        raise ParameterError(f"Z values must be positive, given {list(Z_values)}")
    config = config or FlowConfig()
    base = base or ModelConstants(Z=1.0)
    tasks = [(float(z), scan_step, config, base) for z in Z_values]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_task, tasks))
    else:
        results = [_scan_task(t) for t in tasks]

    Zs, Nc, upper, flags, failures = [], [], [], [], {}
    for Z, found, error in results:
        if found is None:
            logger.warning("ionization scan failed for Z=%g: %s", Z, error)
            failures[Z] = error
            continue
        Zs.append(Z)
        Nc.append(found[0])
        upper.append(found[1])
        flags.append(found[2])

    excess = [n - z for z, n in zip(Zs, Nc)]
    if Zs:
        coarse = max((n - 2.0 * z) / (z ** (2.0 / 3.0) + 1.0) for z, n in zip(Zs, Nc))
        check = [n <= 2.0 * z + coarse * (z ** (2.0 / 3.0) + 1.0) + 1e-12 for z, n in zip(Zs, Nc)]
    else:
        coarse, check = math.nan, []
    slope = float(np.polyfit(Zs, excess, 1)[0]) if len(Zs) >= 2 else 0.0
    return IonizationCurve(
        Z_values=Zs,
        Nc_values=Nc,
        excess=excess,
        coarse_constant=float(coarse),
        coarse_bound_check=check,
        excess_constant=max(excess) if excess else math.nan,
        excess_slope=slope,
        upper_values=upper,
        upper_flags=flags,
        failures=failures,
    )


def hartree_ratio(sol: TFDWSolution) -> float:
    """𝔇(ρ₀) / (Z^{7/3} + N)."""
    c = sol.constants
    terms = sol.terms
    if terms is None:
        raise ParameterError("solution carries no energy terms")
    return terms.hartree / (c.Z ** (7.0 / 3.0) + c.N)
