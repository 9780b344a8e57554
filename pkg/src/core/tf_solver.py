"""Thomas–Fermi minimizers on radial grids.

The TF equation (5c/3) ρ^{2/3} = [φ - μ]_+ with φ = V - ρ * |x|^-1 is solved
on the potential, F(φ) = φ - T(φ) = 0 with

    T(φ) = V - ρ(φ) * |x|^-1,    ρ(φ) = ((3 / (5c)) [φ - μ]_+)^{3/2}.

A few damped fixed-point steps φ <- φ + α (T(φ) - φ) come first, α halved
whenever the residual grows. The linearized map has eigenvalues down to about
-70 in the Sommerfeld region, so mixing alone only contracts for α < 0.03,
and then slowly. Newton steps finish the solve: the Jacobian
I + (ρ'(φ) ·) * |x|^-1 is applied matrix-free and inverted by GMRES, and each
step is accepted by backtracking on the residual. A failed line search drops
back to damped steps.

Residuals are measured against the Coulomb scale Q/r with Q = max r|V|; φ is
the small difference of two potentials of that size far out. The chemical
potential is found by bracketing and Brent's method on the monotone attained
mass.

Three problems share the machinery:
  tf_atomic_solve    V = Z/|x|, μ = 0
  tf_general_solve   any decaying V with mass budget m
  tf_exterior_solve  V_r = 1(|x| >= r) Φ_r with the density supported in |x| >= r
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import optimize
from scipy.sparse.linalg import LinearOperator, gmres

from src.core.coulomb import coulomb_norm, newton_potential
from src.core.errors import ConvergenceError, FitError, InvariantViolation, ParameterError
from src.core.radial_core import RadialFunction, RadialGrid, integrate, tf_grid

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Model constants
# ---------------------------------------------------------------------------

# Conventional atomic-unit values; every result is reported for whatever is passed in
DEFAULT_C_TF = 0.3 * (3.0 * math.pi**2) ** (2.0 / 3.0)
DEFAULT_C_W = 0.5                       # (1/8)∫|∇ρ|²/ρ written as c_w ∫|∇√ρ|²
DEFAULT_C_D = 0.75 * (3.0 / math.pi) ** (1.0 / 3.0)

ZETA = (math.sqrt(73.0) - 7.0) / 2.0


@dataclass(frozen=True)
class ModelConstants:
    """Coefficients of the TF/TFDW functionals plus the atom's charge and electron number."""

    Z: float
    N: Optional[float] = None
    c_tf: float = DEFAULT_C_TF
    c_w: float = DEFAULT_C_W
    c_d: float = DEFAULT_C_D

    def __post_init__(self):
        if self.N is None:
            object.__setattr__(self, "N", float(self.Z))
        if not self.c_tf > 0.0:
            raise ParameterError(f"c_tf must be > 0, given {self.c_tf}")
        if self.c_w < 0.0 or self.c_d < 0.0:
            raise ParameterError(f"c_w and c_d must be >= 0, given ({self.c_w}, {self.c_d})")
        if self.Z < 0.0:
            raise ParameterError(f"Z must be >= 0, given {self.Z}")
        if not self.N > 0.0:
            raise ParameterError(f"N must be > 0, given {self.N}")

    @property
    def A_tf(self) -> float:
        return (5.0 * self.c_tf) ** 3 / (3.0 * math.pi**2)

    @property
    def B_tf(self) -> float:
        return 5.0 * self.c_tf * (4.0 / (3.0 * math.pi**2)) ** (1.0 / 3.0)

    @property
    def zeta(self) -> float:
        return ZETA

    def with_charge(self, Z: float, N: Optional[float] = None) -> "ModelConstants":
        return replace(self, Z=Z, N=Z if N is None else N)


@dataclass(frozen=True)
class TFSolverConfig:
    tol_residual: float = 1e-11         # max |T(φ) - φ| r / Q
    tol_mass: float = 1e-10             # mass drift over the last step, relative
    max_newton: int = 60
    krylov_rtol: float = 1e-8
    krylov_restart: int = 80
    krylov_cycles: int = 10
    min_step: float = 1.0 / 1024.0
    mixing: float = 0.3
    min_mixing: float = 1e-4
    warmup_steps: int = 30
    relax_steps: int = 400
    mu_tol: float = 1e-8
    mu_max_steps: int = 200


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TFAtomicSolution:
    rho_tf: RadialFunction
    phi_tf: RadialFunction
    mu: float
    energy: float
    constants: ModelConstants
    iterations: int = 0
    residual: float = 0.0

    @property
    def mass(self) -> float:
        return integrate(self.rho_tf)


@dataclass(frozen=True)
class TFGeneralSolution:
    rho: RadialFunction
    phi: RadialFunction
    mu: float
    mass_budget: float
    attained_mass: float
    history: Tuple[Tuple[float, float], ...] = ()
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class ExteriorTFSolution:
    r_cut: float
    v_r: RadialFunction
    rho_r: RadialFunction
    phi_r: RadialFunction
    mu_r: float
    attained_mass: float = 0.0
    history: Tuple[Tuple[float, float], ...] = ()


@dataclass(frozen=True)
class SommerfeldEnvelope:
    r: float
    a_r: float
    A_r: float
    zeta: float
    ratio_profile: RadialFunction
    lower_margin: float = 0.0
    upper_margin: float = 0.0


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def density_from_potential(phi: np.ndarray, mu: float, constants: ModelConstants) -> np.ndarray:
    """Inverse TF equation ρ = ((3/(5c)) [φ - μ]_+)^{3/2}."""
    return (3.0 / (5.0 * constants.c_tf) * np.maximum(phi - mu, 0.0)) ** 1.5


def coulomb_external(Z: float, grid: RadialGrid) -> RadialFunction:
    return RadialFunction(grid, Z / grid.nodes, tail_exponent=1.0)


def tf_energy(rho: RadialFunction, V: RadialFunction, constants: ModelConstants) -> float:
    """𝓔(ρ) = c∫ρ^{5/3} - ∫Vρ + 𝔇(ρ)."""
    p = rho.tail_exponent
    kinetic = integrate(rho.with_values(rho.values ** (5.0 / 3.0),
                                        tail_exponent=None if p is None else 5.0 * p / 3.0))
    vtail = None if (p is None or V.tail_exponent is None) else p + V.tail_exponent
    attraction = integrate(rho.with_values(V.values * rho.values, tail_exponent=vtail, is_density=False))
    return constants.c_tf * kinetic - attraction + coulomb_norm(rho)


def _tail_exponent(rho: np.ndarray, grid: RadialGrid) -> Optional[float]:
    """Local log-slope of ρ at r_max; None when ρ vanishes there."""
    if rho[-1] <= 0.0 or rho[-2] <= 0.0:
        return None
    t = grid.log_nodes
    p = -(math.log(rho[-1]) - math.log(rho[-2])) / (t[-1] - t[-2])
    return min(max(p, 3.5), 12.0)


@dataclass
class _Iterate:
    phi: np.ndarray
    rho: Optional[RadialFunction]
    T: np.ndarray
    residual: float
    mass: float


@dataclass
class _TFEquation:
    """TF equation at fixed μ on one grid, with an optional support mask."""

    V: np.ndarray
    grid: RadialGrid
    constants: ModelConstants
    config: TFSolverConfig
    support: Optional[np.ndarray] = None
    iterations: int = field(default=0, init=False)
    scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = self.grid.nodes
        self.scale = max(float(np.max(r * np.abs(self.V))), 1e-300) / r

    def evaluate(self, phi: np.ndarray, mu: float) -> _Iterate:
        with np.errstate(over="ignore", invalid="ignore"):
            rho_vals = density_from_potential(phi, mu, self.constants)
        if self.support is not None:
            rho_vals = np.where(self.support, rho_vals, 0.0)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(rho_vals))):
            return _Iterate(phi, None, phi, math.inf, math.inf)
        rho = RadialFunction(self.grid, rho_vals, tail_exponent=_tail_exponent(rho_vals, self.grid),
                             is_density=True)
        T = self.V - newton_potential(rho).values
        residual = float(np.max(np.abs(T - phi) / self.scale))
        return _Iterate(phi, rho, T, residual, integrate(rho))

    def density_slope(self, phi: np.ndarray, mu: float) -> np.ndarray:
        """dρ/dφ of the inverse TF equation."""
        k = 3.0 / (5.0 * self.constants.c_tf)
        slope = 1.5 * k**1.5 * np.sqrt(np.maximum(phi - mu, 0.0))
        return slope if self.support is None else np.where(self.support, slope, 0.0)

    def relax(self, state: _Iterate, mu: float, steps: int) -> _Iterate:
        """Damped fixed-point steps; a step that raises the residual is rejected and α halved."""
        cfg = self.config
        alpha = cfg.mixing
        for _ in range(steps):
            if state.residual <= cfg.tol_residual or alpha < cfg.min_mixing:
                break
            trial = self.evaluate(state.phi + alpha * (state.T - state.phi), mu)
            self.iterations += 1
            if trial.residual > state.residual:
                alpha *= 0.5
                logger.debug("tf mixing halved alpha=%.3g residual=%.3e", alpha, trial.residual)
                continue
            state = trial
        return state

    def newton_direction(self, state: _Iterate, mu: float) -> np.ndarray:
        """δ with (I + G ρ'(φ)) δ = T(φ) - φ, G the Newton potential operator.

        GMRES works on δ r / Q, a diagonal similarity that keeps the spectrum
        of the Jacobian and weights every node on the Coulomb scale.
        """
        cfg = self.config
        s = self.scale
        slope = self.density_slope(state.phi, mu)
        tail = state.rho.tail_exponent
        n = self.grid.n

        def matvec(y):
            dphi = np.ravel(y) * s
            drho = RadialFunction(self.grid, slope * dphi, tail_exponent=tail)
            return (dphi + newton_potential(drho).values) / s

        jacobian = LinearOperator((n, n), matvec=matvec, dtype=float)
        y, info = gmres(jacobian, (state.T - state.phi) / s, rtol=cfg.krylov_rtol,
                        restart=cfg.krylov_restart, maxiter=cfg.krylov_cycles)
        if info < 0:
            raise ConvergenceError("GMRES rejected the TF Jacobian", state.residual, self.iterations)
        if info > 0:
            logger.debug("tf gmres stopped at rtol above %.1e after %d iterations", cfg.krylov_rtol, info)
        return y * s

    def line_search(self, state: _Iterate, step: np.ndarray, mu: float) -> Optional[_Iterate]:
        t = 1.0
        while t >= self.config.min_step:
            trial = self.evaluate(state.phi + t * step, mu)
            if trial.residual <= (1.0 - 1e-4 * t) * state.residual:
                return trial
            t *= 0.5
        return None

    def solve(self, phi0: np.ndarray, mu: float) -> _Iterate:
        cfg = self.config
        state = self.relax(self.evaluate(phi0, mu), mu, cfg.warmup_steps)
        prev_mass = math.inf
        for _ in range(cfg.max_newton):
            drift = abs(state.mass - prev_mass)
            if state.residual <= cfg.tol_residual and drift <= cfg.tol_mass * max(state.mass, 1e-300):
                return state
            trial = self.line_search(state, self.newton_direction(state, mu), mu)
            if trial is None:
                if state.residual <= cfg.tol_residual:
                    # rounding floor reached
                    return state
                logger.debug("tf line search failed mu=%.6g residual=%.3e", mu, state.residual)
                trial = self.relax(state, mu, cfg.relax_steps)
            self.iterations += 1
            prev_mass, state = state.mass, trial
            logger.debug("tf newton mu=%.6g residual=%.3e mass=%.12g", mu, state.residual, state.mass)
        raise ConvergenceError("TF equation did not converge", state.residual, self.iterations)


def _solve_with_budget(eq: _TFEquation, phi0: np.ndarray, m: float
                       ) -> Tuple[_Iterate, float, List[Tuple[float, float]]]:
    """Smallest μ >= 0 whose fixed point has mass <= m."""
    cfg = eq.config
    history: List[Tuple[float, float]] = []
    state = eq.solve(phi0, 0.0)
    history.append((0.0, state.mass))
    if state.mass <= m * (1.0 + cfg.mu_tol):
        return state, 0.0, history

    warm = {"phi": state.phi}

    def excess(mu: float) -> float:
        s = eq.solve(warm["phi"], mu)
        warm["phi"] = s.phi
        history.append((mu, s.mass))
        return s.mass - m

    mu_cap = float(np.max(eq.V))
    mu_lo, mu_hi = 0.0, min(mu_cap, max(float(np.max(eq.grid.nodes * eq.V)), 1.0) ** (4.0 / 3.0) * 1e-3)
    while excess(mu_hi) > 0.0:
        if mu_hi >= mu_cap:
            raise ConvergenceError("mass stays above budget at μ = max V", history[-1][1] - m, len(history))
        mu_lo, mu_hi = mu_hi, min(10.0 * mu_hi, mu_cap)
    if len(history) > cfg.mu_max_steps:
        raise ConvergenceError("μ bracketing exhausted its steps", history[-1][1] - m, len(history))

    warm["phi"] = state.phi if mu_lo == 0.0 else warm["phi"]
    mu = optimize.brentq(excess, mu_lo, mu_hi, xtol=1e-14 * mu_hi, rtol=1e-13,
                         maxiter=cfg.mu_max_steps)
    final = eq.solve(warm["phi"], mu)
    history.append((mu, final.mass))
    if abs(final.mass - m) > 1e-6 * m:
        raise ConvergenceError("μ search missed the mass budget", abs(final.mass - m) / m, len(history))
    logger.info("tf mu=%.12g mass=%.12g budget=%.12g steps=%d", mu, final.mass, m, len(history))
    return final, mu, history


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def tf_atomic_solve(constants: ModelConstants, grid: Optional[RadialGrid] = None,
                    config: Optional[TFSolverConfig] = None) -> TFAtomicSolution:
    """Neutral TF atom: μ = 0, ∫ρ = Z."""
    grid = grid or tf_grid(constants.Z)
    config = config or TFSolverConfig()
    V = coulomb_external(constants.Z, grid)
    r = grid.nodes
    if constants.Z == 0.0:
        zero = RadialFunction(grid, np.zeros(grid.n), is_density=True)
        return TFAtomicSolution(zero, RadialFunction(grid, np.zeros(grid.n), tail_exponent=4.0),
                                0.0, 0.0, constants)

    eq = _TFEquation(V.values, grid, constants, config)
    phi0 = np.minimum(V.values, constants.A_tf * r**-4)
    state = eq.solve(phi0, 0.0)
    phi = RadialFunction(grid, state.T, tail_exponent=4.0)
    energy = tf_energy(state.rho, V, constants)
    logger.info("tf atomic Z=%g mass=%.12g energy=%.12g iterations=%d",
                constants.Z, state.mass, energy, eq.iterations)
    return TFAtomicSolution(state.rho, phi, 0.0, energy, constants, eq.iterations, state.residual)


def tf_general_solve(V: RadialFunction, m: float, constants: ModelConstants,
                     grid: Optional[RadialGrid] = None,
                     config: Optional[TFSolverConfig] = None) -> TFGeneralSolution:
    """TF minimizer for a decaying potential V under the constraint ∫ρ <= m."""
    if grid is not None and grid is not V.grid:
        raise ParameterError("V must be sampled on the solve grid")
    grid = V.grid
    config = config or TFSolverConfig()
    if not m > 0.0:
        raise ParameterError(f"mass budget must be > 0, given {m}")
    if V.tail_exponent is not None and V.tail_exponent < 1.0 and V.tail_value != 0.0:
        raise ParameterError(f"V must vanish at infinity (tail exponent >= 1), given {V.tail_exponent}")

    zero = RadialFunction(grid, np.zeros(grid.n), is_density=True)
    if np.all(V.values <= 0.0):
        return TFGeneralSolution(zero, V, 0.0, m, 0.0, ((0.0, 0.0),))

    eq = _TFEquation(V.values, grid, constants, config)
    phi0 = np.minimum(V.values, constants.A_tf * grid.nodes**-4)
    state, mu, history = _solve_with_budget(eq, phi0, m)
    phi = RadialFunction(grid, state.T, tail_exponent=V.tail_exponent)
    return TFGeneralSolution(state.rho, phi, mu, m, state.mass, tuple(history), eq.iterations,
                             state.residual)


def tf_exterior_solve(phi_screened: RadialFunction, r_cut: float, mass_budget: float,
                      constants: ModelConstants,
                      config: Optional[TFSolverConfig] = None) -> ExteriorTFSolution:
    """Minimize 𝓔_r over densities supported in |x| >= r_cut with ∫ρ <= mass_budget.

    Exact when r_cut is a knot of the grid: the knot node holds the (zero)
    left limit of the density, the partner node the right limit.
    """
    grid = phi_screened.grid
    config = config or TFSolverConfig()
    if mass_budget < 0.0:
        raise ParameterError(f"mass budget must be >= 0, given {mass_budget}")
    if not grid.r_min <= r_cut < grid.r_max:
        raise ParameterError(f"r_cut must lie on the grid, given {r_cut}")

    r = grid.nodes
    v_r = phi_screened.with_values(np.where(r >= r_cut, phi_screened.values, 0.0))
    support = r > r_cut
    zero = RadialFunction(grid, np.zeros(grid.n), is_density=True)
    if mass_budget == 0.0 or np.all(v_r.values <= 0.0):
        return ExteriorTFSolution(r_cut, v_r, zero, v_r, 0.0)

    eq = _TFEquation(v_r.values, grid, constants, config, support=support)
    state, mu, history = _solve_with_budget(eq, v_r.values.copy(), mass_budget)
    phi = RadialFunction(grid, state.T, tail_exponent=v_r.tail_exponent)
    logger.info("tf exterior r=%g mu=%.6g mass=%.12g", r_cut, mu, state.mass)
    return ExteriorTFSolution(r_cut, v_r, state.rho, phi, mu, state.mass, tuple(history))


# ---------------------------------------------------------------------------
# Sommerfeld diagnostics
# ---------------------------------------------------------------------------

def _potential_of(solution: Union[TFAtomicSolution, ExteriorTFSolution, TFGeneralSolution]) -> RadialFunction:
    if isinstance(solution, TFAtomicSolution):
        return solution.phi_tf
    if isinstance(solution, ExteriorTFSolution):
        return solution.phi_r
    return solution.phi


def sommerfeld_check(solution, r: float, constants: Optional[ModelConstants] = None,
                     slack: float = 1e-6) -> SommerfeldEnvelope:
    """Two-sided Sommerfeld envelope beyond radius r.

    The boundary sphere is snapped to the first node >= r. Raises
    InvariantViolation when a node beyond it leaves the envelope by more
    than ``slack`` (relative).
    """
    phi = _potential_of(solution)
    constants = constants or getattr(solution, "constants", None)
    if constants is None:
        raise ParameterError("constants are required for this solution type")
    grid = phi.grid
    nodes = grid.nodes
    if not grid.r_min <= r < grid.r_max:
        raise ParameterError(f"r must lie on the grid, given {r}")

    A = constants.A_tf
    ratio = phi.values * nodes**4 / A
    i0 = int(np.searchsorted(nodes, r, side="left"))
    r0 = float(nodes[i0])
    if not phi.values[i0] > 0.0:
        raise ParameterError(f"φ must be positive on the boundary sphere, given {phi.values[i0]:.3e}")
    a_r = ratio[i0] ** -0.5 - 1.0
    A_r = ratio[i0] - 1.0

    x = nodes[i0:]
    q = (r0 / x) ** ZETA
    lower = (1.0 + a_r * q) ** -2
    upper = 1.0 + A_r * q
    ratio_out = ratio[i0:]
    lower_gap = ratio_out - lower * (1.0 - slack)
    upper_gap = upper + slack * np.maximum(np.abs(upper), ratio_out) - ratio_out
    envelope = SommerfeldEnvelope(r0, float(a_r), float(A_r), ZETA,
                                  RadialFunction(grid, ratio), float(lower_gap.min()),
                                  float(upper_gap.min()))
    if lower_gap.min() < 0.0 or upper_gap.min() < 0.0:
        bad = int(np.argmin(np.minimum(lower_gap, upper_gap)))
        raise InvariantViolation(
            f"Sommerfeld envelope violated at r={x[bad]:.6g}: ratio={ratio_out[bad]:.9g} "
            f"lower={lower[bad]:.9g} upper={upper[bad]:.9g}"
        )
    return envelope


def sommerfeld_exponent_fit(solution: TFAtomicSolution, window: Tuple[float, float] = (3.0, 30.0)) -> float:
    """Decay exponent of the Sommerfeld correction over rZ^{1/3} in ``window``.

    Fits log(ratio^{-ζ/3} - 1) against log(rZ^{1/3}); Sommerfeld's profile
    makes this exactly linear with slope -ζ, and near ratio = 1 the fitted
    quantity is (ζ/3)(1 - ratio).
    """
    c = solution.constants
    nodes = solution.phi_tf.grid.nodes
    x = nodes * c.Z ** (1.0 / 3.0)
    ratio = solution.phi_tf.values * nodes**4 / c.A_tf
    sel = (x >= window[0]) & (x <= window[1]) & (ratio > 0.0) & (ratio < 1.0)
    if sel.sum() < 8:
        raise FitError(f"only {int(sel.sum())} nodes in the Sommerfeld fit window {window}")
    y = ratio[sel] ** (-ZETA / 3.0) - 1.0
    slope, _ = np.polyfit(np.log(x[sel]), np.log(y), 1)
    return float(slope)


def tf_radius_bound(solution: TFAtomicSolution) -> Tuple[float, float]:
    """max φ r^4 / A and max ρ r^6 / (3A/5c)^{3/2}; both are <= 1 for the TF atom."""
    c = solution.constants
    r = solution.phi_tf.grid.nodes
    phi_ratio = float(np.max(solution.phi_tf.values * r**4 / c.A_tf))
    rho_ratio = float(np.max(solution.rho_tf.values * r**6 / (3.0 * c.A_tf / (5.0 * c.c_tf)) ** 1.5))
    return phi_ratio, rho_ratio
