"""Thomas–Fermi–Dirac–von Weizsäcker minimization at fixed electron number.

The functional is minimized over ψ = √ρ on a truncated radial grid:

    𝓔(ψ) = c_tf ∫|ψ|^{10/3} - Z∫ψ²/|x| + 𝔇(ψ²) + c_w ∫|∇ψ|² - c_d ∫|ψ|^{8/3}

Every term is evaluated with the grid quadrature, and ``tfdw_gradient``
returns the exact derivative of that discrete energy in the inner product
⟨a, b⟩ = Σ w_i a_i b_i. Descent uses a preconditioned projected gradient:

    M = 2c_w Dᵀ diag(w/r²) D + diag(w (σ + Z/r + (70/9) c_tf |ψ|^{4/3}))

with D the log-derivative matrix. Directions are made tangent to ∫ψ² = N,
steps are Armijo-backtracked, and ψ is renormalized after every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from src.core.coulomb import coulomb_norm, newton_potential
from src.core.errors import ConvergenceError, InvariantViolation, ParameterError
from src.core.radial_core import (
    RadialFunction,
    RadialGrid,
    default_grid,
    enclosed,
    gradient_energy,
    integrate,
    resample,
)
from src.core.tf_solver import ModelConstants, tf_atomic_solve

logger = logging.getLogger(__name__)

GRADIENT_CHECK_TOL = 1e-5
GRADIENT_CHECK_FLOOR = 1e-3   # in-flow checks, relative to ‖∇𝓔‖ ‖η‖


class BoundFlag(str, Enum):
    BOUND = "bound"
    UNBOUND = "unbound"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class FlowConfig:
    step: float = 1.0
    max_iter: int = 20000
    tol_residual: float = 1e-8
    tol_energy: float = 1e-15
    stall_steps: int = 50
    backtrack: float = 0.5
    armijo: float = 1e-4
    growth: float = 1.5
    min_step: float = 1e-14
    sigma: float = 1.0
    r_box: Optional[float] = None          # None: r_max / 2
    delta_bound: float = 1e-3              # relative to N
    continuation_steps: int = 500
    gradient_check_every: int = 0
    log_every: int = 200

    def __post_init__(self):
        positive = {
            "step": self.step, "max_iter": self.max_iter, "tol_residual": self.tol_residual,
            "tol_energy": self.tol_energy, "delta_bound": self.delta_bound,
            "sigma": self.sigma, "min_step": self.min_step,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ParameterError(f"FlowConfig.{name} must be > 0, given {value}")
        if not 0.0 < self.backtrack < 1.0:
            raise ParameterError(f"FlowConfig.backtrack must lie in (0, 1), given {self.backtrack}")
        if self.r_box is not None and not self.r_box > 0.0:
            raise ParameterError(f"FlowConfig.r_box must be > 0, given {self.r_box}")


@dataclass(frozen=True)
class TFDWTerms:
    kinetic: float
    attraction: float
    hartree: float
    weizsacker: float
    dirac: float

    @property
    def total(self) -> float:
        return self.kinetic + self.attraction + self.hartree + self.weizsacker + self.dirac


@dataclass(frozen=True)
class TFDWSolution:
    psi: RadialFunction
    rho0: RadialFunction
    energy: float
    mu: float
    iterations: int
    residual: float
    constants: ModelConstants
    converged: bool = True
    terms: Optional[TFDWTerms] = None
    energy_history: Tuple[float, ...] = ()
    bound_flag: Optional[BoundFlag] = None

    @property
    def mass(self) -> float:
        return integrate(self.rho0)


# ---------------------------------------------------------------------------
# Energy and gradient
# ---------------------------------------------------------------------------

def _power_tail(psi: RadialFunction, power: float) -> Optional[float]:
    return None if psi.tail_exponent is None else psi.tail_exponent * power


def tfdw_terms(psi: RadialFunction, constants: ModelConstants) -> TFDWTerms:
    """The five TFDW terms of ψ, each with the grid quadrature (tails where declared)."""
    a = np.abs(psi.values)
    grid = psi.grid
    rho = RadialFunction(grid, a**2, tail_exponent=_power_tail(psi, 2.0), is_density=True)

    def integral(values, power):
        return integrate(RadialFunction(grid, values, tail_exponent=_power_tail(psi, power)))

    kinetic = constants.c_tf * integral(a ** (10.0 / 3.0), 10.0 / 3.0)
    attraction_tail = None if psi.tail_exponent is None else 2.0 * psi.tail_exponent + 1.0
    attraction = -constants.Z * integrate(
        RadialFunction(grid, a**2 / grid.nodes, tail_exponent=attraction_tail))
    weizsacker = constants.c_w * gradient_energy(psi) if constants.c_w else 0.0
    dirac = -constants.c_d * integral(a ** (8.0 / 3.0), 8.0 / 3.0) if constants.c_d else 0.0
    return TFDWTerms(kinetic, attraction, coulomb_norm(rho), weizsacker, dirac)


def tfdw_energy(psi: RadialFunction, constants: ModelConstants) -> float:
    return tfdw_terms(psi, constants).total


def _scatter(cell_weights: np.ndarray, cell_values: np.ndarray) -> np.ndarray:
    """Transpose of the per-cell quadrature: cell values back onto nodes."""
    m = cell_values.size
    out = np.zeros(m + 3)
    for k in range(4):
        out[k:k + m] += cell_weights[:, k] * cell_values
    return out[1:-1]


def _newton_adjoint(grid: RadialGrid, u: np.ndarray) -> np.ndarray:
    """Kᵀu for the truncated Newton operator K: ρ ↦ ρ * |x|^-1 on the nodes."""
    inner = np.cumsum((u / grid.nodes)[::-1])[::-1][1:]   # Σ_{i>j} u_i / r_i
    outer = np.cumsum(u)[:-1]                              # Σ_{i<=j} u_i
    return _scatter(grid.cell_weights, inner) + _scatter(grid.cell_weights_r, outer)


def tfdw_gradient(psi: RadialFunction, constants: ModelConstants) -> RadialFunction:
    """Derivative of the discrete energy in the w-weighted inner product.

    Equals 2(-c_w Δψ + (5c_tf/3)|ψ|^{4/3}ψ - (4c_d/3)|ψ|^{2/3}ψ - (Z/|x|)ψ + (ψ²*|x|^-1)ψ)
    up to quadrature error. ψ is treated as truncated at r_max.
    """
    grid = psi.grid
    r, w = grid.nodes, grid.weights
    p = psi.values
    a = np.abs(p)
    rho = RadialFunction(grid, a**2, is_density=True)
    V = newton_potential(rho).values
    w_safe = np.where(w > 0.0, w, np.inf)

    g = (10.0 / 3.0) * constants.c_tf * a ** (4.0 / 3.0) * p - 2.0 * constants.Z * p / r
    g += p * (V + _newton_adjoint(grid, w * rho.values) / w_safe)
    if constants.c_d:
        g -= (8.0 / 3.0) * constants.c_d * a ** (2.0 / 3.0) * p
    if constants.c_w:
        D = grid.derivative
        g += 2.0 * constants.c_w * (D.T @ (w * (D @ p) / r**2)) / w_safe
    return RadialFunction(grid, g)


def directional_derivative_check(psi: RadialFunction, constants: ModelConstants,
                                 n_directions: int = 5, h: float = 1e-5,
                                 seed: int = 0, floor: float = 0.0) -> List[float]:
    """Relative errors of ⟨∇𝓔, η⟩ against central differences along mass-preserving η.

    Errors are relative to max(|⟨∇𝓔, η⟩|, floor ‖∇𝓔‖ ‖η‖). Near a minimizer
    the projected derivative vanishes, so checks inside the flow need floor > 0.
    """
    grid = psi.grid
    w = grid.weights
    rng = np.random.default_rng(seed)
    g = tfdw_gradient(psi, constants).values
    t = grid.log_nodes
    span = t[-1] - t[0]
    errors = []
    for _ in range(n_directions):
        centres = rng.uniform(t[0], t[-1], size=3)
        bumps = sum(c * np.exp(-((t - m) / (0.1 * span)) ** 2)
                    for c, m in zip(rng.normal(size=3), centres))
        eta = psi.values * bumps
        eta -= psi.values * (w @ (psi.values * eta)) / (w @ psi.values**2)
        exact = float(w @ (g * eta))
        plus = tfdw_energy(psi.with_values(psi.values + h * eta, is_density=False), constants)
        minus = tfdw_energy(psi.with_values(psi.values - h * eta, is_density=False), constants)
        fd = (plus - minus) / (2.0 * h)
        scale = floor * math.sqrt(float(w @ g**2) * float(w @ eta**2))
        errors.append(abs(exact - fd) / max(abs(exact), scale, 1e-300))
    return errors


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------

def _initial_psi(constants: ModelConstants, grid: RadialGrid) -> np.ndarray:
    if constants.Z > 0.0:
        tf = tf_atomic_solve(constants)
        rho = resample(tf.rho_tf, grid).values
    else:
        # no nucleus: exponential blob of the size the mass would set
        rho = np.exp(-grid.nodes / max(constants.N, 1.0) ** (1.0 / 3.0))
    return np.sqrt(rho)


@dataclass
class _GradientFlow:
    constants: ModelConstants
    grid: RadialGrid
    config: FlowConfig
    psi: np.ndarray
    step: float = 0.0
    energy: float = 0.0
    gradient: np.ndarray = field(default=None, repr=False)
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.N = float(self.constants.N)
        self.psi = self._normalize(self.psi)
        self.step = self.config.step
        self._refresh()
        self.history.append(self.energy)

    def _normalize(self, psi: np.ndarray) -> np.ndarray:
        mass = float(self.grid.weights @ psi**2)
        if not mass > 0.0:
            raise ParameterError("initial ψ has zero mass on the grid")
        return psi * math.sqrt(self.N / mass)

    def _as_function(self, psi: np.ndarray) -> RadialFunction:
        return RadialFunction(self.grid, psi)

    def _refresh(self):
        f = self._as_function(self.psi)
        self.energy = tfdw_energy(f, self.constants)
        self.gradient = tfdw_gradient(f, self.constants).values

    def _metric(self) -> sps.csc_matrix:
        c = self.constants
        r, w = self.grid.nodes, self.grid.weights
        diag = w * (self.config.sigma + c.Z / r
                    + (70.0 / 9.0) * c.c_tf * np.abs(self.psi) ** (4.0 / 3.0))
        M = sps.diags(diag)
        if c.c_w:
            D = self.grid.derivative
            M = M + 2.0 * c.c_w * (D.T @ sps.diags(w / r**2) @ D)
        return sps.csc_matrix(M)

    def direction(self) -> Tuple[np.ndarray, float]:
        """Projected preconditioned descent direction and δ = -⟨∇𝓔, d⟩."""
        w = self.grid.weights
        lu = splu(self._metric())
        Wg, Wpsi = w * self.gradient, w * self.psi
        Pg, Ppsi = lu.solve(Wg), lu.solve(Wpsi)
        a, b = float(Wpsi @ Pg), float(Wpsi @ Ppsi)
        delta = max(float(Wg @ Pg) - a * a / b, 0.0)
        return -(Pg - (a / b) * Ppsi), delta

    def residual(self, delta: float) -> float:
        return math.sqrt(delta / self.N)

    def threshold(self) -> float:
        return self.config.tol_residual * (1.0 + math.sqrt(abs(self.energy) / self.N))

    def advance(self, d: np.ndarray, delta: float) -> bool:
        """One Armijo step; False when the step shrinks below min_step."""
        cfg = self.config
        t = self.step
        while t >= cfg.min_step:
            trial = self._normalize(self.psi + t * d)
            e = tfdw_energy(self._as_function(trial), self.constants)
            if e <= self.energy - cfg.armijo * t * delta:
                self.psi = trial
                self._refresh()
                self.history.append(self.energy)
                self.step = t * cfg.growth
                return True
            t *= cfg.backtrack
        return False

    def mu(self) -> float:
        # sign chosen to match the TF chemical potential
        return -float(self.grid.weights @ (self.gradient * self.psi)) / (2.0 * self.N)


def tfdw_minimize(constants: ModelConstants, grid: Optional[RadialGrid] = None,
                  config: Optional[FlowConfig] = None, init: Optional[RadialFunction] = None,
                  strict: bool = True) -> TFDWSolution:
    """Minimize the TFDW functional over ∫ρ = N.

    The flow stops on convergence, on max_iter, on a failed line search or
    after ``stall_steps`` consecutive steps with relative energy change below
    ``tol_energy``. Unless converged, ``strict`` raises ConvergenceError;
    otherwise the last iterate is returned with ``converged=False``.
    """
    config = config or FlowConfig()
    grid = grid or default_grid(constants.Z, constants.N)
    psi0 = _initial_psi(constants, grid) if init is None else resample(init, grid).values
    flow = _GradientFlow(constants, grid, config, np.asarray(psi0, dtype=float))

    converged = False
    stalled = 0
    residual = math.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        d, delta = flow.direction()
        residual = flow.residual(delta)
        if residual <= flow.threshold():
            converged = True
            break
        previous = flow.energy
        if not flow.advance(d, delta):
            logger.info("tfdw line search exhausted at iter=%d residual=%.3e", it, residual)
            break
        stalled = stalled + 1 if previous - flow.energy <= config.tol_energy * abs(previous) else 0
        if stalled >= config.stall_steps:
            logger.info("tfdw energy stalled at iter=%d residual=%.3e", it, residual)
            break
        if config.gradient_check_every and it % config.gradient_check_every == 0:
            errs = directional_derivative_check(flow._as_function(flow.psi), constants, n_directions=2,
                                                floor=GRADIENT_CHECK_FLOOR)
            if max(errs) > GRADIENT_CHECK_TOL:
                raise InvariantViolation(f"gradient check failed at iter={it}: {max(errs):.3e}")
        if config.log_every and it % config.log_every == 0:
            logger.debug("tfdw iter=%d energy=%.12g residual=%.3e step=%.3g",
                         it, flow.energy, residual, flow.step)

    if not converged and strict:
        raise ConvergenceError("TFDW flow did not converge", residual, it)
    if not converged:
        logger.warning("tfdw not converged Z=%g N=%g iterations=%d residual=%.3e",
                       constants.Z, constants.N, it, residual)

    psi = RadialFunction(grid, np.abs(flow.psi))
    terms = tfdw_terms(psi, constants)
    logger.info("tfdw Z=%g N=%g energy=%.12g mu=%.6g iterations=%d converged=%s",
                constants.Z, constants.N, terms.total, flow.mu(), it, converged)
    return TFDWSolution(
        psi=psi,
        rho0=RadialFunction(grid, psi.values**2, is_density=True),
        energy=terms.total,
        mu=flow.mu(),
        iterations=it,
        residual=residual,
        constants=constants,
        converged=converged,
        terms=terms,
        energy_history=tuple(flow.history),
    )


# ---------------------------------------------------------------------------
# Bound-state proxy
# ---------------------------------------------------------------------------

def _outer_slope(rho: RadialFunction) -> float:
    """Log-log slope of ρ over r >= 0.8 r_max; -inf when ρ has vanished there."""
    r = rho.grid.nodes
    sel = (r >= 0.8 * rho.grid.r_max) & (rho.values > 0.0)
    if sel.sum() < 3:
        return -math.inf
    slope, _ = np.polyfit(np.log(r[sel]), np.log(rho.values[sel]), 1)
    return float(slope)


def _outer_third_mass(grid: RadialGrid, psi: np.ndarray) -> float:
    rho = RadialFunction(grid, psi**2, is_density=True)
    return integrate(rho) - enclosed(rho, 2.0 * grid.r_max / 3.0)


def bound_state_test(solution: TFDWSolution, config: Optional[FlowConfig] = None) -> BoundFlag:
    """Numerical proxy for existence of a minimizer.

    bound:        ∫_{r<=R_box} ρ₀ >= N - δ and ρ₀ decays at least like r^-4 at r_max
    unbound:      more than δ outside R_box, and the outer-third mass does not
                  decrease over ``continuation_steps`` further flow steps
    inconclusive: otherwise
    """
    config = config or FlowConfig()
    grid = solution.rho0.grid
    N = float(solution.constants.N)
    r_box = config.r_box or grid.r_max / 2.0
    delta = config.delta_bound * N

    inside = enclosed(solution.rho0, r_box)
    slope = _outer_slope(solution.rho0)
    logger.debug("bound test N=%g inside=%.12g slope=%.3g", N, inside, slope)
    if inside >= N - delta and slope <= -4.0:
        return BoundFlag.BOUND
    if N - inside <= delta:
        return BoundFlag.INCONCLUSIVE

    flow = _GradientFlow(solution.constants, grid, config, solution.psi.values.copy())
    checkpoints = [_outer_third_mass(grid, flow.psi)]
    for k in range(1, config.continuation_steps + 1):
        d, dlt = flow.direction()
        if not flow.advance(d, dlt):
            break
        if k % 100 == 0:
            checkpoints.append(_outer_third_mass(grid, flow.psi))
    checkpoints.append(_outer_third_mass(grid, flow.psi))
    drifting = all(b >= a - 1e-9 * N for a, b in zip(checkpoints, checkpoints[1:]))
    if drifting and checkpoints[-1] > delta:
        return BoundFlag.UNBOUND
    return BoundFlag.INCONCLUSIVE


def classify(solution: TFDWSolution, config: Optional[FlowConfig] = None) -> TFDWSolution:
    """Copy of ``solution`` with its bound_flag set."""
    return replace(solution, bound_flag=bound_state_test(solution, config))
