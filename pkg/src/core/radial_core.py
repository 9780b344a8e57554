"""Radial grids, quadrature and differential operators.

Every 3D integral of a radial function is reduced to ∫ f(r) 4πr² dr on a
logarithmic mesh. The quadrature is a product-integration rule: on each cell
[r_j, r_j+1] the integrand f is replaced by the average of its two quadratic
interpolants (stencils {j-1, j, j+1} and {j, j+1, j+2}) and integrated against
the exact weight 4πr². The rule is therefore exact for f ∈ {1, r, r²} on any
sub-interval, including partial cells, which is what makes Newton's theorem
hold to rounding on the grid.

Knots mark radii where a sampled function may jump (ball surfaces, truncation
radii). A knot is paired with a partner node just outside it; the knot node
carries the left limit, the partner the right limit, and no stencil crosses the
pair.

Usage:
    from src.core.radial_core import build_grid, RadialFunction, integrate

    grid = build_grid(1e-6, 50.0, 2000)
    rho = RadialFunction(grid, np.exp(-grid.nodes) / (8 * np.pi), is_density=True)
    integrate(rho)   # ≈ 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sps

from src.core.errors import DivergentTailError, ParameterError


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

MIN_NODES = 16

# Relative offset of the partner node that carries the right limit at a knot
KNOT_GAP = 1e-12

# Defaults for grid construction (dimensionless atomic units)
DEFAULT_N = 4000
DEFAULT_R_MIN_SCALE = 1e-6      # times max(1, Z)^(-1/3)
DEFAULT_R_MAX_SCALE = 60.0      # times max(1, N - Z + 1)

# Outer radius for TF solves; the Sommerfeld tail beyond it carries < 1e-8 of the mass
TF_R_MAX = 1.0e3

FOUR_PI = 4.0 * math.pi


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Logarithmic radial mesh with volume quadrature.

    Attributes
    ----------
    nodes : np.ndarray
        Strictly increasing radii r_i > 0.
    weights : np.ndarray
        Node weights w_i, Σ w_i f(r_i) ≈ ∫ f 4πr² dr over [r_min, r_max].
    cell_weights : np.ndarray
        Shape (n-1, 4); row j holds the weights of nodes j-1..j+2 for the
        integral over cell j with weight 4πr².
    cell_weights_r : np.ndarray
        Same layout for the weight 4πr (outer Newton integrals).
    breaks : np.ndarray
        Boolean per cell; True for the zero-width cell between a knot and its partner.
    knots : tuple
        Radii of the knots, ascending.
    """

    nodes: np.ndarray
    weights: np.ndarray
    cell_weights: np.ndarray
    cell_weights_r: np.ndarray
    breaks: np.ndarray
    knots: tuple = field(default=())

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def r_min(self) -> float:
        return float(self.nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def log_nodes(self) -> np.ndarray:
        return np.log(self.nodes)

    @cached_property
    def derivative(self) -> sps.csr_matrix:
        """Sparse d/d(log r), second order, one-sided at the ends.

        Same coefficients as ``np.gradient(values, log_nodes, edge_order=2)``.
        """
        return _log_derivative_matrix(self.log_nodes)

    def cell_index(self, r: float) -> int:
        """Index j of the cell with nodes[j] <= r < nodes[j+1] (clamped to the last cell)."""
        j = int(np.searchsorted(self.nodes, r, side="right")) - 1
        return min(max(j, 0), self.n - 2)

    def partial_cell_weights(self, j: int, r: float, power: int = 2) -> np.ndarray:
        """Weights of nodes j-1..j+2 for ∫_{r_j}^{r} f 4πr^power dr."""
        X = np.array([r - self.nodes[j]])
        return _stencil_weights(self.nodes, self.breaks, np.array([j]), X, power)[0]


def build_grid(r_min: float, r_max: float, n: int, knots: Iterable[float] = ()) -> RadialGrid:
    """Construct a log-spaced grid on [r_min, r_max] with n nodes (plus knot partners)."""
    if not (np.isfinite(r_min) and np.isfinite(r_max)) or not (0.0 < r_min < r_max):
        raise ParameterError(f"grid bounds must satisfy 0 < r_min < r_max, given ({r_min}, {r_max})")
    if int(n) != n or n < MIN_NODES:
        raise ParameterError(f"n must be an integer >= {MIN_NODES}, given {n}")
    n = int(n)
    nodes = np.geomspace(r_min, r_max, n)

    knot_list = sorted({float(k) for k in knots})
    snapped = []
    for k in knot_list:
        if not (r_min < k < r_max * (1.0 - 2 * KNOT_GAP)):
            raise ParameterError(f"knot must lie strictly inside ({r_min}, {r_max}), given {k}")
        idx = int(np.argmin(np.abs(np.log(nodes) - math.log(k))))
        idx = min(max(idx, 1), n - 2)
        if idx in snapped:
            raise ParameterError(f"knots closer than the grid spacing near r={k}")
        nodes[idx] = k
        snapped.append(idx)

    if snapped:
        partners = [nodes[i] * (1.0 + KNOT_GAP) for i in snapped]
        nodes = np.sort(np.concatenate([nodes, partners]))
    if np.any(np.diff(nodes) <= 0.0):
        raise ParameterError("grid nodes are not strictly increasing; move the knots apart")

    breaks = np.zeros(nodes.size - 1, dtype=bool)
    for k in knot_list:
        breaks[int(np.searchsorted(nodes, k))] = True

    cells = np.arange(nodes.size - 1)
    widths = np.diff(nodes)
    cell_w = _stencil_weights(nodes, breaks, cells, widths, power=2)
    cell_w_r = _stencil_weights(nodes, breaks, cells, widths, power=1)

    weights = np.zeros(nodes.size + 2)
    for col in range(4):
        np.add.at(weights, cells + col, cell_w[:, col])
    weights = weights[1:-1]

    for arr in (nodes, weights, cell_w, cell_w_r, breaks):
        arr.setflags(write=False)
    return RadialGrid(nodes, weights, cell_w, cell_w_r, breaks, tuple(knot_list))


def default_grid(Z: float, N: float, n: int = DEFAULT_N, knots: Iterable[float] = ()) -> RadialGrid:
    """Grid resolving the Z^(-1/3) core and the O(1) mantle of an atom."""
    r_min = DEFAULT_R_MIN_SCALE * max(1.0, Z) ** (-1.0 / 3.0)
    r_max = DEFAULT_R_MAX_SCALE * max(1.0, N - Z + 1.0)
    return build_grid(r_min, r_max, n, knots)


def tf_grid(Z: float, n: int = DEFAULT_N, r_max: float = TF_R_MAX, knots: Iterable[float] = ()) -> RadialGrid:
    """Grid for TF solves; reaches far enough that the r^-6 tail closure is negligible."""
    r_min = DEFAULT_R_MIN_SCALE * max(1.0, Z) ** (-1.0 / 3.0)
    return build_grid(r_min, r_max, n, knots)


def _stencil_weights(nodes: np.ndarray, breaks: np.ndarray, cells: np.ndarray,
                     upper: np.ndarray, power: int) -> np.ndarray:
    """Product-integration weights for ∫_{r_j}^{r_j + X} f(r) 4π r^power dr.

    Returns an array (len(cells), 4) for nodes j-1, j, j+1, j+2. Work is done
    in the cell coordinate v = (r - r_j) / (r_j+1 - r_j) to keep the
    Lagrange coefficients O(1).
    """
    n = nodes.size
    j = np.asarray(cells)
    a = nodes[j]
    H = nodes[j + 1] - a
    Y = np.asarray(upper, dtype=float) / H

    # m[p] = ∫_0^Y v^p (H v + a)^power H dv
    m = np.empty((3, j.size))
    for p in range(3):
        if power == 2:
            m[p] = H * (H**2 * Y ** (p + 3) / (p + 3) + 2 * a * H * Y ** (p + 2) / (p + 2)
                        + a**2 * Y ** (p + 1) / (p + 1))
        else:
            m[p] = H * (H * Y ** (p + 2) / (p + 2) + a * Y ** (p + 1) / (p + 1))
    m *= FOUR_PI

    is_break = breaks[j]
    has_left = (j >= 1) & ~is_break & ~breaks[np.clip(j - 1, 0, n - 2)]
    has_right = (j + 2 <= n - 1) & ~is_break & ~breaks[np.clip(j + 1, 0, n - 2)]

    def lagrange(points):
        out = []
        for k in range(3):
            q1, q2 = [points[i] for i in range(3) if i != k]
            d = (points[k] - q1) * (points[k] - q2)
            out.append(((q1 * q2) * m[0] - (q1 + q2) * m[1] + m[2]) / d)
        return out

    zero = np.zeros(j.size)
    one = np.ones(j.size)
    v_left = (nodes[np.clip(j - 1, 0, n - 1)] - a) / H
    v_right = (nodes[np.clip(j + 2, 0, n - 1)] - a) / H
    # Guard against zero denominators where a stencil does not exist
    v_left = np.where(has_left, v_left, -1.0)
    v_right = np.where(has_right, v_right, 2.0)
    left = lagrange((v_left, zero, one))
    right = lagrange((zero, one, v_right))

    w = np.zeros((j.size, 4))
    both = has_left & has_right
    only_left = has_left & ~has_right
    only_right = has_right & ~has_left
    neither = ~(has_left | has_right)

    w[both, 0] = 0.5 * left[0][both]
    w[both, 1] = 0.5 * (left[1][both] + right[0][both])
    w[both, 2] = 0.5 * (left[2][both] + right[1][both])
    w[both, 3] = 0.5 * right[2][both]

    w[only_left, 0] = left[0][only_left]
    w[only_left, 1] = left[1][only_left]
    w[only_left, 2] = left[2][only_left]

    w[only_right, 1] = right[0][only_right]
    w[only_right, 2] = right[1][only_right]
    w[only_right, 3] = right[2][only_right]

    # linear interpolation across breaks
    w[neither, 1] = (m[0] - m[1])[neither]
    w[neither, 2] = m[1][neither]
    return w


def _log_derivative_matrix(t: np.ndarray) -> sps.csr_matrix:
    n = t.size
    dt = np.diff(t)
    rows, cols, vals = [], [], []

    h1, h2 = dt[0], dt[1]
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))]

    h1 = dt[:-1]
    h2 = dt[1:]
    i = np.arange(1, n - 1)
    rows += list(np.repeat(i, 3))
    cols += list(np.stack([i - 1, i, i + 1], axis=1).ravel())
    vals += list(np.stack([-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))],
                          axis=1).ravel())

    h1, h2 = dt[-2], dt[-1]
    rows += [n - 1, n - 1, n - 1]
    cols += [n - 3, n - 2, n - 1]
    vals += [h2 / (h1 * (h1 + h2)), -(h2 + h1) / (h1 * h2), (2 * h2 + h1) / (h2 * (h1 + h2))]

    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# Sampled functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialFunction:
    """A radial profile sampled on a grid.

    ``tail_exponent`` p declares f(r) ≈ f(r_max)(r/r_max)^(-p) beyond the grid;
    None means the function is truncated at r_max.
    """

    grid: RadialGrid
    values: np.ndarray
    tail_exponent: Optional[float] = None
    is_density: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ParameterError(f"values must have shape {self.grid.nodes.shape}, given {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("values must be finite at every node")
        if self.is_density and np.any(vals < 0.0):
            raise ParameterError(f"density has negative values (min {vals.min():.3e})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def tail_value(self) -> float:
        return float(self.values[-1])

    def with_values(self, values: np.ndarray, **changes) -> "RadialFunction":
        kwargs = dict(tail_exponent=self.tail_exponent, is_density=self.is_density)
        kwargs.update(changes)
        return RadialFunction(self.grid, values, **kwargs)

    def scaled(self, factor: float) -> "RadialFunction":
        return self.with_values(self.values * factor)

    def restricted(self, r: float, outside: bool = True) -> "RadialFunction":
        """Keep the part with |x| > r (outside=True) or |x| <= r.

        Exact when r is a knot of the grid.
        """
        keep = self.grid.nodes > r if outside else self.grid.nodes <= r
        vals = np.where(keep, self.values, 0.0)
        tail = self.tail_exponent if outside else None
        return self.with_values(vals, tail_exponent=tail)

    def evaluate(self, r) -> np.ndarray:
        """Linear interpolation in log r; power-law tail beyond r_max."""
        r = np.asarray(r, dtype=float)
        out = np.interp(np.log(r), self.grid.log_nodes, self.values)
        beyond = r > self.grid.r_max
        if np.any(beyond):
            if self.tail_exponent is None:
                tail = np.zeros_like(r)
            else:
                tail = self.tail_value * (r / self.grid.r_max) ** (-self.tail_exponent)
            out = np.where(beyond, tail, out)
        return out


def resample(f: RadialFunction, grid: RadialGrid) -> RadialFunction:
    """Transfer f onto another grid."""
    return RadialFunction(grid, f.evaluate(grid.nodes), tail_exponent=f.tail_exponent,
                          is_density=f.is_density)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def cell_integrals(grid: RadialGrid, values: np.ndarray, power: int = 2) -> np.ndarray:
    W = grid.cell_weights if power == 2 else grid.cell_weights_r
    n = grid.n
    fpad = np.concatenate(([0.0], values, [0.0]))
    F = np.stack([fpad[k:k + n - 1] for k in range(4)], axis=1)
    return np.einsum("ij,ij->i", W, F)


def tail_integral(f: RadialFunction, power: int = 2) -> float:
    """∫_{r_max}^∞ f 4π r^power dr for the declared power-law tail."""
    if f.tail_exponent is None or f.tail_value == 0.0:
        return 0.0
    p = float(f.tail_exponent)
    R = f.grid.r_max
    if p <= power + 1:
        raise DivergentTailError(
            f"tail exponent {p} too small for weight r^{power} (needs > {power + 1})"
        )
    return FOUR_PI * f.tail_value * R ** (power + 1) / (p - power - 1)


def integrate(f: RadialFunction) -> float:
    """∫ f dx over ℝ³ for radial f, including the tail closure."""
    return float(f.grid.weights @ f.values) + tail_integral(f, 2)


def cumulative(f: RadialFunction, power: int = 2) -> np.ndarray:
    """C_i = ∫_{r_min}^{r_i} f 4π r^power dr at every node."""
    return np.concatenate(([0.0], np.cumsum(cell_integrals(f.grid, f.values, power))))


def enclosed(f: RadialFunction, r: float, power: int = 2) -> float:
    """∫_{r_min}^{r} f 4π r^power dr for arbitrary r (partial cells included).

    Clamped to the grid: r >= r_max gives the grid total without the tail.
    """
    grid = f.grid
    if r <= grid.r_min:
        return 0.0
    if r >= grid.r_max:
        return float(cumulative(f, power)[-1])
    j = grid.cell_index(r)
    whole = cell_integrals(grid, f.values, power)[:j].sum()
    w = grid.partial_cell_weights(j, r, power)
    fpad = np.concatenate(([0.0], f.values, [0.0]))
    return float(whole + w @ fpad[j:j + 4])


def integrate_between(f: RadialFunction, a: float, b: float) -> float:
    """∫_{a<|x|<b} f dx; b = inf includes the tail."""
    if b < a:
        raise ParameterError(f"integration bounds must satisfy a <= b, given ({a}, {b})")
    upper = integrate(f) if math.isinf(b) else enclosed(f, b)
    return upper - enclosed(f, a)


def lp_norm(f: RadialFunction, p: float) -> float:
    """‖f‖_p over ℝ³."""
    g = f.with_values(np.abs(f.values) ** p,
                      tail_exponent=None if f.tail_exponent is None else f.tail_exponent * p,
                      is_density=False)
    return integrate(g) ** (1.0 / p)


def gradient_energy(psi: RadialFunction) -> float:
    """∫ |dψ/dr|² 4πr² dr, derivatives by finite differences in log r."""
    grid = psi.grid
    if grid.n < 3:
        raise ParameterError(f"gradient needs at least 3 nodes, given {grid.n}")
    dpsi = (grid.derivative @ psi.values) / grid.nodes
    total = float(grid.weights @ dpsi**2)
    if psi.tail_exponent is not None and psi.tail_value != 0.0:
        p = float(psi.tail_exponent)
        if p <= 1.5:
            raise DivergentTailError(f"ψ tail exponent {p} leaves ψ² non-integrable (needs > 1.5)")
        total += FOUR_PI * p**2 * psi.tail_value**2 * grid.r_max / (2 * p - 1)
    return total
