#!/usr/bin/env python3
"""
atomtf: radial Thomas–Fermi / TFDW atoms and the liquid drop model

Commands:
  tf      TF atom(s): profile r, rho_tf, phi_tf (one Z) or mass/energy per Z
  tfdw    TFDW minimizer per (Z, N) with the bound-state proxy
  screen  diagonal screened potentials of TFDW and TF and the fitted decay slope
  radius  radius R(N, Z, κ) for each κ
  ionize  critical electron number N_c(Z) by bisection on the bound-state proxy
  drop    liquid drop fission threshold N*(Z)
  verify  fast invariant suite over every module; nonzero exit on any failure

Exit status: 0 ok, 2 config/parameter error, 3 no convergence / scan failure,
4 invariant violation / failed fit, 1 any other library error.

Usage:
  python src/atomtf.py tf --Z 1
  python src/atomtf.py screen --Z 50 --N 50 --format json --out outputs/screen.json
  python src/atomtf.py ionize --config demo_inputs/run_config.json --jobs 4
"""
import argparse
import functools
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))  # needed for src.* imports

from src.core import analysis, coulomb, liquid_drop  # noqa: E402
from src.core.errors import (  # noqa: E402
    AtomtfError,
    ConvergenceError,
    DivergentTailError,
    FitError,
    InvariantViolation,
    ParameterError,
    ScanError,
)
from src.core.radial_core import RadialFunction, build_grid, integrate, integrate_between  # noqa: E402
from src.core.tf_solver import (  # noqa: E402
    ZETA,
    ModelConstants,
    sommerfeld_check,
    sommerfeld_exponent_fit,
    tf_atomic_solve,
    tf_radius_bound,
)
from src.core.tfdw_solver import (  # noqa: E402
    FlowConfig,
    classify,
    directional_derivative_check,
    tfdw_minimize,
)
from src.io.config import ConfigError, RunConfig, configure_logging, load_run_config  # noqa: E402
from src.io.tables import emit_table  # noqa: E402

COMMANDS = ("tf", "tfdw", "screen", "radius", "ionize", "drop", "verify")

EXIT_CODES = (
    (ConfigError, 2),
    (ParameterError, 2),
    (DivergentTailError, 2),
    (ConvergenceError, 3),
    (ScanError, 3),
    (InvariantViolation, 4),
    (FitError, 4),
    (AtomtfError, 1),
)


class Progress:
    """Stage lines on stdout, or stderr when the table itself goes to stdout."""

    def __init__(self, command, to_stderr):
        self.command = command
        self.stream = sys.stderr if to_stderr else sys.stdout

    def __call__(self, msg):
        print(f"[{self.command}] {msg}", file=self.stream)


# ---------------------------------------------------------------------------
# Parameter plumbing
# ---------------------------------------------------------------------------

def _pairs(config: RunConfig):
    """(Z, N) pairs: N defaults to Z, one Z broadcasts over several N."""
    Zs, Ns = config.params.Z, config.params.N
    if Ns is None:
        return [(z, z) for z in Zs]
    if len(Zs) == len(Ns):
        return list(zip(Zs, Ns))
    if len(Zs) == 1:
        return [(Zs[0], n) for n in Ns]
    raise ConfigError(f"params.Z ({len(Zs)} values) and params.N ({len(Ns)} values) do not pair up")


def _solve_tfdw(config: RunConfig, Z: float, N: float):
    constants = config.model_constants(Z, N)
    return tfdw_minimize(constants, grid=config.grid_for(Z, N), config=config.flow_config())


# ---------------------------------------------------------------------------
# Commands: each returns (columns, rows, summary)
# ---------------------------------------------------------------------------

def cmd_tf(config: RunConfig, progress):
    Zs = config.params.Z
    if len(Zs) == 1:
        Z = Zs[0]
        progress(f"solving Z={Z:g}")
        sol = tf_atomic_solve(config.model_constants(Z), grid=config.tf_grid_for(Z))
        r = sol.rho_tf.grid.nodes
        rows = zip(r, sol.rho_tf.values, sol.phi_tf.values)
        summary = {"Z": Z, "mass": sol.mass, "mu": sol.mu, "energy": sol.energy,
                   "iterations": sol.iterations, "residual": sol.residual}
        return ["r", "rho_tf", "phi_tf"], rows, summary

    rows = []
    for Z in Zs:
        progress(f"solving Z={Z:g}")
        sol = tf_atomic_solve(config.model_constants(Z), grid=config.tf_grid_for(Z))
        rows.append([Z, sol.mass, sol.mu, sol.energy, sol.energy / Z ** (7.0 / 3.0)])
    return ["Z", "mass", "mu", "energy", "energy_scaled"], rows, {}


def cmd_tfdw(config: RunConfig, progress):
    rows = []
    for Z, N in _pairs(config):
        progress(f"minimizing Z={Z:g} N={N:g}")
        sol = classify(_solve_tfdw(config, Z, N), config.flow_config())
        t = sol.terms
        rows.append([Z, N, sol.energy, sol.mu, sol.mass, t.kinetic, t.attraction, t.hartree,
                     t.weizsacker, t.dirac, sol.iterations, sol.residual, sol.converged,
                     sol.bound_flag.value])
    columns = ["Z", "N", "energy", "mu", "mass", "kinetic", "attraction", "hartree",
               "weizsacker", "dirac", "iterations", "residual", "converged", "bound_flag"]
    return columns, rows, {}


def cmd_screen(config: RunConfig, progress):
    Z, N = _pairs(config)[0]
    progress(f"TF atom Z={Z:g}")
    sol_tf = tf_atomic_solve(config.model_constants(Z), grid=config.tf_grid_for(Z))
    progress(f"TFDW minimizer Z={Z:g} N={N:g}")
    sol = _solve_tfdw(config, Z, N)
    window = tuple(config.params.fit_window) if config.params.fit_window else None
    pair = analysis.compare_screened(sol, sol_tf, window)
    rows = zip(pair.r_values, pair.phi_diag, pair.phi_tf_diag, pair.diff)
    summary = {"Z": Z, "N": N, "slope": pair.slope, "small_r_constant": analysis.small_r_constant(pair, Z)}
    for r in config.params.r or ():
        lhs, rhs = analysis.interior_mass_identity(sol.rho0, sol_tf.rho_tf, Z, r)
        summary[f"mass_difference_r={r:g}"] = lhs
        summary[f"identity_gap_r={r:g}"] = abs(lhs - rhs)
        summary[f"harmonic_r={r:g}"] = analysis.harmonic_majorant_check(sol.rho0, Z, r).passed
    return ["r", "phi_diag", "phi_tf_diag", "diff"], rows, summary


def cmd_radius(config: RunConfig, progress):
    Z, N = _pairs(config)[0]
    progress(f"TFDW minimizer Z={Z:g} N={N:g}")
    sol = _solve_tfdw(config, Z, N)
    results = [analysis.radius_of_atom(sol, k) for k in config.params.kappa]
    rows = [[res.kappa, res.R, res.ratio] for res in results]
    ordered = sorted(results, key=lambda res: res.kappa)
    monotone = all(b.R <= a.R for a, b in zip(ordered, ordered[1:]))
    return ["kappa", "R", "ratio"], rows, {"Z": Z, "N": N, "monotone": monotone}


def cmd_ionize(config: RunConfig, progress):
    Zs = config.params.Z
    progress(f"scanning Z={','.join(f'{z:g}' for z in Zs)} step={config.params.scan_step:g} jobs={config.jobs}")
    curve = analysis.ionization_scan(Zs, config.params.scan_step, config.flow_config(),
                                     config.model_constants(1.0), workers=config.jobs)
    rows = [[z, n, e, u, f, c] for z, n, e, u, f, c in zip(
        curve.Z_values, curve.Nc_values, curve.excess, curve.upper_values,
        curve.upper_flags, curve.coarse_bound_check)]
    summary = {"coarse_constant": curve.coarse_constant, "excess_constant": curve.excess_constant,
               "excess_slope": curve.excess_slope}
    for Z, message in curve.failures.items():
        summary[f"failed_Z={Z:g}"] = message
    if not curve.Z_values:
        raise ScanError("ionization scan failed for every Z")
    return ["Z", "Nc", "excess", "upper", "upper_flag", "coarse_bound"], rows, summary


def cmd_drop(config: RunConfig, progress):
    Zs = config.params.Z
    family = config.params.split_family
    progress(f"fission thresholds family={family} jobs={config.jobs}")
    task = functools.partial(liquid_drop.fission_threshold, family=family)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(task, Zs))
    else:
        results = [task(z) for z in Zs]
    rows = [[res.Z, res.threshold, res.best_split] for res in results]
    summary = {"family": family, "radial_only": True,
               "within_volume_bound": all(res.threshold <= liquid_drop.volume_upper_bound(res.Z)
                                          for res in results)}
    if family == "equal":
        progress("equal splits overestimate N*(Z); the threshold exponent needs split_family=scanned")
    positive = [(res.Z, res.threshold - res.Z) for res in results if res.Z > 0 and res.threshold > res.Z]
    if len(positive) >= 2:
        z, excess = np.array(positive).T
        summary["excess_slope"] = analysis.fit_loglog(z, excess, min_points=2)[0]
    return ["Z", "threshold", "best_split"], rows, summary


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _radial_checks():
    grid = build_grid(1e-3, 10.0, 500)
    a, b = 0.37, 4.2
    for k in (0, 1, 2):
        f = RadialFunction(grid, grid.nodes**k)
        exact = 4.0 * math.pi * (b ** (k + 3) - a ** (k + 3)) / (k + 3)
        yield f"quadrature_r^{k}", abs(integrate_between(f, a, b) / exact - 1.0), 1e-8
    tail_grid = build_grid(1.0, 10.0, 2000)
    tail = RadialFunction(tail_grid, tail_grid.nodes**-4.0, tail_exponent=4.0)
    yield "tail_closure_r^-4", abs(integrate(tail) / (4.0 * math.pi) - 1.0), 1e-8


def _ball_checks():
    R, r = 1.0, 0.5
    grid = build_grid(1e-6, 2.0, 2000, knots=[r, R])
    ball = RadialFunction(grid, np.where(grid.nodes <= R, 1.0, 0.0), is_density=True)
    q = 4.0 * math.pi / 3.0
    V = coulomb.newton_potential(ball).evaluate(r)
    yield "ball_potential", abs(float(V) / (q / (2.0 * R) * (3.0 - r**2)) - 1.0), 1e-6
    yield "ball_self_energy", abs(coulomb.coulomb_norm(ball) / (0.6 * q**2 / R) - 1.0), 1e-6
    yield "ball_interior_mass_identity", abs(np.subtract(*analysis.interior_mass_identity(
        ball, ball.scaled(0.0), 1.0, r))), 1e-8


def _exponential_checks():
    grid = build_grid(1e-6, 60.0, 4000)
    rho = RadialFunction(grid, np.exp(-grid.nodes) / (8.0 * math.pi), is_density=True)
    yield "exponential_coulomb_norm", abs(coulomb.coulomb_norm(rho) / (5.0 / 32.0) - 1.0), 1e-6
    report = analysis.harmonic_majorant_check(rho, 1.0, 1.0)
    yield "harmonic_majorant", max(report.max_beyond - report.value_at_r, 0.0), 1e-8


def _tf_checks(seed):
    sol = tf_atomic_solve(ModelConstants(Z=1.0))
    yield "tf_mass_Z1", abs(sol.mass - 1.0), 1e-6
    yield "tf_mu_Z1", abs(sol.mu), 0.0
    phi_ratio, _ = tf_radius_bound(sol)
    yield "tf_sommerfeld_upper", max(phi_ratio - 1.0, 0.0), 1e-6
    env = sommerfeld_check(sol, 1.0)
    yield "tf_sommerfeld_envelope", -min(env.lower_margin, env.upper_margin, 0.0), 0.0
    yield "tf_sommerfeld_exponent", abs(sommerfeld_exponent_fit(sol) + ZETA), 0.05

    constants = ModelConstants(Z=1.0)
    grid = build_grid(1e-6, 30.0, 1500)
    rho = RadialFunction(grid, sol.rho_tf.evaluate(grid.nodes), is_density=True)
    psi = RadialFunction(grid, np.sqrt(rho.values / integrate(rho)))
    yield "tfdw_gradient", max(directional_derivative_check(psi, constants, seed=seed)), 1e-5


def _tfdw_checks():
    constants = ModelConstants(Z=2.0)
    grid = build_grid(1e-6 * 2.0 ** (-1.0 / 3.0), 30.0, 1500)
    sol = tfdw_minimize(constants, grid=grid, config=FlowConfig(max_iter=50), strict=False)
    yield "tfdw_mass_drift", abs(sol.mass - constants.N) / constants.N, 1e-10
    yield "tfdw_energy_increases", int(np.sum(np.diff(sol.energy_history) > 0.0)), 0


def _analysis_checks():
    grid = build_grid(1e-6, 60.0, 4000)
    rho = RadialFunction(grid, np.exp(-grid.nodes) / (8.0 * math.pi), is_density=True)
    radii = [analysis.radius_from_density(rho, k, 1.0).R for k in (0.1, 0.3, 0.6)]
    yield "radius_monotone_in_kappa", sum(b > a for a, b in zip(radii, radii[1:])), 0
    diag = analysis.screened_diagonal(tf_atomic_solve(ModelConstants(Z=1.0)).rho_tf, 1.0)
    r = diag.grid.nodes
    sel = (r >= 10.0) & (r <= 100.0)
    slope, _ = analysis.fit_loglog(r[sel], diag.values[sel])
    yield "tf_screened_slope", max(-4.5 - slope, slope + 2.0, 0.0), 0.0


def _drop_checks():
    oracle = liquid_drop.equal_split_threshold_zero_charge()
    found = liquid_drop.fission_threshold(0.0, "equal").threshold
    yield "drop_equal_split_threshold", abs(found / oracle - 1.0), 1e-6
    direct, expanded = liquid_drop.repulsion_cross_check(1.0, 0.6)
    yield "drop_repulsion_cross_check", abs(direct - expanded) / abs(direct), 1e-8


def cmd_verify(config: RunConfig, progress):
    rows = []
    failures = 0
    suites = (("radial_core", _radial_checks()), ("coulomb", _ball_checks()),
              ("coulomb", _exponential_checks()), ("tf", _tf_checks(config.seed)),
              ("tfdw", _tfdw_checks()), ("analysis", _analysis_checks()),
              ("liquid_drop", _drop_checks()))
    for module, checks in suites:
        progress(f"checking {module}")
        for name, value, tol in checks:
            passed = bool(value <= tol)
            failures += not passed
            rows.append([module, name, value, tol, passed])
    return ["module", "check", "value", "tolerance", "passed"], rows, {"failures": failures}


HANDLERS = {
    "tf": cmd_tf,
    "tfdw": cmd_tfdw,
    "screen": cmd_screen,
    "radius": cmd_radius,
    "ionize": cmd_ionize,
    "drop": cmd_drop,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(description="atomtf: radial TF/TFDW atoms and liquid drops")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, metavar="FILE", help="RunConfig JSON")
    parser.add_argument("--Z", nargs="+", type=float)
    parser.add_argument("--N", nargs="+", type=float)
    parser.add_argument("--kappa", nargs="+", type=float)
    parser.add_argument("--r", nargs="+", type=float)
    parser.add_argument("--scan-step", dest="scan_step", type=float)
    parser.add_argument("--split-family", dest="split_family", choices=liquid_drop.SPLIT_FAMILIES)
    parser.add_argument("--out", type=str, metavar="FILE")
    parser.add_argument("--format", choices=["csv", "json"])
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--seed", type=int)
    return parser


def run(command, config: RunConfig, progress=None):
    """Execute one command; returns the rendered table text."""
    progress = progress or Progress(command, config.output.path is None)
    columns, rows, summary = HANDLERS[command](config, progress)
    path = Path(config.output.path) if config.output.path else None
    text = emit_table(rows, columns, config.output.format, path, summary)
    if command == "verify" and summary["failures"]:
        raise InvariantViolation(f"{summary['failures']} verify check(s) failed")
    return text


def exit_code(exc):
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = load_run_config(args.config).with_overrides({
            "params.Z": args.Z,
            "params.N": args.N,
            "params.kappa": args.kappa,
            "params.r": args.r,
            "params.scan_step": args.scan_step,
            "params.split_family": args.split_family,
            "output.path": args.out,
            "output.format": args.format,
            "jobs": args.jobs,
            "seed": args.seed,
        })
        text = run(args.command, config)
    except (ConfigError, AtomtfError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        raise SystemExit(exit_code(e))

    if config.output.path is None:
        sys.stdout.write(text)
    else:
        print(f"[{args.command}] wrote {config.output.path}")
    return 0


if __name__ == "__main__":
    main()
