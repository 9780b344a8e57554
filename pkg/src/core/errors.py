"""Exception hierarchy shared by every atomtf module.

The CLI maps each class to an exit status (see src/atomtf.py):
  ParameterError / DivergentTailError  -> 2
  ConvergenceError / ScanError          -> 3
  InvariantViolation / FitError         -> 4
"""

from typing import Optional


class AtomtfError(Exception):
    """Root of all library errors."""


class ParameterError(AtomtfError, ValueError):
    """An argument is outside its admissible range."""


class DivergentTailError(AtomtfError, ArithmeticError):
    """A power-law tail is too slow for the requested integral to converge."""


class ConvergenceError(AtomtfError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InvariantViolation(AtomtfError):
    """A checked invariant failed beyond its declared slack."""


class FitError(AtomtfError):
    """Not enough usable points for a log-log fit."""


class ScanError(AtomtfError):
    """A parameter scan could not bracket its target."""

    def __init__(self, message: str, parameter: Optional[float] = None):
        super().__init__(message)
        self.parameter = parameter
