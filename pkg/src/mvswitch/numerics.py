"""Numeric tolerances used across the package.

All checks read from the module-level :data:`TOL` instance, so a single
assignment (or the :func:`tolerances` context manager) rescales every test.
"""
from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    row_sum: float = 1e-12        # relative to m * max|entry|
    probability: float = 1e-10    # normalisation of stationary / absorption weights
    stationary_residual: float = 1e-10
    hurwitz: float = 1e-10        # eigenvalue real parts must be < -hurwitz
    h_upper: float = 1e-9         # slack on H <= 1
    grid: float = 1e-9            # relative slack on T/h integrality


TOL = Tolerances()


@contextlib.contextmanager
def tolerances(**changes):
    """Temporarily override fields of :data:`TOL`."""
    global TOL
    saved = TOL
    TOL = dataclasses.replace(TOL, **changes)
    try:
        yield TOL
    finally:
        TOL = saved


def current() -> Tolerances:
    return TOL
