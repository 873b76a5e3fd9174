"""Backward Riccati-type systems for the mean-variance problem.

For ``P`` (terminal value 1)::

    dP/dt (t,i) = P(t,i) [rho(i) - 2 r(i)] - sum_j q_ij P(t,j)

and for ``H`` (terminal value 1)::

    dH/dt (t,i) = H(t,i) r(i) - (1/P(t,i)) sum_j q_ij P(t,j) H(t,j)
                  + (H(t,i)/P(t,i)) sum_j q_ij P(t,j)

The same equations serve the full-scale chain (regimes) and the aggregated
limit (clusters), the latter with averaged coefficients and the aggregated
generator.

With constant coefficients the ``P`` system is linear and autonomous, so a
classical RK4 step is the matrix polynomial
``I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24``; repeated steps are applied
as powers of that matrix.  ``H`` is integrated through ``G = P * H``, which
satisfies the linear system ``dG/dt = G (rho - r) - Q G`` with ``G(T) = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import BoundViolation, DimensionMismatch, GridMismatch, NonconformingGrid


@dataclass(frozen=True, eq=False)
class SolutionGrid:
    """``P`` and ``H`` on the uniform grid ``t_j = j h``, ``j = 0..T_h``.

    ``P`` and ``H`` have shape ``(T_h + 1, n)``, columns indexed by regime
    (full-scale) or by cluster (limit).
    """

    T: float
    h: float
    P: np.ndarray
    H: np.ndarray
    substeps: int = 1

    @property
    def steps(self) -> int:
        return self.P.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.h

    @property
    def n(self) -> int:
        return self.P.shape[1]

    def same_grid(self, other: "SolutionGrid") -> bool:
        return self.steps == other.steps and math.isclose(self.h, other.h, rel_tol=1e-12)


def grid_steps(T: float, h: float) -> int:
    """Number of steps ``T/h``; raises unless ``h`` divides ``T``."""
    if not (T > 0 and h > 0):
        raise NonconformingGrid(f"T and h must be positive, got T={T}, h={h}")
    n = round(T / h)
    if n < 1 or abs(n * h - T) > numerics.TOL.grid * max(T, 1.0):
        raise NonconformingGrid(f"h={h} does not divide T={T}")
    return int(n)


def rk4_propagator(A: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for ``y' = A y`` as a matrix."""
    hA = h * A
    I = np.eye(A.shape[0])
    hA2 = hA @ hA
    return I + hA + hA2 / 2 + hA2 @ hA / 6 + hA2 @ hA2 / 24


STEP_RATE = 0.01  # internal h_int * max_i(|q_ii| + |c_i|)


def stable_substeps(Q: np.ndarray, c: np.ndarray, h: float) -> int:
    """Internal RK4 substeps per reporting step.

    The internal step satisfies ``h_int * max_i(|q_ii| + |c_i|) <= STEP_RATE``.
    This is far inside the RK4 stability region (Gershgorin bound
    ``2 max|q_ii| + max|c|``) and keeps the global relative error near
    ``T * rate * STEP_RATE^4 / 120``.  Substeps are free: one propagator is
    raised to the substep power once per solve.
    """
    rate = float(np.max(np.abs(np.diag(Q)) + np.abs(c), initial=0.0))
    return max(1, math.ceil(h * rate / STEP_RATE - 1e-9))


def _backward_linear(Q: np.ndarray, c: np.ndarray, T: float, h: float) -> tuple[np.ndarray, int]:
    """Solve ``dY/dt = c * Y - Q Y`` backward from ``Y(T) = 1`` with RK4."""
    n = grid_steps(T, h)
    sub = stable_substeps(Q, c, h)
    A = Q - np.diag(c)  # in reversed time tau = T - t: dY/dtau = A Y
    step = np.linalg.matrix_power(rk4_propagator(A, h / sub), sub)
    Y = np.empty((n + 1, Q.shape[0]))
    Y[n] = 1.0
    for j in range(n, 0, -1):
        Y[j - 1] = step @ Y[j]
    return Y, sub


def _check_inputs(Q, coeffs):
    Q = np.asarray(Q, dtype=float)
    r = np.asarray(coeffs.r, dtype=float)
    rho = np.asarray(coeffs.rho, dtype=float)
    if Q.shape != (r.size, r.size) or rho.shape != r.shape:
        raise DimensionMismatch(f"generator {Q.shape} vs {r.size} coefficient rows")
    return Q, r, rho


def bound_constant(coeffs, T: float) -> float:
    """Explicit upper bound ``c`` for ``P``:
    ``exp((2 max r + max|rho - 2r|) T)``."""
    r = np.asarray(coeffs.r, dtype=float)
    rho = np.asarray(coeffs.rho, dtype=float)
    return math.exp((2 * max(r.max(), 0.0) + np.abs(rho - 2 * r).max()) * T)


def solve_P(Q, coeffs, T: float, h: float) -> np.ndarray:
    """Table of ``P(t_j, i)``, shape ``(T/h + 1, n)``.

    ``coeffs`` is anything with ``r`` and ``rho`` arrays: regime
    coefficients for the full-scale system or cluster coefficients for the
    limit system.
    """
    Q, r, rho = _check_inputs(Q, coeffs)
    P, _ = _backward_linear(Q, rho - 2 * r, T, h)
    P[-1] = 1.0
    if not np.all(np.isfinite(P)) or P.min() <= 0:
        raise BoundViolation("P left (0, inf); step too large for this generator")
    c = bound_constant(coeffs, T)
    if P.max() > c * (1 + 1e-9):
        raise BoundViolation(f"P exceeds the bound c={c:.6g}")
    return P


def solve_H(Q, coeffs, P: np.ndarray, T: float, h: float) -> np.ndarray:
    """Table of ``H(t_j, i)`` given the already solved ``P`` table."""
    Q, r, rho = _check_inputs(Q, coeffs)
    P = np.asarray(P, dtype=float)
    n = grid_steps(T, h)
    if P.shape != (n + 1, r.size):
        raise GridMismatch(f"P table shape {P.shape} does not match grid ({n + 1}, {r.size})")
    if P.min() <= 0:
        raise BoundViolation("P must be strictly positive to solve for H")
    G, _ = _backward_linear(Q, rho - r, T, h)
    H = G / P
    H[-1] = 1.0
    # Only positivity is enforced: H <= 1 can fail for the exact solution when
    # some r(i) < 0 (dH/dt = r(i) at t = T); see check_bounds.
    if not np.all(np.isfinite(H)) or H.min() <= 0:
        raise BoundViolation(f"H left (0, inf): minimum {H.min():.6g}")
    return H


@dataclass(frozen=True)
class BoundReport:
    """Outcome of the a priori bounds ``0 < P <= c`` and ``0 < H <= 1``."""

    terminal_exact: bool
    p_min: float
    p_max: float
    c: float
    h_min: float
    h_max: float

    @property
    def p_ok(self) -> bool:
        return self.p_min > 0 and self.p_max <= self.c

    @property
    def h_ok(self) -> bool:
        return self.h_min > 0 and self.h_max <= 1 + numerics.TOL.h_upper

    @property
    def ok(self) -> bool:
        return self.terminal_exact and self.p_ok and self.h_ok


def check_bounds(grid: "SolutionGrid", coeffs) -> BoundReport:
    return BoundReport(
        terminal_exact=bool(np.all(grid.P[-1] == 1.0) and np.all(grid.H[-1] == 1.0)),
        p_min=float(grid.P.min()),
        p_max=float(grid.P.max()),
        c=bound_constant(coeffs, grid.T),
        h_min=float(grid.H.min()),
        h_max=float(grid.H.max()),
    )


def solve(Q, coeffs, T: float, h: float) -> SolutionGrid:
    """Solve ``P`` then ``H`` on one grid."""
    Q, r, rho = _check_inputs(Q, coeffs)
    P = solve_P(Q, coeffs, T, h)
    H = solve_H(Q, coeffs, P, T, h)
    sub = stable_substeps(Q, rho - 2 * r, h)
    return SolutionGrid(T=T, h=h, P=P, H=H, substeps=sub)


def solve_full(model, eps: float, T: float, h: float) -> SolutionGrid:
    return solve(model.generator(eps), model.coeffs, T, h)


def solve_limit(model, T: float, h: float) -> SolutionGrid:
    """Cluster-level ``P``, ``H`` with the aggregated generator (transient
    variant when the model has transient states)."""
    return solve(model.limit_generator, model.cluster_coeffs, T, h)


def extend_transient(limit: SolutionGrid, weights) -> SolutionGrid:
    """Values at transient states as convex combinations of cluster values:
    ``P_*(s, j) = sum_k a_{m_k, j} P(s, k)`` and likewise for ``H``."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != limit.n:
        raise DimensionMismatch(f"weights shape {weights.shape} vs {limit.n} clusters")
    return SolutionGrid(
        T=limit.T, h=limit.h, P=limit.P @ weights, H=limit.H @ weights, substeps=limit.substeps
    )


def lift(limit: SolutionGrid, lifting: np.ndarray) -> SolutionGrid:
    """Cluster tables expressed per regime (``lifting`` is ``m x l``)."""
    return SolutionGrid(
        T=limit.T, h=limit.h, P=limit.P @ lifting.T, H=limit.H @ lifting.T, substeps=limit.substeps
    )


def value_head(grid: SolutionGrid, x0: float, regime0: int, lam: float, z: float) -> float:
    """Leading term ``P(0, a) [x0 + (lam - z) H(0, a)]^2`` of the value."""
    if not 0 <= regime0 < grid.n:
        raise DimensionMismatch(f"regime {regime0} outside table with {grid.n} columns")
    return float(grid.P[0, regime0] * (x0 + (lam - z) * grid.H[0, regime0]) ** 2)
