"""Feedback laws of the form ``u = -(sigma sigma')^{-1} B' [x + (lam - z) H]``.

Every law kind reduces to a per-regime gain ``(sigma sigma')^{-1} B'`` and a
table ``H_eff[t, regime]``: the optimal law uses the full-scale ``H``; the
near-optimal laws use the cluster value ``Hbar(t, k)`` for regimes in
cluster ``k`` and ``Hbar_*(t, j)`` for transient regime ``s_{*j}``.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import breadth_first_order

from .errors import DegenerateSlope, DimensionMismatch, RegimeOutOfRange, TransientRegime
from .riccati import SolutionGrid, extend_transient


class LawKind(enum.Enum):
    OPTIMAL = "optimal"
    NEAR_OPTIMAL = "near_optimal"
    NEAR_OPTIMAL_TRANSIENT = "near_optimal_transient"


@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """Linear state feedback evaluated at the left grid node.

    Attributes
    ----------
    kind : LawKind
    gain : (m, d1) ndarray
        ``(sigma sigma')^{-1} B'`` per regime.
    H : (T_h + 1, m) ndarray
        Offset table used in the bracket, per regime.
    h : float
        Grid step of ``H``.
    lam, z : float
        Lagrange multiplier and target terminal mean.
    offset : (d1,) ndarray
        Constant added to the control (zero for the synthesised laws).
    """

    kind: LawKind
    gain: np.ndarray
    H: np.ndarray
    h: float
    lam: float
    z: float
    offset: np.ndarray | None = None

    def __post_init__(self):
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(self.gain.shape[1]))
        if self.H.shape[1] != self.gain.shape[0]:
            raise DimensionMismatch("H table and gain disagree on the number of regimes")

    @property
    def m(self) -> int:
        return self.gain.shape[0]

    @property
    def d1(self) -> int:
        return self.gain.shape[1]

    def node(self, t) -> np.ndarray:
        """Left grid node index for time(s) ``t``."""
        n = np.floor(np.asarray(t, dtype=float) / self.h + 1e-9).astype(np.intp)
        return np.clip(n, 0, self.H.shape[0] - 1)

    def at_node(self, n, regime, x) -> np.ndarray:
        """Controls for node index ``n`` (scalar), regimes and states (arrays).

        Returns shape ``(..., d1)``.
        """
        regime = np.asarray(regime)
        if np.any((regime < 0) | (regime >= self.m)):
            raise RegimeOutOfRange(f"regime outside 0..{self.m - 1}")
        bracket = np.asarray(x, dtype=float) + (self.lam - self.z) * self.H[n, regime]
        return -self.gain[regime] * bracket[..., None] + self.offset

    def __call__(self, t, regime, x) -> np.ndarray:
        return self.at_node(self.node(t), regime, x)

    def with_lambda(self, lam: float) -> "FeedbackLaw":
        return dataclasses.replace(self, lam=float(lam))

    def shifted(self, offset) -> "FeedbackLaw":
        return dataclasses.replace(self, offset=np.broadcast_to(np.asarray(offset, float), (self.d1,)).copy())


def _bracket_control(gain_i, x, lam, z, H_value):
    return -gain_i * (x + (lam - z) * H_value)


def optimal_feedback(t, x, regime, grid: SolutionGrid, coeffs, lam, z) -> np.ndarray:
    """``-(sigma sigma')^{-1} B' [x + (lam - z) H(t, regime)]`` for one state."""
    if not 0 <= regime < coeffs.m:
        raise RegimeOutOfRange(f"regime {regime} outside 0..{coeffs.m - 1}")
    n = int(np.clip(np.floor(t / grid.h + 1e-9), 0, grid.steps))
    return _bracket_control(coeffs.gain[regime], x, lam, z, grid.H[n, regime])


def near_optimal_feedback(t, x, regime, limit: SolutionGrid, coeffs, partition, lam, z) -> np.ndarray:
    """Regime's own gain with the cluster-level ``Hbar(t, k)``."""
    if not 0 <= regime < partition.m:
        raise RegimeOutOfRange(f"regime {regime} outside 0..{partition.m - 1}")
    k = partition.cluster_of()[regime]
    if k < 0:
        raise TransientRegime(f"regime {regime} is transient; use near_optimal_feedback_transient")
    n = int(np.clip(np.floor(t / limit.h + 1e-9), 0, limit.steps))
    return _bracket_control(coeffs.gain[regime], x, lam, z, limit.H[n, k])


def near_optimal_feedback_transient(
    t, x, regime, limit: SolutionGrid, limit_star: SolutionGrid, coeffs, partition, lam, z
) -> np.ndarray:
    """As :func:`near_optimal_feedback`, with ``Hbar_*(t, j)`` on transient
    regime ``s_{*j}``."""
    if not 0 <= regime < partition.m:
        raise RegimeOutOfRange(f"regime {regime} outside 0..{partition.m - 1}")
    j = partition.transient_position()[regime]
    if j < 0:
        return near_optimal_feedback(t, x, regime, limit, coeffs, partition, lam, z)
    n = int(np.clip(np.floor(t / limit_star.h + 1e-9), 0, limit_star.steps))
    return _bracket_control(coeffs.gain[regime], x, lam, z, limit_star.H[n, j])


def optimal_law(grid: SolutionGrid, coeffs, lam: float, z: float) -> FeedbackLaw:
    return FeedbackLaw(LawKind.OPTIMAL, coeffs.gain, grid.H, grid.h, float(lam), float(z))


def near_optimal_law(model, limit: SolutionGrid, lam: float, z: float) -> FeedbackLaw:
    """Near-optimal law built from the limit solution only."""
    p = model.partition
    H = np.empty((limit.steps + 1, p.m))
    for k, c in enumerate(p.clusters):
        H[:, list(c)] = limit.H[:, [k]]
    kind = LawKind.NEAR_OPTIMAL
    if p.m_transient:
        star = extend_transient(limit, model.weights)
        H[:, list(p.transient)] = star.H
        kind = LawKind.NEAR_OPTIMAL_TRANSIENT
    return FeedbackLaw(kind, model.coeffs.gain, H, limit.h, float(lam), float(z))


def reachable(Q, regime0: int) -> np.ndarray:
    adj = (np.asarray(Q) > 0).astype(float)
    np.fill_diagonal(adj, 0.0)
    return breadth_first_order(adj, regime0, directed=True, return_predecessors=False)


def feasibility_check(model, regime0: int | None = None) -> bool:
    """Whether the terminal-mean constraint is attainable for every target.

    With constant coefficients the expected integral of ``|B|^2`` along the
    chain is positive iff some regime reachable from the start has
    ``B != 0``.
    """
    regime0 = model.regime0 if regime0 is None else regime0
    # Q_eps has the same support for every eps > 0.
    pos = np.where(model.fast > 0, 1.0, 0.0) + np.where(model.slow > 0, 1.0, 0.0)
    np.fill_diagonal(pos, 0.0)
    idx = reachable(pos, regime0)
    return bool(np.any(np.abs(model.coeffs.B[idx]).sum(axis=1) > 0))


@dataclass(frozen=True)
class Calibration:
    lam: float
    mean0: float
    mean1: float
    slope_se: float


def solve_affine_lambda(mean0: float, mean1: float, z: float, slope_se: float = 0.0) -> Calibration:
    """Root of the affine terminal-mean map ``m(lam) = mean0 + lam (mean1 - mean0)``."""
    slope = mean1 - mean0
    if abs(slope) <= 3 * slope_se or slope == 0:
        raise DegenerateSlope(f"terminal mean slope {slope:.3g} within 3 SE ({slope_se:.3g})")
    return Calibration(lam=(z - mean0) / slope, mean0=mean0, mean1=mean1, slope_se=slope_se)


def calibrate_lambda(law: FeedbackLaw, terminal, z: float) -> Calibration:
    """Choose ``lam`` so the closed-loop terminal mean equals ``z``.

    ``terminal(law)`` must return per-path terminal states using the same
    random numbers on every call; the law is probed at ``lam = 0`` and
    ``lam = 1`` and the affine map is inverted.
    """
    x0 = np.asarray(terminal(law.with_lambda(0.0)), dtype=float)
    x1 = np.asarray(terminal(law.with_lambda(1.0)), dtype=float)
    diff = x1 - x0
    se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    return solve_affine_lambda(float(x0.mean()), float(x1.mean()), z, se)


__all__ = [
    "Calibration",
    "FeedbackLaw",
    "LawKind",
    "calibrate_lambda",
    "feasibility_check",
    "near_optimal_feedback",
    "near_optimal_feedback_transient",
    "near_optimal_law",
    "optimal_feedback",
    "optimal_law",
    "reachable",
    "solve_affine_lambda",
]
