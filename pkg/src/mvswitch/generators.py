"""Markov-chain generators for the two-time-scale structure.

Generators are plain ``float`` ndarrays; the functions here validate them,
assemble ``Q_eps = Q_fast / eps + Q_slow`` and aggregate fast clusters into
super-states weighted by their stationary distributions.  Transient states
are mapped to clusters through absorption weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from . import numerics
from .errors import (
    DimensionMismatch,
    MissingRegime,
    NegativeOffDiagonal,
    NonpositiveEpsilon,
    NotHurwitz,
    NotIrreducible,
    RowSumNonzero,
    SingularSystem,
)


@dataclass(frozen=True)
class Partition:
    """Regime indices (0-based) grouped into recurrent clusters plus an
    optional transient set."""

    clusters: tuple[tuple[int, ...], ...]
    transient: tuple[int, ...] = ()
    m: int = field(default=-1)

    def __post_init__(self):
        clusters = tuple(tuple(int(i) for i in c) for c in self.clusters)
        transient = tuple(int(i) for i in self.transient)
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "transient", transient)
        members = [i for c in clusters for i in c] + list(transient)
        m = len(members) if self.m < 0 else self.m
        object.__setattr__(self, "m", m)
        if not clusters or any(len(c) == 0 for c in clusters):
            raise DimensionMismatch("every cluster must be nonempty")
        if sorted(members) != list(range(m)):
            raise DimensionMismatch(
                f"clusters and transient set must partition 0..{m - 1}, got {members}"
            )

    @property
    def l(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def m_transient(self) -> int:
        return len(self.transient)

    @property
    def recurrent(self) -> tuple[int, ...]:
        return tuple(i for c in self.clusters for i in c)

    def cluster_of(self) -> np.ndarray:
        """Cluster label per regime; ``-1`` for transient regimes."""
        out = np.full(self.m, -1, dtype=np.intp)
        for k, c in enumerate(self.clusters):
            out[list(c)] = k
        return out

    def transient_position(self) -> np.ndarray:
        """Position of each regime inside the transient set; ``-1`` otherwise."""
        out = np.full(self.m, -1, dtype=np.intp)
        out[list(self.transient)] = np.arange(self.m_transient)
        return out


def validate_generator(M) -> np.ndarray:
    """Return ``M`` as a float array after checking it is a rate matrix.

    Raises
    ------
    NegativeOffDiagonal
        If any off-diagonal entry is negative; the message lists them.
    RowSumNonzero
        If a row sum exceeds ``TOL.row_sum * m * max|entry|`` in magnitude.
    """
    Q = np.array(M, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionMismatch(f"generator must be square, got shape {Q.shape}")
    m = Q.shape[0]
    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    bad = np.argwhere(off < 0)
    if bad.size:
        where = ", ".join(f"({i + 1},{j + 1})" for i, j in bad)
        raise NegativeOffDiagonal(f"negative off-diagonal entries at {where}")
    scale = max(float(np.abs(Q).max(initial=0.0)), 1.0)
    sums = Q.sum(axis=1)
    bad_rows = np.flatnonzero(np.abs(sums) > numerics.TOL.row_sum * m * scale)
    if bad_rows.size:
        where = ", ".join(f"row {i + 1} sums to {sums[i]:.6g}" for i in bad_rows)
        raise RowSumNonzero(where)
    return Q


def assemble_fast_slow(fast, slow, eps: float) -> np.ndarray:
    """Two-time-scale generator ``fast / eps + slow``."""
    if not eps > 0:
        raise NonpositiveEpsilon(f"eps must be positive, got {eps}")
    fast = np.asarray(fast, dtype=float)
    slow = np.asarray(slow, dtype=float)
    if fast.shape != slow.shape:
        raise DimensionMismatch(f"fast {fast.shape} and slow {slow.shape} differ")
    return validate_generator(fast / eps + slow)


def is_irreducible(Q) -> bool:
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] == 1:
        return True
    adj = (Q > 0).astype(float)
    np.fill_diagonal(adj, 0.0)
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def stationary_distribution(Q) -> np.ndarray:
    """Unique probability vector ``mu`` with ``mu @ Q = 0`` for an irreducible
    generator block.

    The transposed system has its last equation replaced by the
    normalisation ``sum(mu) = 1`` and is solved by LU with partial pivoting.
    """
    Q = validate_generator(Q)
    m = Q.shape[0]
    if not is_irreducible(Q):
        raise NotIrreducible("generator block is not irreducible")
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    try:
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystem(str(exc)) from exc
    if np.any(np.abs(np.diag(lu)) < np.finfo(float).eps * max(1.0, np.abs(A).max())):
        raise SingularSystem("normalised stationary system is singular")
    mu = scipy.linalg.lu_solve((lu, piv), rhs)
    tol = numerics.TOL
    if np.any(mu <= 0) or abs(mu.sum() - 1.0) > tol.probability:
        raise SingularSystem(f"stationary solve produced invalid weights {mu}")
    scale = max(1.0, np.abs(Q).max())
    if np.abs(mu @ Q).max() > tol.stationary_residual * scale:
        raise SingularSystem("stationary residual above tolerance")
    return mu


def fast_blocks(fast, partition: Partition) -> list[np.ndarray]:
    fast = np.asarray(fast, dtype=float)
    return [fast[np.ix_(c, c)] for c in partition.clusters]


def cluster_stationary(fast, partition: Partition) -> list[np.ndarray]:
    """Stationary distribution of every recurrent block of ``fast``."""
    return [stationary_distribution(b) for b in fast_blocks(fast, partition)]


def _check_mu(mu: Sequence[np.ndarray], partition: Partition) -> list[np.ndarray]:
    mu = [np.asarray(w, dtype=float) for w in mu]
    if len(mu) != partition.l or any(len(w) != s for w, s in zip(mu, partition.sizes)):
        raise DimensionMismatch(
            f"stationary weights {[len(w) for w in mu]} do not match cluster sizes {partition.sizes}"
        )
    return mu


def averaging_matrix(mu: Sequence[np.ndarray], partition: Partition) -> np.ndarray:
    """``diag(mu^1, ..., mu^l)`` laid out as an ``l x m`` matrix."""
    mu = _check_mu(mu, partition)
    D = np.zeros((partition.l, partition.m))
    for k, (c, w) in enumerate(zip(partition.clusters, mu)):
        D[k, list(c)] = w
    return D


def lifting_matrix(partition: Partition, weights: np.ndarray | None = None) -> np.ndarray:
    """``m x l`` matrix sending cluster values to regimes.

    Recurrent rows are cluster indicators (``diag(1_{m_1}, ..., 1_{m_l})``);
    transient rows carry the absorption weights, if given.
    """
    L = np.zeros((partition.m, partition.l))
    for k, c in enumerate(partition.clusters):
        L[list(c), k] = 1.0
    if partition.m_transient:
        if weights is None:
            raise DimensionMismatch("absorption weights required for transient regimes")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (partition.l, partition.m_transient):
            raise DimensionMismatch(
                f"weights shape {weights.shape} != {(partition.l, partition.m_transient)}"
            )
        L[list(partition.transient), :] = weights.T
    return L


def aggregate_generator(mu, slow, partition: Partition) -> np.ndarray:
    """Generator of the aggregated chain, ``diag(mu) @ slow @ diag(1)``."""
    if partition.m_transient:
        raise DimensionMismatch("partition has transient states; use aggregate_generator_transient")
    slow = np.asarray(slow, dtype=float)
    if slow.shape != (partition.m, partition.m):
        raise DimensionMismatch(f"slow generator shape {slow.shape} vs m={partition.m}")
    Qbar = averaging_matrix(mu, partition) @ slow @ lifting_matrix(partition)
    return _clean_generator(Qbar)


def transient_absorption_weights(Q_star, Q_star_blocks: Sequence) -> np.ndarray:
    """Absorption weights ``a_{m_k} = -Q_star^{-1} Q_star^k 1``.

    Returns an ``l x m_*`` array; row ``k`` is ``a_{m_k}``.
    """
    Q_star = np.atleast_2d(np.asarray(Q_star, dtype=float))
    ms = Q_star.shape[0]
    if Q_star.shape != (ms, ms):
        raise DimensionMismatch(f"Q_star must be square, got {Q_star.shape}")
    eig = np.linalg.eigvals(Q_star)
    if np.any(eig.real >= -numerics.TOL.hurwitz):
        raise NotHurwitz(f"transient block eigenvalues {eig} are not all in the left half-plane")
    rhs = []
    for block in Q_star_blocks:
        block = np.atleast_2d(np.asarray(block, dtype=float))
        if block.shape[0] != ms:
            raise DimensionMismatch(f"coupling block has {block.shape[0]} rows, expected {ms}")
        rhs.append(block.sum(axis=1))
    rhs = np.column_stack(rhs)
    try:
        a = -scipy.linalg.solve(Q_star, rhs)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    a = a.T
    tol = numerics.TOL.probability
    if np.any(a < -tol) or np.any(a > 1 + tol):
        raise SingularSystem(f"absorption weights outside [0,1]: {a}")
    return np.clip(a, 0.0, 1.0)


def absorption_weights(fast, partition: Partition) -> np.ndarray:
    """Absorption weights read off the transient rows of a full fast generator."""
    fast = np.asarray(fast, dtype=float)
    tr = list(partition.transient)
    if not tr:
        raise DimensionMismatch("partition has no transient states")
    blocks = [fast[np.ix_(tr, list(c))] for c in partition.clusters]
    return transient_absorption_weights(fast[np.ix_(tr, tr)], blocks)


def aggregate_generator_transient(mu, slow, partition: Partition, weights) -> np.ndarray:
    """Aggregated generator in the presence of transient states.

    ``diag(mu) (Q11 diag(1) + Q12 (a_{m_1}, ..., a_{m_l}))`` where ``Q11`` and
    ``Q12`` are the recurrent rows of ``slow`` restricted to recurrent and
    transient columns.
    """
    if not partition.m_transient:
        raise DimensionMismatch("partition has no transient states; use aggregate_generator")
    slow = np.asarray(slow, dtype=float)
    if slow.shape != (partition.m, partition.m):
        raise DimensionMismatch(f"slow generator shape {slow.shape} vs m={partition.m}")
    Qbar = averaging_matrix(mu, partition) @ slow @ lifting_matrix(partition, weights)
    return _clean_generator(Qbar)


def _clean_generator(Q: np.ndarray) -> np.ndarray:
    # Row sums vanish analytically; remove round-off so downstream checks are exact.
    Q = Q.copy()
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return validate_generator(Q + 0.0)


@dataclass(frozen=True)
class ClusterCoefficients:
    """Cluster-level coefficients: stationary averages over each cluster."""

    r: np.ndarray       # (l,)
    B: np.ndarray       # (l, d1)
    sigma2: np.ndarray  # (l, d1, d1)
    rho: np.ndarray     # (l,) averaged risk premium


def aggregate_coefficients(coeffs, mu, partition: Partition) -> ClusterCoefficients:
    """Average ``r``, ``B``, ``sigma sigma'`` and the risk premium over each
    cluster with its stationary weights."""
    mu = _check_mu(mu, partition)
    if coeffs.m < partition.m:
        raise MissingRegime(f"coefficients cover {coeffs.m} regimes, partition needs {partition.m}")
    a = coeffs.a
    rho = coeffs.rho
    r_bar, B_bar, s_bar, rho_bar = [], [], [], []
    for c, w in zip(partition.clusters, mu):
        idx = list(c)
        r_bar.append(w @ coeffs.r[idx])
        B_bar.append(w @ coeffs.B[idx])
        s_bar.append(np.einsum("j,jab->ab", w, a[idx]))
        rho_bar.append(w @ rho[idx])
    return ClusterCoefficients(
        r=np.array(r_bar), B=np.array(B_bar), sigma2=np.array(s_bar), rho=np.array(rho_bar)
    )
