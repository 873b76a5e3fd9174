"""Model containers: per-regime coefficients and the two-time-scale model."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import generators as gen
from .errors import DegenerateVolatility, DimensionMismatch, ValidationError


@dataclass(frozen=True, eq=False)
class RegimeCoefficients:
    """Constant-in-time coefficients of the controlled flow, one set per regime.

    Attributes
    ----------
    r : (m,) ndarray
        Drift rate of the flow.
    B : (m, d1) ndarray
        Excess drift row of each regime.
    sigma : (m, d1, d) ndarray
        Volatility matrix of each regime.
    """

    r: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    delta: float = 1e-12

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        m = r.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(m, -1)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = sigma.reshape(m, 1, 1)
        elif sigma.ndim == 2:
            sigma = sigma.reshape(m, B.shape[1], -1)
        if sigma.shape[:2] != (m, B.shape[1]):
            raise DimensionMismatch(
                f"sigma shape {sigma.shape} inconsistent with m={m}, d1={B.shape[1]}"
            )
        for name, arr in (("r", r), ("B", B), ("sigma", sigma)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"coefficient {name} has non-finite entries")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma", sigma)
        lam_min = np.linalg.eigvalsh(self.a).min(axis=1)
        bad = np.flatnonzero(lam_min < self.delta)
        if bad.size:
            raise DegenerateVolatility(
                f"sigma sigma' not >= delta I in regimes {[int(i) + 1 for i in bad]}"
            )

    @property
    def m(self) -> int:
        return self.r.shape[0]

    @property
    def d1(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.sigma.shape[2]

    @cached_property
    def a(self) -> np.ndarray:
        """``sigma sigma'`` per regime, shape (m, d1, d1)."""
        return np.einsum("mij,mkj->mik", self.sigma, self.sigma)

    @cached_property
    def gain(self) -> np.ndarray:
        """``(sigma sigma')^{-1} B'`` per regime, shape (m, d1)."""
        return np.stack([np.linalg.solve(a, b) for a, b in zip(self.a, self.B)])

    @cached_property
    def rho(self) -> np.ndarray:
        """Risk premium ``B (sigma sigma')^{-1} B'`` per regime."""
        return np.einsum("mi,mi->m", self.B, self.gain)

    def __eq__(self, other):
        if not isinstance(other, RegimeCoefficients):
            return NotImplemented
        return (
            np.array_equal(self.r, other.r)
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.sigma, other.sigma)
        )

    __hash__ = None


def risk_premium(coeffs: RegimeCoefficients) -> np.ndarray:
    return coeffs.rho


@dataclass(frozen=True, eq=False)
class TwoTimeScaleModel:
    """Switching diffusion whose chain has generator ``fast / eps + slow``.

    ``fast`` is the full ``m x m`` fast generator: block diagonal on the
    recurrent clusters, with arbitrary (generator-valid) transient rows.
    """

    fast: np.ndarray
    slow: np.ndarray
    partition: gen.Partition
    coeffs: RegimeCoefficients
    regime0: int = 0

    def __post_init__(self):
        fast = gen.validate_generator(self.fast)
        slow = gen.validate_generator(self.slow)
        p = self.partition
        if fast.shape != slow.shape or fast.shape[0] != p.m:
            raise DimensionMismatch(
                f"fast {fast.shape}, slow {slow.shape} and partition m={p.m} disagree"
            )
        if self.coeffs.m != p.m:
            raise DimensionMismatch(f"coefficients cover {self.coeffs.m} regimes, model has {p.m}")
        if not 0 <= self.regime0 < p.m:
            raise ValidationError(f"initial regime {self.regime0 + 1} out of range")
        label = p.cluster_of()
        for i in p.recurrent:
            outside = [j for j in range(p.m) if label[j] != label[i] and fast[i, j] != 0]
            if outside:
                raise ValidationError(
                    f"fast generator row {i + 1} leaves its cluster (columns {[j + 1 for j in outside]})"
                )
        object.__setattr__(self, "fast", fast)
        object.__setattr__(self, "slow", slow)

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def has_transient(self) -> bool:
        return self.partition.m_transient > 0

    def generator(self, eps: float) -> np.ndarray:
        return gen.assemble_fast_slow(self.fast, self.slow, eps)

    @cached_property
    def mu(self) -> list[np.ndarray]:
        return gen.cluster_stationary(self.fast, self.partition)

    @cached_property
    def weights(self) -> np.ndarray | None:
        """Absorption weights (l x m_*), or ``None`` without transient states."""
        if not self.has_transient:
            return None
        return gen.absorption_weights(self.fast, self.partition)

    @cached_property
    def limit_generator(self) -> np.ndarray:
        if self.has_transient:
            return gen.aggregate_generator_transient(self.mu, self.slow, self.partition, self.weights)
        return gen.aggregate_generator(self.mu, self.slow, self.partition)

    @cached_property
    def cluster_coeffs(self) -> gen.ClusterCoefficients:
        return gen.aggregate_coefficients(self.coeffs, self.mu, self.partition)

    @cached_property
    def lifting(self) -> np.ndarray:
        return gen.lifting_matrix(self.partition, self.weights)

    def __eq__(self, other):
        if not isinstance(other, TwoTimeScaleModel):
            return NotImplemented
        return (
            np.array_equal(self.fast, other.fast)
            and np.array_equal(self.slow, other.slow)
            and self.partition == other.partition
            and self.coeffs == other.coeffs
            and self.regime0 == other.regime0
        )

    __hash__ = None
