"""Cost/value estimators, error metrics and the epsilon-sweep experiment."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import control, riccati
from .errors import GridMismatch, InsufficientSamples, WindowOutOfRange
from .simulation import (
    LimitControl,
    brownian_normals,
    limit_drift_diffusion,
    sample_regime_grid,
    simulate_flow_ensemble,
)

log = logging.getLogger(__name__)


def _mean_se(samples) -> tuple[float, float]:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {s.size}")
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(s.size))


def trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    """Trapezoidal rule along the last axis of grid values."""
    return h * (values[..., 1:] + values[..., :-1]).sum(axis=-1) / 2


def estimate_cost(terminal, lam: float, z: float) -> tuple[float, float]:
    """Sample mean of ``(x(T) + lam - z)^2`` and its standard error."""
    return _mean_se((np.asarray(terminal, dtype=float) + lam - z) ** 2)


def chain_integrand(grid: riccati.SolutionGrid, Q, lam: float, z: float) -> np.ndarray:
    """``(lam - z)^2 sum_j q_ij P(t,j) [H(t,j) - H(t,i)]^2`` tabulated as
    ``(T_h + 1, m)`` over time and the current regime ``i``."""
    Q = np.asarray(Q, dtype=float)
    P, H = grid.P, grid.H
    diff2 = (H[:, None, :] - H[:, :, None]) ** 2          # [t, i, j]
    return (lam - z) ** 2 * np.einsum("ij,tj,tij->ti", Q, P, diff2)


def value_samples(grid, Q, regimes: np.ndarray, x0: float, regime0: int, lam: float, z: float) -> np.ndarray:
    """Per-path value estimates: analytic head term plus the chain integral
    along each sampled chain path (trapezoidal in time)."""
    if regimes.shape[1] != grid.steps + 1:
        raise GridMismatch(f"chain grid has {regimes.shape[1]} nodes, tables {grid.steps + 1}")
    g = chain_integrand(grid, Q, lam, z)
    along = g[np.arange(grid.steps + 1)[None, :], regimes]
    return riccati.value_head(grid, x0, regime0, lam, z) + trapezoid(along, grid.h)


def estimate_value(grid, Q, regimes, x0: float, regime0: int, lam: float, z: float) -> tuple[float, float]:
    """Value ``v^eps`` estimated from the Riccati tables and chain paths."""
    if regimes.shape[0] < 2:
        raise InsufficientSamples("need at least 2 chain paths")
    return _mean_se(value_samples(grid, Q, regimes, x0, regime0, lam, z))


def error_P(full: riccati.SolutionGrid, limit: riccati.SolutionGrid, lifting: np.ndarray) -> float:
    """``(1/T_h) sum_{j=1}^{T_h} sum_s |P^eps(jh, s) - Pbar(jh, cluster(s))|``.

    ``lifting`` maps clusters to regimes (transient rows carry absorption
    weights, giving ``Pbar_*``).
    """
    if not full.same_grid(limit):
        raise GridMismatch("full-scale and limit tables use different grids")
    lifted = limit.P @ np.asarray(lifting).T
    return float(np.abs(full.P[1:] - lifted[1:]).sum(axis=1).mean())


def error_x(xa: np.ndarray, xb: np.ndarray) -> tuple[float, float]:
    """Per-path ``(1/T_h) sum_{j=1}^{T_h} |x_a(jh) - x_b(jh)|`` averaged over
    paths, with its standard error."""
    xa, xb = np.atleast_2d(xa), np.atleast_2d(xb)
    if xa.shape != xb.shape:
        raise GridMismatch(f"path arrays differ: {xa.shape} vs {xb.shape}")
    per_path = np.abs(xa[:, 1:] - xb[:, 1:]).mean(axis=1)
    if per_path.size == 1:
        return float(per_path[0]), 0.0
    return _mean_se(per_path)


@dataclass(frozen=True)
class QuadraticTestFunction:
    """``f(x, k) = a_k x^2 + b_k x + c_k`` per cluster."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def uniform(cls, l: int, a=0.0, b=0.0, c=0.0) -> "QuadraticTestFunction":
        return cls(np.full(l, float(a)), np.full(l, float(b)), np.full(l, float(c)))

    def __call__(self, x, k):
        return self.a[k] * x**2 + self.b[k] * x + self.c[k]

    def dx(self, x, k):
        return 2 * self.a[k] * x + self.b[k]


def limit_generator_action(f: QuadraticTestFunction, model, ctl: LimitControl, n: int, k, x) -> np.ndarray:
    """Limit operator applied to ``f`` at node ``n``:
    ``Phi f_x + (1/2) sum_j mu_j u^{kj}' a(s_kj) u^{kj} f_xx + sum_l qbar_kl (f(x,l) - f(x,k))``."""
    phi, _, quad = limit_drift_diffusion(model, ctl, n, k, x)
    Qbar = model.limit_generator
    fx_all = np.stack([f(x, np.full_like(k, c)) for c in range(Qbar.shape[0])], axis=-1)
    jump = np.einsum("nl,nl->n", Qbar[k], fx_all - f(x, k)[:, None])
    return phi * f.dx(x, k) + quad * f.a[k] + jump


def dynkin_residual(f: QuadraticTestFunction, x: np.ndarray, labels: np.ndarray, model, ctl: LimitControl,
                    h: float, window: tuple[float, float]) -> tuple[float, float]:
    """Monte Carlo mean (and SE) of
    ``f(x(t+s), k(t+s)) - f(x(t), k(t)) - int_t^{t+s} Lbar f``."""
    N = x.shape[1]
    j0, j1 = (int(round(w / h)) for w in window)
    if not (0 <= j0 < j1 <= N - 1) or any(abs(j * h - w) > 1e-9 for j, w in zip((j0, j1), window)):
        raise WindowOutOfRange(f"window {window} not on the grid [0, {(N - 1) * h}]")
    gen_vals = np.stack(
        [limit_generator_action(f, model, ctl, j, labels[:, j], x[:, j]) for j in range(j0, j1 + 1)], axis=1
    )
    res = f(x[:, j1], labels[:, j1]) - f(x[:, j0], labels[:, j0]) - trapezoid(gen_vals, h)
    if np.all(res == 0):
        return 0.0, 0.0
    return _mean_se(res)


@dataclass(frozen=True)
class ErrorMetrics:
    eps: float
    p_error: float
    x_error: float
    x_error_se: float
    j_error: float
    j_error_se: float
    paths: int
    seed: int
    lam: float = float("nan")
    cost: float = float("nan")
    value: float = float("nan")


@dataclass
class ExperimentReport:
    description: str
    rows: list[ErrorMetrics]
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def eps(self) -> list[float]:
        return [r.eps for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        from .cli_io import fmt

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "p_error", "x_error", "x_error_se", "j_error", "j_error_se", "paths", "seed"])
        for r in self.rows:
            w.writerow([fmt(r.eps), fmt(r.p_error), fmt(r.x_error), fmt(r.x_error_se),
                        fmt(r.j_error), fmt(r.j_error_se), r.paths, r.seed])
        return buf.getvalue()


@dataclass
class EpsilonRun:
    """Everything computed for one epsilon; kept for trajectory output and tests."""

    eps: float
    full: riccati.SolutionGrid
    optimal: control.FeedbackLaw
    near: control.FeedbackLaw
    regimes: np.ndarray
    x_opt: np.ndarray
    x_near: np.ndarray
    metrics: ErrorMetrics


def calibrate_on_paths(law, coeffs, regimes, x0, h, normals, z) -> control.Calibration:
    def terminal(probe):
        return simulate_flow_ensemble(regimes, probe, coeffs, x0, h, normals)[:, -1]

    return control.calibrate_lambda(law, terminal, z)


def run_epsilon(model, eps: float, limit: riccati.SolutionGrid, *, T, h, x0, z, lam, paths, seed,
                workers: int = 1, path_offset: int = 0) -> EpsilonRun:
    Q = model.generator(eps)
    full = riccati.solve(Q, model.coeffs, T, h)
    ids = np.arange(path_offset, path_offset + paths)
    chain = sample_regime_grid(Q, model.regime0, T, h, seed, ids, workers=workers)
    normals = brownian_normals(seed, ids, full.steps, model.coeffs.d)
    opt = control.optimal_law(full, model.coeffs, 0.0 if lam is None else lam, z)
    if lam is None:
        lam_value = calibrate_on_paths(opt, model.coeffs, chain.states, x0, h, normals, z).lam
        opt = opt.with_lambda(lam_value)
    near = control.near_optimal_law(model, limit, opt.lam, z)
    x_opt = simulate_flow_ensemble(chain.states, opt, model.coeffs, x0, h, normals)
    x_near = simulate_flow_ensemble(chain.states, near, model.coeffs, x0, h, normals)
    xe, xse = error_x(x_opt, x_near)
    v = value_samples(full, Q, chain.states, x0, model.regime0, opt.lam, z)
    cost = (x_near[:, -1] + opt.lam - z) ** 2
    if paths >= 2:
        d_mean, d_se = _mean_se(cost - v)
    else:
        d_mean, d_se = float(cost[0] - v[0]), 0.0
    metrics = ErrorMetrics(
        eps=float(eps),
        p_error=error_P(full, limit, model.lifting),
        x_error=xe,
        x_error_se=xse,
        j_error=abs(d_mean),
        j_error_se=d_se,
        paths=int(paths),
        seed=int(seed),
        lam=float(opt.lam),
        cost=float(cost.mean()),
        value=float(v.mean()),
    )
    return EpsilonRun(eps, full, opt, near, chain.states, x_opt, x_near, metrics)


def run_experiment(config, workers: int = 1, keep_runs: bool = False):
    """Epsilon sweep: Riccati solves, both feedback laws, coupled Monte Carlo
    and the error metrics, one row per epsilon in descending order.

    Returns the :class:`ExperimentReport`, plus the per-epsilon runs when
    ``keep_runs`` is set.
    """
    start = time.perf_counter()
    model = config.model
    if not control.feasibility_check(model):
        log.warning("mean-variance problem is infeasible from the initial regime")
    limit = riccati.solve_limit(model, config.T, config.h)
    runs = []
    for eps in sorted(config.epsilons, reverse=True):
        run = run_epsilon(model, eps, limit, T=config.T, h=config.h, x0=config.x0, z=config.z,
                          lam=config.lam, paths=config.paths, seed=config.seed, workers=workers)
        log.info("eps=%g p_error=%.4g x_error=%.4g j_error=%.4g", eps, run.metrics.p_error,
                 run.metrics.x_error, run.metrics.j_error)
        runs.append(run)
    report = ExperimentReport(
        description=config.name,
        rows=[r.metrics for r in runs],
        wall_clock=time.perf_counter() - start,
        config=config.to_dict(),
    )
    return (report, runs) if keep_runs else report
