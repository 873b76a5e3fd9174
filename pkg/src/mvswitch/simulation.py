"""Monte Carlo simulation of the switching chain and the controlled flows.

The chain is simulated exactly (exponential holding times, embedded jump
choices); flows use Euler-Maruyama on the uniform grid with the regime read
at the left node of each step.

Every path owns independent substreams derived from ``(seed, path index)``,
so a path is reproduced bit-for-bit whether it is simulated alone, inside a
batch, or in a concurrent worker.  Single-path functions return
:class:`ChainPath` / :class:`FlowPath`; the ``*_ensemble`` functions work on
many paths at once and keep only grid-node values.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonfiniteState, UnknownRegime
from .generators import Partition, validate_generator

JUMPS, CHOICES, BROWNIAN, XI = range(4)
CHUNK = 1024
OVERFLOW = 1e150


@dataclass(frozen=True)
class RandomStream:
    """Per-path random substreams keyed by ``(seed, path)``."""

    seed: int
    path: int = 0

    def generator(self, substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.path, substream))
        return np.random.Generator(np.random.PCG64(ss))

    def normals(self, steps: int, d: int) -> np.ndarray:
        """Standard normal increments, shape ``(steps, d)``."""
        return self.generator(BROWNIAN).standard_normal((steps, d))


@dataclass(frozen=True, eq=False)
class ChainPath:
    """Right-continuous piecewise-constant path on ``[0, T]``.

    ``states[0]`` holds on ``[0, jumps[0])``, ``states[k]`` on
    ``[jumps[k-1], jumps[k])``; ``jumps`` has one fewer entry than ``states``.
    """

    T: float
    jumps: np.ndarray
    states: np.ndarray

    @property
    def initial(self) -> int:
        return int(self.states[0])

    def at(self, t) -> np.ndarray:
        return self.states[np.searchsorted(self.jumps, t, side="right")]

    def sample(self, times) -> np.ndarray:
        return self.at(np.asarray(times, dtype=float))

    def occupation(self, m: int) -> np.ndarray:
        """Time spent in each state over ``[0, T]``."""
        edges = np.concatenate([[0.0], self.jumps, [self.T]])
        out = np.zeros(m)
        np.add.at(out, self.states, np.diff(edges))
        return out


@dataclass(frozen=True, eq=False)
class FlowPath:
    times: np.ndarray
    x: np.ndarray          # (T_h + 1,)
    u: np.ndarray          # (T_h + 1, d1); limit flows: (T_h + 1, m, d1)
    regimes: np.ndarray    # regime (or cluster) at each node
    chain: ChainPath | None = None


class _Draws:
    """Chunked per-path draws so batched and single-path simulation consume
    each path's stream identically."""

    def __init__(self, streams: Sequence[RandomStream], substream: int, kind: str, chunk: int = CHUNK):
        self.gens = [s.generator(substream) for s in streams]
        self.kind = kind
        self.chunk = chunk
        self.buf = np.empty((len(self.gens), chunk))
        self.ptr = np.full(len(self.gens), chunk, dtype=np.intp)

    def _fill(self, p: int):
        g = self.gens[p]
        if self.kind == "exp":
            self.buf[p] = g.standard_exponential(self.chunk)
        else:
            self.buf[p] = g.random(self.chunk)
        self.ptr[p] = 0

    def take(self, idx: np.ndarray) -> np.ndarray:
        for p in idx[self.ptr[idx] >= self.chunk]:
            self._fill(int(p))
        vals = self.buf[idx, self.ptr[idx]]
        self.ptr[idx] += 1
        return vals


def _jump_tables(Q: np.ndarray):
    Q = validate_generator(Q)
    rate = -np.diag(Q).copy()
    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(off, axis=1) / rate[:, None]
    for i in range(rate.size):
        pos = np.flatnonzero(off[i] > 0)
        cum[i, pos[-1] if pos.size else 0 :] = 1.0
    return rate, cum


def _next_state(cum: np.ndarray, state, u):
    """Embedded jump for uniforms ``u`` in ``[0, 1)``: the smallest ``j``
    with ``cum[state, j] >= 1 - u``."""
    v = 1.0 - np.asarray(u)
    return (cum[state] < v[..., None]).sum(axis=-1)


class _Labeler:
    """Maps each sojourn to a cluster label; transient sojourns draw a fresh
    uniform and pick cluster ``k`` with probability ``a_{m_k, j}``."""

    def __init__(self, partition: Partition, weights=None):
        self.cluster = partition.cluster_of()
        self.tpos = partition.transient_position()
        if partition.m_transient:
            if weights is None:
                raise DimensionMismatch("absorption weights required for transient labels")
            w = np.asarray(weights, dtype=float)
            self.thresholds = np.cumsum(w, axis=0).T  # (m_*, l)
            self.thresholds[:, -1] = np.inf
        else:
            self.thresholds = None

    @property
    def needs_draws(self) -> bool:
        return self.thresholds is not None

    def label(self, states: np.ndarray, xi: Callable[[np.ndarray], np.ndarray] | None, idx: np.ndarray):
        lab = self.cluster[states]
        trans = lab < 0
        if np.any(trans):
            u = xi(idx[trans])
            th = self.thresholds[self.tpos[states[trans]]]
            # xi_j = k  iff  sum_{i<k} a_i < u <= sum_{i<=k} a_i
            lab = lab.copy()
            lab[trans] = (th < u[:, None]).sum(axis=1)
        return lab


def simulate_ctmc(Q, regime0: int, T: float, stream: RandomStream) -> ChainPath:
    """Exact path of the chain with generator ``Q`` on ``[0, T]``."""
    rate, cum = _jump_tables(Q)
    m = rate.size
    if not 0 <= regime0 < m:
        raise UnknownRegime(f"initial regime {regime0} outside 0..{m - 1}")
    exp = _Draws([stream], JUMPS, "exp")
    uni = _Draws([stream], CHOICES, "uni")
    one = np.zeros(1, dtype=np.intp)
    t, state = 0.0, int(regime0)
    jumps, states = [], [state]
    while True:
        e = exp.take(one)[0]
        if rate[state] == 0:
            break
        t = t + e / rate[state]
        if t > T:
            break
        state = int(_next_state(cum, state, uni.take(one)[0]))
        jumps.append(t)
        states.append(state)
    return ChainPath(T=T, jumps=np.array(jumps), states=np.array(states, dtype=np.intp))


def aggregate_path(path: ChainPath, partition: Partition, stream: RandomStream, weights=None) -> ChainPath:
    """Cluster-valued path: recurrent regimes map to their cluster, each
    transient sojourn gets a label drawn from the absorption weights."""
    if np.any(path.states >= partition.m) or np.any(path.states < 0):
        raise UnknownRegime("path visits a regime outside the partition")
    labeler = _Labeler(partition, weights)
    xi = _Draws([stream], XI, "uni") if labeler.needs_draws else None
    one = np.zeros(1, dtype=np.intp)
    labels = np.array(
        [labeler.label(np.array([s]), xi.take if xi else None, one)[0] for s in path.states],
        dtype=np.intp,
    )
    keep = np.concatenate([[True], labels[1:] != labels[:-1]])
    return ChainPath(T=path.T, jumps=path.jumps[keep[1:]], states=labels[keep])


@dataclass(frozen=True, eq=False)
class RegimeGrid:
    """Chain values at grid nodes for a batch of paths."""

    times: np.ndarray
    states: np.ndarray                  # (n_paths, T_h + 1)
    labels: np.ndarray | None = None    # aggregated cluster labels, same shape
    path_ids: np.ndarray | None = None


def _sample_batch(Q, regime0, times, streams, labeler: _Labeler | None, chunk: int):
    rate, cum = _jump_tables(Q)
    n = len(streams)
    N = times.size
    states = np.empty((n, N), dtype=np.intp)
    labels = np.empty((n, N), dtype=np.intp) if labeler is not None else None
    exp = _Draws(streams, JUMPS, "exp", chunk)
    uni = _Draws(streams, CHOICES, "uni", chunk)
    xi = _Draws(streams, XI, "uni", chunk) if labeler is not None and labeler.needs_draws else None
    xi_take = xi.take if xi is not None else None

    t = np.zeros(n)
    cur = np.full(n, regime0, dtype=np.intp)
    all_idx = np.arange(n)
    lab = labeler.label(cur, xi_take, all_idx) if labeler is not None else None
    node = np.zeros(n, dtype=np.intp)
    active = all_idx
    while active.size:
        e = exp.take(active)
        r = rate[cur[active]]
        with np.errstate(divide="ignore"):
            tau = np.where(r > 0, t[active] + e / np.where(r > 0, r, 1.0), np.inf)
        end = np.searchsorted(times, tau, side="left")
        count = end - node[active]
        total = int(count.sum())
        if total:
            rows = np.repeat(active, count)
            offs = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
            cols = np.repeat(node[active], count) + offs
            states[rows, cols] = np.repeat(cur[active], count)
            if labels is not None:
                labels[rows, cols] = np.repeat(lab[active], count)
        node[active] = end
        going = end < N
        active = active[going]
        if not active.size:
            break
        t[active] = tau[going]
        new = _next_state(cum, cur[active], uni.take(active))
        cur[active] = new
        if labeler is not None:
            lab[active] = labeler.label(new, xi_take, active)
    return states, labels


def sample_regime_grid(
    Q,
    regime0: int,
    T: float,
    h: float,
    seed: int,
    path_ids: Sequence[int] | np.ndarray,
    partition: Partition | None = None,
    weights=None,
    batch: int = 2000,
    workers: int = 1,
    chunk: int = CHUNK,
) -> RegimeGrid:
    """Exact chain paths evaluated at the grid nodes ``j h``.

    Equivalent, path by path, to ``simulate_ctmc(...).sample(times)``
    followed by :func:`aggregate_path` when ``partition`` is given.
    Paths are processed in independent batches; ``workers > 1`` runs batches
    on a thread pool without changing any output.
    """
    from .riccati import grid_steps

    steps = grid_steps(T, h)
    times = np.arange(steps + 1) * h
    path_ids = np.asarray(path_ids, dtype=np.int64)
    labeler = _Labeler(partition, weights) if partition is not None else None
    pieces = [path_ids[i : i + batch] for i in range(0, path_ids.size, batch)]

    def run(ids):
        return _sample_batch(Q, regime0, times, [RandomStream(seed, int(p)) for p in ids], labeler, chunk)

    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pieces))
    else:
        results = [run(ids) for ids in pieces]
    states = np.concatenate([r[0] for r in results]) if results else np.empty((0, steps + 1), np.intp)
    labels = None
    if labeler is not None:
        labels = np.concatenate([r[1] for r in results]) if results else np.empty_like(states)
    return RegimeGrid(times=times, states=states, labels=labels, path_ids=path_ids)


def brownian_normals(seed: int, path_ids, steps: int, d: int) -> np.ndarray:
    """Standard normals per path, shape ``(n_paths, steps, d)``."""
    ids = np.asarray(path_ids, dtype=np.int64)
    out = np.empty((ids.size, steps, d))
    for i, p in enumerate(ids):
        out[i] = RandomStream(seed, int(p)).normals(steps, d)
    return out


def simulate_flow_ensemble(
    regimes: np.ndarray, law, coeffs, x0: float, h: float, normals: np.ndarray, return_controls: bool = False
):
    """Euler-Maruyama for ``dx = (r x + B u) dt + u' sigma dw`` on a batch.

    ``regimes`` is ``(n, T_h + 1)`` (regime at each node), ``normals`` is
    ``(n, T_h, d)``.  Returns the states ``(n, T_h + 1)`` and, if asked,
    controls ``(n, T_h + 1, d1)``.
    """
    n, N = regimes.shape
    steps = N - 1
    if normals.shape[:2] != (n, steps) or normals.shape[2] != coeffs.d:
        raise DimensionMismatch(f"normals shape {normals.shape} vs ({n}, {steps}, {coeffs.d})")
    sq = math.sqrt(h)
    x = np.empty((n, N))
    x[:, 0] = x0
    U = np.empty((n, N, coeffs.d1)) if return_controls else None
    for j in range(steps):
        i = regimes[:, j]
        xj = x[:, j]
        u = law.at_node(j, i, xj)
        drift = coeffs.r[i] * xj + np.einsum("nk,nk->n", coeffs.B[i], u)
        vol = np.einsum("nk,nkd->nd", u, coeffs.sigma[i])
        x[:, j + 1] = xj + drift * h + sq * np.einsum("nd,nd->n", vol, normals[:, j])
        if U is not None:
            U[:, j] = u
    if U is not None:
        U[:, -1] = law.at_node(steps, regimes[:, -1], x[:, -1])
    if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > OVERFLOW:
        raise NonfiniteState("flow state overflowed")
    return (x, U) if return_controls else x


@dataclass(frozen=True, eq=False)
class LimitControl:
    """Controls ``u^{kj}(t, x) = -gain(s_kj) [x + (lam - z) Hbar(t, k)]`` for
    every member ``s_kj`` of every cluster ``k``."""

    gain: np.ndarray   # (m, d1) per regime gains
    Hbar: np.ndarray   # (T_h + 1, l)
    lam: float
    z: float

    @classmethod
    def from_limit(cls, model, limit, lam: float, z: float) -> "LimitControl":
        return cls(model.coeffs.gain, limit.H, float(lam), float(z))

    def bracket(self, n: int, k, x):
        return np.asarray(x, dtype=float) + (self.lam - self.z) * self.Hbar[n, k]


def limit_drift_diffusion(model, control: LimitControl, n: int, k: np.ndarray, x: np.ndarray):
    """Drift ``Phi`` and diffusion row ``Psi`` of the limit flow.

    ``Phi = sum_j mu_j r(s_kj) x + sum_j mu_j B(s_kj) u^{kj}`` and
    ``Psi_i = sqrt(sum_j mu_j (sum_n u^{kj}_n sigma_ni(s_kj))^2)``.
    Returns ``(Phi (n,), Psi (n, d), sum_j mu_j u^{kj}' a(s_kj) u^{kj} (n,))``.
    """
    part = model.partition
    coeffs = model.coeffs
    y = control.bracket(n, k, x)
    phi = np.zeros_like(y)
    psi2 = np.zeros((y.size, coeffs.d))
    quad = np.zeros_like(y)
    for c, (members, w) in enumerate(zip(part.clusters, model.mu)):
        sel = k == c
        if not np.any(sel):
            continue
        xs, ys = x[sel], y[sel]
        for s, wj in zip(members, w):
            u = -control.gain[s][None, :] * ys[:, None]
            phi[sel] += wj * (coeffs.r[s] * xs + u @ coeffs.B[s])
            v = u @ coeffs.sigma[s]
            psi2[sel] += wj * v**2
            quad[sel] += wj * np.einsum("ni,ij,nj->n", u, coeffs.a[s], u)
    return phi, np.sqrt(psi2), quad


def simulate_limit_ensemble(labels: np.ndarray, model, control: LimitControl, x0: float, h: float, normals: np.ndarray):
    """Euler-Maruyama for the limit flow ``dx = Phi dt + sum_i Psi_i dw_i``
    driven by the cluster chain ``labels`` ``(n, T_h + 1)``."""
    n, N = labels.shape
    steps = N - 1
    if normals.shape[:2] != (n, steps):
        raise DimensionMismatch(f"normals shape {normals.shape} vs ({n}, {steps}, d)")
    sq = math.sqrt(h)
    x = np.empty((n, N))
    x[:, 0] = x0
    for j in range(steps):
        phi, psi, _ = limit_drift_diffusion(model, control, j, labels[:, j], x[:, j])
        x[:, j + 1] = x[:, j] + phi * h + sq * np.einsum("nd,nd->n", psi, normals[:, j])
    if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > OVERFLOW:
        raise NonfiniteState("limit flow state overflowed")
    return x


def simulate_flow(chain: ChainPath, law, coeffs, x0: float, h: float, stream: RandomStream) -> FlowPath:
    """Single controlled flow path driven by ``chain``."""
    from .riccati import grid_steps

    steps = grid_steps(chain.T, h)
    times = np.arange(steps + 1) * h
    regimes = chain.sample(times)[None, :]
    normals = stream.normals(steps, coeffs.d)[None]
    x, U = simulate_flow_ensemble(regimes, law, coeffs, x0, h, normals, return_controls=True)
    return FlowPath(times=times, x=x[0], u=U[0], regimes=regimes[0], chain=chain)


def simulate_limit_flow(cluster_chain: ChainPath, model, control: LimitControl, x0: float, h: float,
                        stream: RandomStream) -> FlowPath:
    """Single limit flow path driven by a cluster-valued chain."""
    from .riccati import grid_steps

    steps = grid_steps(cluster_chain.T, h)
    times = np.arange(steps + 1) * h
    labels = cluster_chain.sample(times)[None, :]
    normals = stream.normals(steps, model.coeffs.d)[None]
    x = simulate_limit_ensemble(labels, model, control, x0, h, normals)
    # u[n, s] = u^{kj} for the members s = s_kj of the active cluster k, zero elsewhere
    y = control.bracket(np.arange(steps + 1), labels[0], x[0])
    cluster = model.partition.cluster_of()
    active = cluster[None, :] == labels[0][:, None]
    u = -model.coeffs.gain[None, :, :] * (y[:, None, None] * active[:, :, None])
    return FlowPath(times=times, x=x[0], u=u, regimes=labels[0], chain=cluster_chain)


def coupled_compare(Q, law_a, law_b, coeffs, x0: float, regime0: int, T: float, h: float,
                    stream: RandomStream) -> tuple[FlowPath, FlowPath]:
    """Two flow paths sharing one chain path and one set of Brownian
    increments; only the control law differs."""
    chain = simulate_ctmc(Q, regime0, T, stream)
    return (
        simulate_flow(chain, law_a, coeffs, x0, h, stream),
        simulate_flow(chain, law_b, coeffs, x0, h, stream),
    )
