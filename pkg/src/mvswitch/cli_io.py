"""Experiment configuration files, CSV output and the command-line tool.

Configuration is JSON.  Matrices are row-major nested lists and regimes are
numbered from 1 in files, as in the model description; everything inside
the package is 0-based.

Schema::

    {
      "name": "example61",
      "fast_generator": [[...], ...],          # m x m, block diagonal on clusters
      "slow_generator": [[...], ...],          # m x m
      "partition": {"clusters": [[1, 2], [3, 4]], "transient": []},
      "coefficients": {"r": [...], "B": [[...], ...], "sigma": [[[...]]]},
      "initial_regime": 1,
      "epsilons": [0.1, 0.01, 0.001],
      "T": 5, "h": 0.01,
      "x0": 0, "z": 1, "lambda": "calibrate",
      "paths": 100, "seed": 42,
      "output_dir": "out"
    }

``B`` rows have length ``d1``; ``sigma`` is ``m x d1 x d``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import errors, riccati
from .generators import Partition
from .model import RegimeCoefficients, TwoTimeScaleModel

log = logging.getLogger("mvswitch")

REQUIRED = ("fast_generator", "slow_generator", "partition", "coefficients", "epsilons", "T", "h")


def fmt(value) -> str:
    """Fixed numeric format for every CSV cell: 15 significant digits."""
    return format(float(value), ".15g")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    model: TwoTimeScaleModel
    epsilons: tuple[float, ...]
    T: float
    h: float
    x0: float = 0.0
    z: float = 1.0
    lam: float | None = None        # None means calibrate
    paths: int = 100
    seed: int = 42
    output_dir: str = "out"
    extra: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return riccati.grid_steps(self.T, self.h)

    def to_dict(self) -> dict:
        m = self.model
        p = m.partition
        return {
            "name": self.name,
            "fast_generator": m.fast.tolist(),
            "slow_generator": m.slow.tolist(),
            "partition": {
                "clusters": [[i + 1 for i in c] for c in p.clusters],
                "transient": [i + 1 for i in p.transient],
            },
            "coefficients": {
                "r": m.coeffs.r.tolist(),
                "B": m.coeffs.B.tolist(),
                "sigma": m.coeffs.sigma.tolist(),
            },
            "initial_regime": m.regime0 + 1,
            "epsilons": list(self.epsilons),
            "T": self.T,
            "h": self.h,
            "x0": self.x0,
            "z": self.z,
            "lambda": "calibrate" if self.lam is None else self.lam,
            "paths": self.paths,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _number(data, key, kind=float):
    try:
        return kind(data[key])
    except (TypeError, ValueError) as exc:
        raise errors.ParseError(f"field '{key}': expected {kind.__name__}, got {data[key]!r}") from exc


def config_from_dict(data: dict, source: str = "<dict>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise errors.ParseError(f"{source}: top level must be an object")
    for key in REQUIRED:
        if key not in data:
            raise errors.ParseError(f"{source}: missing required field '{key}'")
    part = data["partition"]
    if not isinstance(part, dict) or "clusters" not in part:
        raise errors.ParseError(f"{source}: field 'partition' needs 'clusters'")
    coeffs = data["coefficients"]
    for key in ("r", "B", "sigma"):
        if key not in coeffs:
            raise errors.ParseError(f"{source}: missing field 'coefficients.{key}'")

    T = _number(data, "T")
    h = _number(data, "h")
    try:
        riccati.grid_steps(T, h)
    except errors.NonconformingGrid as exc:
        raise errors.ValidationError(f"{source}: T/h not integral ({exc})") from exc
    eps = data["epsilons"]
    if not isinstance(eps, list) or not eps:
        raise errors.ParseError(f"{source}: field 'epsilons' must be a nonempty list")
    eps = tuple(float(e) for e in eps)
    if any(e <= 0 for e in eps):
        raise errors.ValidationError(f"{source}: epsilons must be positive")
    paths = _number(data, "paths", int) if "paths" in data else 100
    if paths < 1:
        raise errors.ValidationError(f"{source}: path count must be >= 1")
    lam = data.get("lambda", "calibrate")
    if lam != "calibrate":
        lam = _number(data, "lambda")

    try:
        partition = Partition(
            clusters=[[i - 1 for i in c] for c in part["clusters"]],
            transient=[i - 1 for i in part.get("transient", [])],
        )
        sigma = np.asarray(coeffs["sigma"], dtype=float)
        B = np.asarray(coeffs["B"], dtype=float)
        rc = RegimeCoefficients(r=coeffs["r"], B=B, sigma=sigma)
        model = TwoTimeScaleModel(
            fast=np.asarray(data["fast_generator"], dtype=float),
            slow=np.asarray(data["slow_generator"], dtype=float),
            partition=partition,
            coeffs=rc,
            regime0=int(data.get("initial_regime", 1)) - 1,
        )
        # eager checks: stationary weights, absorption weights, limit generator
        model.mu, model.weights, model.limit_generator
    except errors.ModelError as exc:
        raise errors.ValidationError(f"{source}: {type(exc).__name__}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise errors.ParseError(f"{source}: malformed model data ({exc})") from exc

    known = set(REQUIRED) | {"name", "initial_regime", "x0", "z", "lambda", "paths", "seed", "output_dir"}
    return ExperimentConfig(
        name=str(data.get("name", Path(source).stem)),
        model=model,
        epsilons=eps,
        T=T,
        h=h,
        x0=_number(data, "x0") if "x0" in data else 0.0,
        z=_number(data, "z") if "z" in data else 1.0,
        lam=None if lam == "calibrate" else lam,
        paths=paths,
        seed=_number(data, "seed", int) if "seed" in data else 42,
        output_dir=str(data.get("output_dir", "out")),
        extra={k: v for k, v in data.items() if k not in known},
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data, str(path))


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2) + "\n"


def bundled_config(name: str) -> Path:
    """Path of a bundled fixture such as ``example61.cfg``."""
    return Path(str(resources.files("mvswitch") / "data" / name))


# ----------------------------------------------------------------- CSV output

def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_stationary(path, model) -> Path:
    rows = []
    for k, (c, w) in enumerate(zip(model.partition.clusters, model.mu)):
        rows += [[k + 1, s + 1, fmt(v)] for s, v in zip(c, w)]
    return _write_rows(Path(path), ["cluster", "regime", "mu"], rows)


def write_matrix(path, M) -> Path:
    M = np.atleast_2d(M)
    return _write_rows(Path(path), [f"col{j + 1}" for j in range(M.shape[1])],
                       [[fmt(v) for v in row] for row in M])


def write_solution(path, grid: riccati.SolutionGrid, label: str = "regime") -> Path:
    rows = [
        [fmt(t), i + 1, fmt(grid.P[j, i]), fmt(grid.H[j, i])]
        for j, t in enumerate(grid.times)
        for i in range(grid.n)
    ]
    return _write_rows(Path(path), ["t", label, "P", "H"], rows)


def write_paths(path, times, regimes, x, u, path_ids) -> Path:
    d1 = u.shape[-1]
    rows = [
        [int(pid), fmt(t), int(regimes[p, j]) + 1, fmt(x[p, j]), *(fmt(v) for v in u[p, j])]
        for p, pid in enumerate(path_ids)
        for j, t in enumerate(times)
    ]
    return _write_rows(Path(path), ["path_id", "t", "regime", "x", *[f"u_{k + 1}" for k in range(d1)]], rows)


def eps_tag(eps: float) -> str:
    return format(eps, "g")


# ----------------------------------------------------------------- commands

def cmd_validate(config, args, out: Path):
    m = config.model
    p = m.partition
    print(f"config {config.name}: valid")
    print(f"  regimes m={p.m}, clusters l={p.l} sizes={list(p.sizes)}, transient={p.m_transient}")
    print(f"  d1={m.coeffs.d1}, d={m.coeffs.d}, T={config.T}, h={config.h}, steps={config.steps}")
    print(f"  epsilons={list(config.epsilons)}, paths={config.paths}, seed={config.seed}")
    from .control import feasibility_check

    print(f"  feasible={feasibility_check(m)}")
    return []


def cmd_stationary(config, args, out: Path):
    return [write_stationary(out / "stationary.csv", config.model)]


def cmd_aggregate(config, args, out: Path):
    files = [write_matrix(out / "generator_bar.csv", config.model.limit_generator)]
    if config.model.has_transient:
        files.append(write_matrix(out / "absorption_weights.csv", config.model.weights))
    return files


def cmd_riccati(config, args, out: Path):
    m = config.model
    files = []
    for eps in sorted(config.epsilons, reverse=True):
        grid = riccati.solve_full(m, eps, config.T, config.h)
        files.append(write_solution(out / f"riccati_eps{eps_tag(eps)}.csv", grid))
    limit = riccati.solve_limit(m, config.T, config.h)
    files.append(write_solution(out / "riccati_limit.csv", limit, "cluster"))
    if m.has_transient:
        star = riccati.extend_transient(limit, m.weights)
        files.append(write_solution(out / "riccati_limit_transient.csv", star, "transient"))
    return files


def cmd_simulate(config, args, out: Path):
    from .experiment import run_experiment

    _, runs = run_experiment(config, workers=args.workers, keep_runs=True)
    return _trajectory_files(config, runs, out)


def _trajectory_files(config, runs, out: Path):
    from .simulation import simulate_flow_ensemble, brownian_normals

    files = []
    coeffs = config.model.coeffs
    ids = np.arange(config.paths)
    for run in runs:
        normals = brownian_normals(config.seed, ids, run.full.steps, coeffs.d)
        for law, name in ((run.optimal, "optimal"), (run.near, "near_optimal")):
            x, U = simulate_flow_ensemble(run.regimes, law, coeffs, config.x0, config.h, normals,
                                          return_controls=True)
            files.append(write_paths(out / f"paths_eps{eps_tag(run.eps)}_{name}.csv",
                                     run.full.times, run.regimes, x, U, ids))
    return files


def cmd_experiment(config, args, out: Path):
    from .experiment import run_experiment

    report, runs = run_experiment(config, workers=args.workers, keep_runs=True)
    path = out / "report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_csv())
    files = [path]
    if args.trajectories:
        files += _trajectory_files(config, runs, out)
    print(report.to_csv(), end="")
    return files


COMMANDS = {
    "validate": cmd_validate,
    "stationary": cmd_stationary,
    "aggregate": cmd_aggregate,
    "riccati": cmd_riccati,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvswitch",
        description="Mean-variance control of two-time-scale switching diffusions.",
    )
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file (or a bundled name such as example61.cfg)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--eps", help="comma-separated epsilon list, e.g. 0.1,0.01")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="threads for path simulation")
    parser.add_argument("--trajectories", action="store_true", help="experiment: also write per-path CSVs")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config_path(name: str) -> Path:
    path = Path(name)
    if not path.exists() and bundled_config(name).exists():
        return bundled_config(name)
    return path


def dispatch(subcommand: str, config: ExperimentConfig, args=None) -> list[Path]:
    if subcommand not in COMMANDS:
        raise errors.ModelError(f"unknown subcommand {subcommand!r}")
    if args is None:
        args = argparse.Namespace(workers=1, trajectories=False)
    return COMMANDS[subcommand](config, args, Path(config.output_dir))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(resolve_config_path(args.config))
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.paths is not None:
            if args.paths < 1:
                raise errors.ValidationError("--paths must be >= 1")
            changes["paths"] = args.paths
        if args.eps:
            try:
                changes["epsilons"] = tuple(float(e) for e in args.eps.split(","))
            except ValueError as exc:
                raise errors.ParseError(f"--eps: {exc}") from exc
            if any(e <= 0 for e in changes["epsilons"]):
                raise errors.ValidationError("--eps values must be positive")
        if args.out:
            changes["output_dir"] = args.out
        config = replace(config, **changes)
        files = dispatch(args.subcommand, config, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (errors.ParseError, errors.ValidationError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except errors.ModelError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for f in files:
        log.info("wrote %s", f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
