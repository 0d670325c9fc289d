"""Command-line front end.

Subcommands map one-to-one onto module capabilities:

  run              build a scenario, run its matched solver, verify the
                   equilibrium, export trajectory CSV + reports + manifest
  check-potential  sampled conservativity check of a scenario's game
  verify-ne        solve and certify, reporting only the equilibrium check
  riccati          solve the LQ fixed point and report P/gain diagnostics
  list-scenarios   print known scenario ids and their config schemas

Exit codes: 0 converged and certified, 1 usage/config errors,
2 solver non-convergence, 3 failed certification/check.

Config files are either JSON or INI-style sections with JSON-typed
values::

    [scenario]
    id = "mac"
    [overrides]
    horizon = 80
    gains = [2.019, 1.002, 0.514, 0.308]

A previously written run manifest is also accepted as a config; the
resolved settings it records reproduce the run byte-for-byte.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DpgError, NonConvergenceError, ValidationError
from .game import Trajectory, rollout
from .lq import lq_simulate, lq_verify_ne, riccati_fixed_point
from .potential import check_potential_conditions
from .scenarios import SCENARIOS, SCHEMAS, ScenarioBundle, build_scenario
from .trajopt import SolverOptions, solve_finite_horizon, verify_ne
from .valueiter import build_grid, greedy_policy_rollout, value_iterate

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# serialization helpers


def _plain(obj):
    """Recursively convert dataclasses/arrays to json-serializable data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if callable(obj):
        return f"<callable {getattr(obj, '__name__', 'anonymous')}>"
    return obj


def emit_report(report, fmt: str, path: Path) -> Path:
    """Serialize a report object losslessly to json, csv, or text."""
    data = _plain(report)
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        rows = _report_rows(type(report).__name__, data)
        lines = [",".join(rows[0])]
        for row in rows[1:]:
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "text":
        lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(data.items())]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    return path


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return FLOAT_FMT % v
    return json.dumps(v) if isinstance(v, (dict, list)) else str(v)


def _report_rows(kind: str, data: dict):
    if kind == "NeReport":
        header = ["player", "improvement", "return"]
        rows = [header]
        for i, (imp, ret) in enumerate(zip(data["per_player_improvement"],
                                           data["per_player_return"])):
            rows.append([str(i), FLOAT_FMT % imp, FLOAT_FMT % ret])
        return rows
    scalars = {k: v for k, v in data.items()
               if not isinstance(v, (list, dict)) or k == "per_condition_max"}
    header = sorted(scalars)
    return [header, [_fmt_cell(scalars[k]) for k in header]]


def write_csv(path: Path, header, columns) -> Path:
    """Write full-precision CSV; one column array per header entry."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].shape[0]
    lines = [",".join(header)]
    for k in range(n):
        cells = []
        for c in cols:
            v = c[k]
            cells.append(FLOAT_FMT % v if np.issubdtype(np.asarray(v).dtype,
                                                        np.floating)
                         else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# scenario execution


@dataclasses.dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit."""

    scenario: str
    config: dict
    seed: int
    route: str
    version: str
    timings: dict
    outputs: dict


def _trajectory_csv(bundle: ScenarioBundle, traj: Trajectory, path: Path):
    sid = bundle.scenario_id
    T = traj.horizon
    t = np.arange(T)
    U, X = traj.actions, traj.states[:-1]
    cols = [t]
    header = ["t"]
    if sid == "mac":
        g = bundle.extras["channel_gains_sq"]
        s = U @ g
        rates = np.log1p(g * U / (1.0 + (s[:, None] - g * U)))
        header += [f"u_{i+1}" for i in range(U.shape[1])]
        header += [f"x_{i+1}" for i in range(X.shape[1])]
        header += [f"R_{i+1}" for i in range(rates.shape[1])]
        cols += [U[:, i] for i in range(U.shape[1])]
        cols += [X[:, i] for i in range(X.shape[1])]
        cols += [rates[:, i] for i in range(rates.shape[1])]
    elif sid == "network-flow":
        agg = bundle.extras["agg_matrix"]
        L = U @ agg.T
        header += [f"u_{i+1}" for i in range(U.shape[1])]
        header += [f"x_{i+1}" for i in range(X.shape[1])]
        header += [f"L_{i+1}" for i in range(L.shape[1])]
        cols += [U[:, i] for i in range(U.shape[1])]
        cols += [X[:, i] for i in range(X.shape[1])]
        cols += [L[:, i] for i in range(L.shape[1])]
    elif sid == "smart-grid":
        game = bundle.game
        utils = np.stack([[float(game.utility(i, X[k], U[k], k))
                           for i in range(game.num_players)]
                          for k in range(T)])
        off = game.offsets
        mism = np.stack([np.linalg.norm(U[:, off[i]:off[i + 1]], axis=1)
                         for i in range(game.num_players)], axis=1)
        header += [f"utility_{i+1}" for i in range(utils.shape[1])]
        header += [f"mismatch_norm_{i+1}" for i in range(mism.shape[1])]
        cols += [utils[:, i] for i in range(utils.shape[1])]
        cols += [mism[:, i] for i in range(mism.shape[1])]
    else:  # scheduling scenarios
        rates_fn = bundle.extras["rates"]
        period = bundle.config["time_period"]
        R = np.stack([rates_fn(U[k], float(k % period)) for k in range(T)])
        header += [f"u_{i+1}" for i in range(U.shape[1])]
        header += [f"x_{i+1}" for i in range(X.shape[1])]
        header += [f"R_{i+1}" for i in range(R.shape[1])]
        cols += [U[:, i] for i in range(U.shape[1])]
        cols += [X[:, i] for i in range(X.shape[1])]
        cols += [R[:, i] for i in range(R.shape[1])]
    return write_csv(path, header, cols)


def _run_bundle(bundle: ScenarioBundle, tol: float):
    """Solve via the bundle's route; returns (traj, solver_report, ne_report,
    converged, timings)."""
    timings = {}
    t0 = time.perf_counter()
    if bundle.route == "lq":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sol = riccati_fixed_point(bundle.lq_problem, tol=1e-10,
                                      max_iter=10000)
        sim = lq_simulate(bundle.lq_problem, sol.gain,
                          bundle.config["horizon"])
        traj = sim.trajectory
        timings["solve_s"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        ne = lq_verify_ne(bundle.lq_problem, traj, tol=tol)
        timings["verify_s"] = time.perf_counter() - t0
        return traj, sol, ne, True, timings
    if bundle.route == "traj-opt":
        res = solve_finite_horizon(bundle.problem, SolverOptions())
        traj = res.trajectory
        timings["solve_s"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        game_traj = rollout(bundle.game, traj.actions)
        ne = verify_ne(bundle.game, game_traj, tol=tol,
                       structure=bundle.problem)
        timings["verify_s"] = time.perf_counter() - t0
        return traj, res, ne, res.converged, timings
    # value iteration
    grid = build_grid(bundle.grid_spec)
    try:
        vt, pt = value_iterate(grid, bundle.augmented_mocp, epsilon=1e-4)
        converged = True
    except NonConvergenceError:
        raise
    x0 = np.concatenate([bundle.mocp.initial_state, [0.0]])
    roll = greedy_policy_rollout(pt, grid, bundle.augmented_mocp, x0,
                                 bundle.config["rollout_horizon"])
    timings["solve_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    game_traj = rollout(bundle.game, roll.trajectory.actions)
    ne = verify_ne(bundle.game, game_traj, tol=tol)
    timings["verify_s"] = time.perf_counter() - t0
    return roll.trajectory, vt, ne, converged, timings


# ---------------------------------------------------------------------------
# config loading


def _load_config(path: Path):
    """Read overrides from a json/INI config or a run manifest."""
    text = Path(path).read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        data = json.loads(text)
        if "config" in data and "scenario" in data:   # run manifest
            return data["scenario"], dict(data["config"])
        scenario = data.get("scenario")
        if isinstance(scenario, dict):
            sid = scenario.get("id")
            over = data.get("overrides", {})
        else:
            sid = scenario
            over = data.get("overrides", data if sid is None else {})
        return sid, dict(over)
    parser = configparser.ConfigParser()
    parser.read_string(text)
    sid = None
    over = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if section == "scenario" and key == "id":
                sid = value
            elif section in ("overrides", "scenario"):
                if key != "id":
                    over[key] = value
    return sid, over


def _resolve_inputs(args):
    sid = args.scenario
    overrides = {}
    if args.config:
        file_sid, overrides = _load_config(Path(args.config))
        sid = sid or file_sid
    if sid is None:
        raise ValidationError("no scenario given (use --scenario or --config)")
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.horizon is not None:
        schema = SCHEMAS.get(sid, {})
        overrides["horizon" if "horizon" in schema else "rollout_horizon"] = \
            args.horizon
    return sid, overrides


# ---------------------------------------------------------------------------
# subcommands


def _cmd_list(args) -> int:
    for sid in sorted(SCENARIOS):
        print(sid)
        for key, default in sorted(SCHEMAS[sid].items()):
            print(f"  {key} = {default!r}")
    return 0


def _cmd_run(args) -> int:
    sid, overrides = _resolve_inputs(args)
    bundle = build_scenario(sid, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tol = args.tol if args.tol is not None else 1e-3

    traj, solver_report, ne, converged, timings = _run_bundle(bundle, tol)

    paths = {}
    paths["trajectory"] = str(_trajectory_csv(
        bundle, traj, out / f"{sid}-trajectory.csv"))
    paths["solver_report"] = str(emit_report(
        solver_report, args.format if args.format != "text" else "json",
        out / f"{sid}-solver.{args.format if args.format != 'text' else 'json'}"))
    paths["ne_report"] = str(emit_report(
        ne, args.format, out / f"{sid}-ne.{args.format}"))
    manifest = RunManifest(
        scenario=sid, config=_plain(bundle.config),
        seed=int(bundle.config.get("rng_seed", 0)), route=bundle.route,
        version=__version__, timings={k: round(v, 3) for k, v in timings.items()},
        outputs=paths)
    (out / f"{sid}-manifest.json").write_text(
        json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n")

    print(f"{sid}: route={bundle.route} converged={converged} "
          f"certified={ne.certified} "
          f"max_rel_improvement={ne.max_relative_improvement:.3e}")
    if not converged:
        return 2
    if not ne.certified:
        return 3
    return 0


def _cmd_check_potential(args) -> int:
    sid, overrides = _resolve_inputs(args)
    bundle = build_scenario(sid, overrides)
    tol = args.tol if args.tol is not None else 1e-5
    report = check_potential_conditions(bundle.game, bundle.sample_plan,
                                        fd_step=1e-4, tol=tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, args.format, out / f"{sid}-potential.{args.format}")
    print(f"{sid}: potential-conditions passed={report.passed} "
          f"max_residual={report.max_residual:.3e}")
    return 0 if report.passed else 3


def _cmd_verify_ne(args) -> int:
    sid, overrides = _resolve_inputs(args)
    bundle = build_scenario(sid, overrides)
    tol = args.tol if args.tol is not None else 1e-3
    _, _, ne, converged, _ = _run_bundle(bundle, tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(ne, args.format, out / f"{sid}-ne.{args.format}")
    print(f"{sid}: certified={ne.certified} "
          f"max_rel_improvement={ne.max_relative_improvement:.3e}")
    if not converged:
        return 2
    return 0 if ne.certified else 3


def _cmd_riccati(args) -> int:
    sid, overrides = _resolve_inputs(args)
    bundle = build_scenario(sid, overrides)
    if bundle.route != "lq":
        raise ValidationError(f"scenario {sid!r} has no Riccati route")
    tol = args.tol if args.tol is not None else 1e-10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sol = riccati_fixed_point(bundle.lq_problem, tol=tol, max_iter=10000)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(sol, args.format, out / f"{sid}-riccati.{args.format}")
    print(f"{sid}: riccati iterations={sol.iterations} "
          f"residual={sol.residual:.3e} dare_residual={sol.dare_residual:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpgsolve",
        description="Dynamic potential game solver toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", _cmd_run),
                     ("check-potential", _cmd_check_potential),
                     ("verify-ne", _cmd_verify_ne),
                     ("riccati", _cmd_riccati),
                     ("list-scenarios", _cmd_list)):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        if name == "list-scenarios":
            continue
        p.add_argument("--scenario", help="scenario id")
        p.add_argument("--config", help="json/INI config or run manifest")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--threads", type=int, default=1,
                       help="reserved; current implementation is serial")
        p.add_argument("--format", choices=("json", "csv", "text"),
                       default="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DpgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
