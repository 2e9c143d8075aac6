"""``mgstab`` command-line entry point.

Exit codes: 0 success, 1 validation error (bad input, failed certificate,
rejected tuning), 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .control import ConfigError, ControllerParams
from .equilibrium import ConvergenceError, nominal_v_ref, solve
from .grid import GridSpec, TopologyError
from .linearization import LinearizationError, eigen_sweep
from .metrics import compute_metrics
from .simulate import Scenario, SimResult, SimulationError, apply_event, column_names, integrate
from .stability_cert import check
from .tuner import TuningConstraints, tune

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class InputError(Exception):
    pass


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_grid(path) -> GridSpec:
    return GridSpec.from_dict(read_json(path))


def load_controller(path, grid: GridSpec | None = None) -> ControllerParams:
    """Controller document; ``"v_ref": "auto"`` is resolved against ``grid``."""
    d = read_json(path)
    if d.get("v_ref") == "auto":
        if grid is None:
            raise ConfigError("v_ref 'auto' needs a grid")
        p = ControllerParams.from_dict({**d, "v_ref": 0.0})
        full = np.zeros(len(grid.generators))
        full[grid.active_generators] = nominal_v_ref(grid, p)
        return p.with_(v_ref=tuple(float(x) for x in full))
    return ControllerParams.from_dict(d)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return Scenario.from_dict(read_json(path), base_dir=path.parent)


def _emit(obj: dict, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2)
    if out is None:
        print(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def result_from_csv(path, scenario: Scenario) -> SimResult:
    """Rebuild a :class:`SimResult` from a written time series and its scenario."""
    with open(path) as fh:
        header = next(csv.reader(fh))
    cols = column_names(scenario.grid)
    if header != cols:
        raise ConfigError(f"{path}: columns do not match the scenario grid")
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    t = data[:, 0]
    ev_times = np.array([e.time for e in scenario.events])
    window = np.searchsorted(ev_times, t, side="left")
    specs = [scenario.grid]
    spec = scenario.grid
    for e in scenario.events:
        spec = apply_event(spec, e, scenario.grid)
        specs.append(spec)
    act_t = [e.time for e in scenario.events if e.kind == "controller-activate"]
    if scenario.initial == "equilibrium":
        active = np.ones(t.size, bool)
    else:
        active = t > act_t[0] if act_t else np.zeros(t.size, bool)
    from .simulate import resolve_params

    log = [{"time": e.time, "kind": e.kind, "payload": dict(e.payload)} for e in scenario.events]
    return SimResult(data, cols, log, active, window, specs, resolve_params(scenario), scenario.model)


def samples_from_csv(path, grid: GridSpec, model: str = "full"):
    """States of ``grid``'s active topology from rows where all its columns are finite."""
    with open(path) as fh:
        header = next(csv.reader(fh))
    if header != column_names(grid):
        raise ConfigError(f"{path}: columns do not match the grid")
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    res = SimResult(data, header, [], np.ones(len(data), bool), np.zeros(len(data), int), [grid],
                    ControllerParams(), model)
    gi = grid.active_generators
    li = grid.active_lines
    ok = np.all(np.isfinite(res.i_gen[:, gi]), axis=1) & np.all(np.isfinite(res.block("ie")[:, li]), axis=1)
    return [res.state(s) for s in np.flatnonzero(ok)]


# ---------------------------------------------------------------- commands

def cmd_simulate(a) -> int:
    sc = load_scenario(a.scenario)
    if a.force:
        sc = sc.with_(force=True)
    res = integrate(sc)
    m = compute_metrics(res)
    out = Path(a.out) if a.out else None
    if out is None:
        _emit(m.to_dict(), None, "")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    if a.format == "json":
        rows = {"columns": res.columns, "data": np.where(np.isfinite(res.data), res.data, None).tolist()}
        (out / "timeseries.json").write_text(json.dumps(rows))
    else:
        res.to_csv(out / "timeseries.csv")
    _emit(m.to_dict(), out, "metrics.json")
    _emit({"events": res.event_log, "params": res.params.to_dict(), "model": res.model}, out, "run.json")
    print(f"wrote {out}; max settled deviation {m.settled_max_deviation:.4f}, "
          f"containment violations {m.containment_violations}")
    return EXIT_OK


def cmd_equilibrium(a) -> int:
    grid = load_grid(a.grid)
    params = load_controller(a.controller, grid)
    rep = solve(grid, params)
    _emit(rep.to_dict(), Path(a.out) if a.out else None, "equilibrium.json")
    return EXIT_OK


def cmd_certify(a) -> int:
    grid = load_grid(a.grid)
    params = load_controller(a.controller, grid)
    samples = samples_from_csv(a.samples, grid) if a.samples else None
    rep = check(grid, params, a.ratio_threshold, state_samples=samples)
    _emit(rep.to_dict(), Path(a.out) if a.out else None, "certificate.json")
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_eigs(a) -> int:
    sweep_path = Path(a.sweep)
    sw = read_json(sweep_path)
    base = sweep_path.parent
    grid = load_grid(a.grid or base / sw["grid"])
    params = load_controller(a.controller or base / sw["controller"], grid)

    def axis(v):
        if isinstance(v, dict):
            return np.geomspace(float(v["lo"]), float(v["hi"]), int(v["n"]))
        return np.asarray(v, dtype=float)

    pts = [(float(p), float(d)) for p in axis(sw["tau_p"]) for d in axis(sw["tau_d"])]
    b_zeta = sw.get("b_zeta")
    kw = {"zero_tol": float(sw["zero_tol"])} if "zero_tol" in sw else {}
    reps = eigen_sweep(grid, params, pts, b_zeta=b_zeta, **kw)
    if all(r.error for r in reps):
        print(f"every sweep point failed: {reps[0].error}", file=sys.stderr)
        return EXIT_NUMERIC
    lines = ["tau_p,tau_d,max_real_part,stable,zero_modes"]
    lines += [f"{r.tau_p:.6g},{r.tau_d:.6g},{r.max_real_part:.10g},{int(r.stable)},{r.zero_modes}" for r in reps]
    if a.out:
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eigs.csv").write_text("\n".join(lines) + "\n")
        _emit({"points": [r.to_dict() for r in reps]}, out, "spectra.json")
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_tune(a) -> int:
    grid = load_grid(a.grid)
    seed = load_controller(a.controller, grid)
    cons = TuningConstraints.from_dict(read_json(a.constraints)) if a.constraints else TuningConstraints()
    stress = load_scenario(a.stress)
    outcome = tune(grid, seed, cons, stress)
    _emit(outcome.to_dict(), Path(a.out) if a.out else None, "tuning.json")
    return EXIT_OK if outcome.accepted else EXIT_INVALID


def cmd_metrics(a) -> int:
    sc = load_scenario(a.scenario)
    res = result_from_csv(a.input, sc)
    _emit(compute_metrics(res).to_dict(), Path(a.out) if a.out else None, "metrics.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgstab", description="DC microgrid controller simulation and certification")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        if grid:
            p.add_argument("--grid")
            p.add_argument("--controller")
        p.add_argument("--out", help="output directory (default: print to stdout)")
        p.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="integrate a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--force", action="store_true", help="run even if dt exceeds the resolvable step")
    common(p, grid=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("equilibrium", help="solve for the closed-loop steady state")
    common(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("certify", help="certificate threshold and time-scale check")
    common(p)
    p.add_argument("--samples", help="time-series CSV used for the sampled bound estimates")
    p.add_argument("--ratio-threshold", type=float, default=10.0)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("eigs", help="eigenvalue sweep over (tau_p, tau_d)")
    common(p)
    p.add_argument("--sweep", required=True)
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("tune", help="search for a certified tuning")
    common(p)
    p.add_argument("--constraints")
    p.add_argument("--stress", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("metrics", help="metrics of a written time series")
    p.add_argument("--scenario", required=True)
    p.add_argument("--input", required=True, help="timeseries.csv from `simulate`")
    common(p, grid=False)
    p.set_defaults(func=cmd_metrics)
    return ap


def run_cli(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    needs_grid = a.command in ("equilibrium", "certify", "tune")
    if needs_grid and not (a.grid and a.controller):
        print(f"mgstab {a.command}: --grid and --controller are required", file=sys.stderr)
        return EXIT_INVALID
    try:
        return a.func(a)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, SimulationError, LinearizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, TopologyError, KeyError, TypeError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
