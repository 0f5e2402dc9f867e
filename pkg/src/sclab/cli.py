"""Command-line experiment runner.

``sclab <task> --config FILE [--seed N] [--out DIR]`` parses the
configuration, runs one task and writes CSV tables plus ``manifest.json``.
Outputs carry no timestamps, so a rerun with the same configuration and seed
is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import TASKS, ExperimentSpec, parse_config
from .errors import (BlowUpError, ConfigError, CostError, DomainError, InsufficientDataError,
                     SclabError, StabilityError)
from .hyperbolic import solve_parabolic, solve_skeleton
from .kinetic import (TestFunction, XiGrid, heat_kinetic_residual, l1_via_kinetic,
                      parabolic_kinetic_measure)
from .ldp import (OptConfig, RareEvent, action, condition_b_gap, ldp_fit, mc_rare_event,
                  minimize_action, weak_continuity_probe)
from .models import Control, Field
from .stochastic import solve_stochastic

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_INSUFFICIENT = 3
EXIT_BLOWUP = 4
EXIT_STABILITY = 5
EXIT_COST = 6
EXIT_DOMAIN = 7


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    artifacts: list[Path] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a header row and 17-significant-digit floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if len(r) != len(header):
                raise ValueError("ragged output row")
            w.writerow([_fmt(v) for v in r])
    return path


def _write_text(path: Path, text: str) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    return path


# task runners return (exit_code, artifacts)

def _solve(spec: ExperimentSpec, out: Path):
    cfg = spec.solver_config(store="nodes")
    tr = solve_stochastic(spec.initial(), spec.flux(), spec.noise(), spec.control(),
                          spec.get("stochastic", "eps"), cfg=cfg, seed=spec.seed)
    man = tr.write_csv(out, "snapshot")
    return EXIT_OK, sorted(out.glob("snapshot_*.csv")) + [man]


def _skeleton(spec: ExperimentSpec, out: Path):
    tr = solve_skeleton(spec.initial(), spec.flux(), spec.noise(), spec.control(),
                        cfg=spec.solver_config(store="nodes"))
    man = tr.write_csv(out, "skeleton")
    return EXIT_OK, sorted(out.glob("skeleton_*.csv")) + [man]


def _parabolic_run(spec: ExperimentSpec):
    s = spec.sections["solver"]
    return solve_parabolic(spec.initial(), spec.flux(), spec.noise(), spec.control(),
                           eta=s["eta"], R=s["R"], cfg=spec.solver_config(store="all"))


def _parabolic(spec: ExperimentSpec, out: Path):
    tr = _parabolic_run(spec)
    man = tr.write_csv(out, "parabolic", nodes_only=True)
    d = tr.diagnostics
    diag = write_table(out / "diagnostics.csv", ["sup_l2_sq", "dissipation", "energy"],
                       [[d["sup_l2_sq"], d["dissipation"], d["energy"]]])
    return EXIT_OK, sorted(out.glob("parabolic_*.csv")) + [man, diag]


def _kinetic_check(spec: ExperimentSpec, out: Path):
    tr = _parabolic_run(spec)
    eta = spec.get("solver", "eta")
    lo, hi = float(np.min(tr.values)), float(np.max(tr.values))
    # fine xi resolution so the kinetic L1 identity is checked to ~1e-3
    points = max(64, int(math.ceil((hi - lo + 2.0) / 1e-3)))
    xi = XiGrid(lo - 1.0, hi + 1.0, points)
    measure = parabolic_kinetic_measure(tr, eta, xi)
    pos, neg = l1_via_kinetic(tr.final, tr.initial, xi)
    rows = [
        ["kinetic_mass", measure.total_mass()],
        ["dissipation", tr.diagnostics["dissipation"]],
        ["l1_direct", tr.final.l1_distance(tr.initial)],
        ["l1_kinetic", pos + neg],
    ]
    if spec.get("flux", "kind") == "zero" and spec.get("noise", "sigma") == 0:
        phi = TestFunction("cos", (1,) * spec.get("grid", "dim"), 0.0, 1.0 + max(abs(lo), abs(hi)))
        rows.append(["heat_residual", heat_kinetic_residual(tr, phi, xi)])
    table = write_table(out / "kinetic_check.csv", ["check", "value"], rows)
    meas = _write_text(out / "kinetic_measure.csv", measure.to_csv())
    return EXIT_OK, [table, meas]


def _event(spec: ExperimentSpec, u0: Field) -> RareEvent:
    s = spec.sections["mc"]
    if s["event"] == "terminal_mean_threshold":
        return RareEvent(s["event"], u0.mean(), s["threshold"])
    ref = solve_skeleton(u0, spec.flux(), spec.noise(), Control.zeros(spec.noise().K,
                         spec.get("time", "T"), spec.n_steps()),
                         cfg=spec.solver_config(store="nodes")).final
    return RareEvent(s["event"], ref, s["threshold"])


def _mc(spec: ExperimentSpec, out: Path):
    s = spec.sections["mc"]
    u0 = spec.initial()
    table = mc_rare_event(u0, spec.flux(), spec.noise(), _event(spec, u0), s["eps"],
                          s["n_traj"], spec.seed, h=spec.control(),
                          cfg=spec.solver_config(store="nodes"))
    summary = write_table(out / "mc_summary.csv", table.ROW_FIELDS, table.rows_csv())
    tr = table.trajectories
    traj = write_table(out / "mc_trajectories.csv", table.TRAJ_FIELDS,
                       zip(*(tr[k] for k in table.TRAJ_FIELDS)))
    files = [summary, traj]
    if s["action_star"] is not None:
        try:
            fit = ldp_fit(table, s["action_star"])
        except InsufficientDataError:
            return EXIT_OK, files
        files.append(_fit_table(out, fit))
    return EXIT_OK, files


def _fit_table(out: Path, fit) -> Path:
    return write_table(out / "ldp_fit.csv", ["limit", "action_star", "ratio", "monotone"],
                       [[fit.limit, fit.action_star, fit.ratio, fit.monotone]])


def _minimize(spec: ExperimentSpec, out: Path):
    s = spec.sections["minimize"]
    u0 = spec.initial()
    noise = spec.noise()
    T = spec.get("time", "T")
    if s["target"] == "shift":
        target = Field(u0.grid, u0.values + s["shift"])
    else:
        target = solve_skeleton(u0, spec.flux(), noise, Control.zeros(noise.K, T, spec.n_steps()),
                                cfg=spec.solver_config(store="nodes")).final
    n_steps = max(spec.n_steps(), s["n_intervals"])
    opt = OptConfig(n_intervals=s["n_intervals"], n_steps=n_steps, penalty0=s["penalty0"],
                    rounds=s["rounds"], solver=spec.solver_config(store="nodes"))
    res = minimize_action(u0, target, s["delta_target"], spec.flux(), noise, T, opt)
    ctl = _write_text(out / "control.csv", res.control.to_csv())
    summary = write_table(out / "minimize.csv",
                          ["action", "terminal_gap", "converged", "iterations", "penalty"],
                          [[res.action, res.terminal_gap, res.converged, res.iterations,
                            res.penalty]])
    return (EXIT_OK if res.converged else EXIT_NOT_CONVERGED), [ctl, summary]


def _action(spec: ExperimentSpec, out: Path):
    h = spec.control()
    path = write_table(out / "action.csv", ["T", "n_steps", "K", "norm_sq", "action"],
                       [[h.T, h.n_steps, h.K, h.norm_sq(), action(h)]])
    return EXIT_OK, [path]


def _cond_b(spec: ExperimentSpec, out: Path):
    s = spec.sections["condb"]
    rows = condition_b_gap(spec.initial(), spec.flux(), spec.noise(), spec.control(), s["eps"],
                           s["n_traj"], spec.seed, s["M"], delta=s["delta"],
                           cfg=spec.solver_config(store="nodes"))
    keys = ["eps", "mean_gap", "std_err", "exceed_frac", "delta"]
    return EXIT_OK, [write_table(out / "cond_b.csv", keys, [[r[k] for k in keys] for r in rows])]


def _weak_probe(spec: ExperimentSpec, out: Path):
    s = spec.sections["weak"]
    rows = weak_continuity_probe(spec.initial(), spec.flux(), spec.noise(), spec.control(),
                                 s["amplitude"], s["mode"], s["eps"], M=s["M"],
                                 cfg=spec.solver_config(store="nodes"))
    keys = ["eps", "solution_gap", "control_gap_sq"]
    return EXIT_OK, [write_table(out / "weak_probe.csv", keys,
                                 [[r[k] for k in keys] for r in rows])]


def read_mc_summary(path: str | Path) -> list[tuple[float, float]]:
    """``(eps, p_hat)`` pairs from a CSV with ``eps`` and ``p_hat`` columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"eps", "p_hat"} <= set(rows[0]):
        raise DomainError(f"{path}: table needs 'eps' and 'p_hat' columns")
    return [(float(r["eps"]), float(r["p_hat"])) for r in rows]


def _ldp_fit(spec: ExperimentSpec, out: Path):
    s = spec.sections["ldp"]
    if s["table"] is None or s["action_star"] is None:
        raise DomainError("ldp-fit needs a table and action_star")
    pairs = read_mc_summary(Path(spec.base_dir) / s["table"])
    try:
        fit = ldp_fit(pairs, s["action_star"])
    except InsufficientDataError as exc:
        print(f"sclab: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT, []
    rates = write_table(out / "ldp_rates.csv", ["eps", "rate"], zip(fit.eps, fit.rates))
    return EXIT_OK, [rates, _fit_table(out, fit)]


RUNNERS = {
    "solve": _solve,
    "skeleton": _skeleton,
    "parabolic": _parabolic,
    "kinetic-check": _kinetic_check,
    "mc": _mc,
    "minimize": _minimize,
    "action": _action,
    "cond-b": _cond_b,
    "weak-probe": _weak_probe,
    "ldp-fit": _ldp_fit,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    return v


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> RunResult:
    """Run ``spec.task`` and write its outputs plus ``manifest.json``.

    Solver failures are mapped to exit codes: 4 blow-up, 5 stability
    violation, 6 cost guard, 7 domain error.
    """
    out = Path(out_dir if out_dir is not None else Path(spec.base_dir) / spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    error = None
    try:
        code, files = RUNNERS[spec.task](spec, out)
    except BlowUpError as exc:
        code, files, error = EXIT_BLOWUP, [], exc
    except StabilityError as exc:
        code, files, error = EXIT_STABILITY, [], exc
    except CostError as exc:
        code, files, error = EXIT_COST, [], exc
    except DomainError as exc:
        code, files, error = EXIT_DOMAIN, [], exc
    if error is not None:
        print(f"sclab: {type(error).__name__}: {error}", file=sys.stderr)
    manifest = {
        "name": spec.name,
        "task": spec.task,
        "seed": spec.seed,
        "version": __version__,
        "exit_code": code,
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "spec": _json_safe(spec.echo()),
        "files": [{"file": p.name, "sha256": _sha256(p)} for p in files],
    }
    mpath = _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(code, out, list(files) + [mpath])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sclab", description=__doc__.splitlines()[0])
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="experiment configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory (overrides [experiment] output_dir)")
    p.add_argument("--table", help="ldp-fit: CSV with eps and p_hat columns")
    p.add_argument("--action-star", type=float, help="ldp-fit: reference action")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None and args.task != "ldp-fit":
        print("sclab: --config is required for this task", file=sys.stderr)
        return EXIT_CONFIG
    if args.config is not None:
        cfg_path = Path(args.config)
        try:
            text = cfg_path.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"sclab: cannot read {cfg_path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        base = cfg_path.parent
    else:
        text, base = "[grid]\nn = 4\n[flux]\nkind = zero\n[time]\nT = 1\n", Path.cwd()
    try:
        spec = parse_config(text, task=args.task, base_dir=base, seed=args.seed)
    except ConfigError as exc:
        print(f"sclab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.task == "ldp-fit":
        ldp = spec.sections["ldp"]
        if args.table is not None:
            ldp["table"] = str(Path(args.table).resolve())
        if args.action_star is not None:
            ldp["action_star"] = args.action_star
        if ldp["table"] is None or ldp["action_star"] is None:
            print("sclab: ldp-fit needs --table and --action-star (or an [ldp] section)",
                  file=sys.stderr)
            return EXIT_CONFIG
        if not (Path(spec.base_dir) / ldp["table"]).exists():
            print(f"sclab: table {ldp['table']} does not exist", file=sys.stderr)
            return EXIT_CONFIG
    out = Path(args.out) if args.out is not None else None
    try:
        res = run_experiment(spec, out)
    except SclabError as exc:
        print(f"sclab: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
