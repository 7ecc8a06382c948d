"""Command-line front end.

Exit codes: 0 ok, 1 usage or input error, 2 numeric failure, 3 tolerance breach.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import linalg
from .dynamics import SampleFailure, TrajectoryConfig, assemble_observation, random_states
from .kinematics import KinematicsError
from .model import ModelError, load_mechanism, mechanism_to_dict, param_label, parse_param_label
from .numeric_base import (NoConvergence, PinnedSingular, base_parameters, certify_rank,
                           dp_rank_diagnostic, reduced_model_residual, svd)
from .precision import ExprError, PrecisionLevel
from .sla import FIXTURES, PIN_LABELS, load_trajectory
from .symbolic_base import (SymbolicError, evaluate_solution, invariance_report, load_plan,
                            run_plan)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ToleranceBreach(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tool_version() -> str:
    try:
        return version("basepar")
    except PackageNotFoundError:
        return "0+unknown"


# -- input resolution ---------------------------------------------------------------

def model_dir(spec: str) -> Path:
    p = Path(spec)
    if p.exists():
        return p if p.is_dir() else p.parent
    builtin = FIXTURES / spec.replace("fixtures/", "")
    if builtin.is_dir():
        return builtin
    raise UsageError(f"model not found: {spec}")


def parse_level(text) -> PrecisionLevel:
    try:
        return PrecisionLevel.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def parse_ladder(text) -> list[PrecisionLevel]:
    levels = [parse_level(x.strip()) for x in str(text).split(",") if x.strip()]
    if len(levels) < 2:
        raise UsageError("--digits-ladder needs at least two levels, e.g. 30,60")
    return levels


def trajectory_for(args, mech, mdir) -> TrajectoryConfig:
    if args.trajectory:
        traj = TrajectoryConfig.from_dict(json.loads(Path(args.trajectory).read_text()))
    else:
        traj = load_trajectory(mdir)
    if traj is None:
        # gentle default: two incommensurate harmonics per independent coordinate
        traj = TrajectoryConfig(tuple((("0.5", str(c + 1)), ("0.2", f"sqrt({2 * c + 3})"))
                                      for c in range(mech.dof)))
    changes = {}
    if args.samples is not None:
        changes["samples"] = args.samples
    if args.period is not None:
        changes["period"] = args.period
    return traj.replace(**changes) if changes else traj


def pin_indices(text, n_params):
    if not text:
        return None
    if text == "default":
        labels = PIN_LABELS
    elif Path(text).exists():
        labels = json.loads(Path(text).read_text())
    else:
        labels = [x.strip() for x in text.split(",") if x.strip()]
    try:
        idx = sorted(parse_param_label(x) for x in labels)
    except (KeyError, IndexError) as exc:
        raise UsageError(f"bad pin set: {exc}") from exc
    if any(i >= n_params for i in idx):
        raise UsageError("pin set names a parameter outside the model")
    return idx


def plan_for(args, mdir):
    path = Path(args.plan) if args.plan else mdir / "plan.json"
    if not path.exists():
        raise UsageError(f"no transfer plan at {path}")
    return load_plan(path)


# -- output --------------------------------------------------------------------------

class Run:
    """Holds the resolved inputs of one command and writes its artifacts."""

    def __init__(self, args):
        self.args = args
        self.mdir = model_dir(args.model)
        self.mech = load_mechanism(self.mdir)
        self.level = parse_level(args.digits)
        self.ladder = parse_ladder(args.digits_ladder) if args.digits_ladder else None
        self.trajectory = trajectory_for(args, self.mech, self.mdir)
        self.pin = pin_indices(args.pin, self.mech.n_params)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def manifest(self) -> dict:
        model_doc = json.dumps(mechanism_to_dict(self.mech), sort_keys=True)
        return {
            "command": self.args.command,
            "model": str(self.mdir),
            "model_digest": hashlib.sha256(model_doc.encode()).hexdigest(),
            "geometry": dict(self.mech.geometry.entries),
            "gravity": list(self.mech.gravity),
            "trajectory": self.trajectory.to_dict(),
            "digits": str(self.level),
            "ladder": [str(p) for p in self.ladder] if self.ladder else None,
            "pin": [param_label(i) for i in self.pin] if self.pin else None,
            "tool_version": _tool_version(),
        }

    def write_json(self, name, payload):
        payload = {"manifest": self.manifest(), **payload}
        (self.out / name).write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")

    def write_text(self, name, text):
        (self.out / name).write_text(text)

    def finish(self):
        stamped = {**self.manifest(), "timestamp": datetime.now(timezone.utc).isoformat()}
        (self.out / "manifest.json").write_text(json.dumps(stamped, indent=2) + "\n")

    def builder(self):
        return lambda level: assemble_observation(self.mech, self.trajectory, level)


def write_matrix_csv(path, W, level):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([param_label(i) for i in range(W.shape[1])])
        for row in W:
            w.writerow([level.fmt(x) for x in row])


# -- commands ---------------------------------------------------------------------------

def cmd_observation(run: Run):
    obs = assemble_observation(run.mech, run.trajectory, run.level)
    write_matrix_csv(run.out / "W.csv", obs.W, run.level)
    run.write_json("observation.json", {
        "rows": obs.W.shape[0], "columns": obs.W.shape[1], "level": str(run.level),
        "states_digest": obs.states_digest(), "underdetermined": obs.meta["underdetermined"],
        "gravity_on": any(g not in ("0", "0.0") for g in run.mech.gravity),
    })
    print(f"W: {obs.W.shape[0]} x {obs.W.shape[1]} at {run.level} -> {run.out / 'W.csv'}")


def cmd_svdscan(run: Run):
    ladder = run.ladder or [run.level, parse_level(2 * run.level.effective_digits)]
    report = certify_rank(run.builder(), ladder, workers=run.args.workers)
    payload = {"ridge": report.to_dict()}
    rows = [(str(lvl), k + 1, lvl.fmt(s)) for lvl, spec in report.spectra.items() for k, s in enumerate(spec)]
    if run.args.with_dp:
        W = assemble_observation(run.mech, run.trajectory, PrecisionLevel.native()).W
        s = np.linalg.svd(W, compute_uv=False)
        rows += [("native", k + 1, repr(float(x))) for k, x in enumerate(s)]
        rank, gaps = dp_rank_diagnostic(W, 1e-12)
        dp_ladder = [PrecisionLevel.native(), ladder[0]]
        dp_report = certify_rank(run.builder(), dp_ladder)
        payload["double_precision"] = {"tolerance_cut_rank@1e-12": rank, "gap_ratios": gaps,
                                       "ridge": {k: v for k, v in dp_report.to_dict().items() if k != "spectra"}}
    with open(run.out / "spectra.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "index", "value"])
        w.writerows(rows)
    run.write_json("ridge.json", payload)
    verdict = "certified" if report.certified else "UNCERTIFIED"
    print(f"rank {report.rank} {verdict}: {report.reason}")


def numeric_solution(run: Run, rank=None, pin=None):
    """Numeric base parameters at ``run.level``; rank certified on the ladder unless forced."""
    pin = pin if pin is not None else run.pin
    forced = rank if rank is not None else run.args.rank
    if forced is None:
        ladder = run.ladder or [run.level, parse_level(2 * run.level.effective_digits)]
        if run.level not in ladder:
            raise UsageError("--digits must be one of the ladder levels")
        report = certify_rank(run.builder(), ladder, workers=run.args.workers)
        if not report.certified:
            raise ToleranceBreach(f"rank not certified: {report.reason}")
        sol = base_parameters(None, run.level, pin, report.rank, svd_result=report.svds[run.level])
        sol.forced = False
        return sol, report
    obs = assemble_observation(run.mech, run.trajectory, run.level)
    res = svd(obs.W, run.level, run.args.workers)
    return base_parameters(obs.W, run.level, pin, int(forced), svd_result=res), None


def cmd_base_numeric(run: Run):
    sol, report = numeric_solution(run)
    payload = {"solution": sol.to_dict()}
    if report is not None:
        payload["ridge"] = {k: v for k, v in report.to_dict().items() if k != "spectra"}
    run.write_json("base_numeric.json", payload)
    table = "\n".join(sol.expressions()) + "\n"
    run.write_text("base_numeric.txt", table)
    sys.stdout.write(table)


def cmd_base_symbolic(run: Run):
    sol = run_plan(run.mech, plan_for(run.args, run.mdir))
    run.write_json("base_symbolic.json", {"solution": sol.to_dict()})
    table = "".join(f"{k} = {v}\n" for k, v in sol.table())
    run.write_text("base_symbolic.txt", table)
    sys.stdout.write(table)
    print(f"{len(sol.forms())} base parameters")


def cmd_compare(run: Run):
    sym = run_plan(run.mech, plan_for(run.args, run.mdir))
    sb = evaluate_solution(sym, run.mech.geometry, run.level)
    if run.pin is not None and run.pin != sb.phi2:
        raise UsageError("pin set differs from the plan's regrouped parameters; refusing to reindex")
    rank = None if run.ladder else len(sb.phi1)
    num, _ = numeric_solution(run, rank=rank, pin=sb.phi2)
    if num.phi1 != sb.phi1:
        raise UsageError("numeric and symbolic partitions differ")
    level = run.level
    tol = float(run.args.tol) if run.args.tol else 10.0 ** (8 - level.effective_digits)
    with level.context():
        diff = max((abs(a - b) for a, b in zip(num.beta.flat, sb.beta.flat)), default=level.scalar(0))
        W = assemble_observation(run.mech, run.trajectory, level).W
        rng = np.random.default_rng(run.args.seed)
        scale = max(float(sum(abs(x) for x in row)) for row in W)
        worst = 0.0
        for _ in range(100):
            phi = rng.standard_normal(W.shape[1])
            r = float(reduced_model_residual(W, num, phi)) / (scale * float(np.abs(phi).max()))
            worst = max(worst, r)
    res_tol = 10.0 ** (5 - level.effective_digits)
    ok = float(diff) <= tol and worst <= res_tol
    run.write_json("compare.json", {
        "max_abs_beta_diff": level.fmt(diff), "beta_tolerance": tol,
        "max_rel_reduced_residual": worst, "residual_tolerance": res_tol,
        "rank": len(sb.phi1), "forced_rank": num.forced, "pass": ok,
    })
    print(f"max |beta_num - beta_sym| = {float(diff):.3e} (tol {tol:.1e}); "
          f"reduced-model residual {worst:.3e} (tol {res_tol:.1e})")
    if not ok:
        raise ToleranceBreach("numeric and symbolic base parameters disagree")


def cmd_invariance(run: Run):
    sym = run_plan(run.mech, plan_for(run.args, run.mdir))
    rng = np.random.default_rng(run.args.seed)
    states = random_states(run.mech, run.trajectory, 20, rng, run.level)
    phis = [rng.standard_normal(run.mech.n_params) for _ in range(10)]
    rep = invariance_report(run.mech, sym, states, phis, run.level)
    tol = 1e-10 if run.level.is_native else 10.0 ** (8 - run.level.effective_digits)
    rep["tolerance"] = tol
    rep["pass"] = rep["max_rel_torque_diff"] <= tol and rep["max_rel_lagrangian_spread"] <= tol
    run.write_json("invariance.json", rep)
    print(f"torque diff {rep['max_rel_torque_diff']:.3e}, "
          f"Lagrangian spread {rep['max_rel_lagrangian_spread']:.3e} (tol {tol:.1e})")
    if not rep["pass"]:
        raise ToleranceBreach("plan does not preserve the dynamics")


COMMANDS = {
    "observation": cmd_observation,
    "svdscan": cmd_svdscan,
    "base-numeric": cmd_base_numeric,
    "base-symbolic": cmd_base_symbolic,
    "compare": cmd_compare,
    "invariance": cmd_invariance,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="sla", help="model directory, model.json, or a built-in name")
    common.add_argument("--digits", default="30", help="working precision: decimal digits or 'native'")
    common.add_argument("--digits-ladder", help="comma-separated precision ladder, e.g. 30,60")
    common.add_argument("--samples", type=int, help="trajectory samples")
    common.add_argument("--period", help="trajectory period (expression)")
    common.add_argument("--trajectory", help="trajectory JSON file")
    common.add_argument("--pin", help="regrouped parameters: labels, a JSON list file, or 'default'")
    common.add_argument("--plan", help="transfer plan JSON (default: plan.json beside the model)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--rank", type=int, help="force the rank instead of certifying it")
    common.add_argument("--workers", type=int, default=1, help="threads for Jacobi rotations")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", help="beta tolerance for compare")
    common.add_argument("--with-dp", action="store_true", help="svdscan: add the double-precision spectrum")

    parser = _Parser(prog="basepar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        COMMANDS[args.command](run)
        run.finish()
        return EXIT_OK
    except (UsageError, FileNotFoundError, ModelError, ExprError, SymbolicError, PinnedSingular) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SampleFailure as exc:
        print(f"error: sample {exc.index}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KinematicsError, NoConvergence, linalg.SingularMatrixError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ToleranceBreach as exc:
        print(f"tolerance breach: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
