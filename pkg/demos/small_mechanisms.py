"""Numeric and symbolic base parameters side by side on the pendulum and the two-link arm.

    python3 demos/small_mechanisms.py
"""
import json

from basepar import PrecisionLevel, load_mechanism
from basepar.dynamics import TrajectoryConfig, assemble_observation
from basepar.numeric_base import base_parameters, certify_rank
from basepar.sla import FIXTURES
from basepar.symbolic_base import evaluate_solution, load_plan, run_plan

P30, P60 = PrecisionLevel(30), PrecisionLevel(60)

for name in ("pendulum", "twolink"):
    mech = load_mechanism(FIXTURES / name)
    traj = TrajectoryConfig.from_dict(json.loads((FIXTURES / name / "trajectory.json").read_text()))
    print(f"== {mech.name}: {mech.n_params} parameters, {traj.samples} samples")

    cache = {}
    report = certify_rank(lambda lv: cache.setdefault(lv, assemble_observation(mech, traj, lv)), [P30, P60])
    print(f"rank {report.rank} ({'certified' if report.certified else 'not certified'})")
    tail = report.spectra[P30][report.rank:report.rank + 1]
    if tail:
        print(f"first discarded singular value: {float(tail[0]):.2e} at 30 digits, "
              f"{float(report.spectra[P60][report.rank]):.2e} at 60")

    sym = run_plan(mech, load_plan(FIXTURES / name / "plan.json"))
    print("symbolic regrouping:")
    for label, expr in sym.table():
        print(f"  {label:5s} = {expr}")

    # pin the numeric solution to the symbolic choice of regrouped parameters
    sb = evaluate_solution(sym, mech.geometry, P30)
    num = base_parameters(None, P30, sb.phi2, report.rank, svd_result=report.svds[P30])
    with P30.context():
        diff = max((abs(a - b) for a, b in zip(num.beta.flat, sb.beta.flat)), default=0)
    print(f"max |beta_numeric - beta_symbolic| = {float(diff):.1e}\n")
