"""The double-wishbone suspension: why double precision cannot find its base parameters.

Takes about a minute.  Prints the singular-value tail at three precisions,
the regrouping coefficients at 30 digits, and what a double-precision run
makes of the same problem.

    python3 demos/suspension.py
"""
import numpy as np

from basepar import PrecisionLevel, param_index, param_label
from basepar.dynamics import assemble_observation
from basepar.numeric_base import base_parameters, certify_rank
from basepar.sla import BASE_COUNT, sla_defaults
from basepar.symbolic_base import evaluate_solution, run_plan

DP, P30, P60 = PrecisionLevel.native(), PrecisionLevel(30), PrecisionLevel(60)
sla = sla_defaults()

obs = {}
report = certify_rank(lambda lv: obs.setdefault(lv, assemble_observation(sla.mechanism, sla.trajectory, lv)),
                      [P30, P60])
dp = assemble_observation(sla.mechanism, sla.trajectory, DP).W
s_dp = np.linalg.svd(dp, compute_uv=False)

print(f"certified rank {report.rank}: {report.reason}\n")
print(" k   double      30 digits   60 digits   (relative to sigma_1)")
s30, s60 = report.spectra[P30], report.spectra[P60]
for k in range(34, 45):
    print(f"{k + 1:2d}   {s_dp[k] / s_dp[0]:.2e}    {float(s30[k] / s30[0]):.2e}    {float(s60[k] / s60[0]):.2e}")

sym = evaluate_solution(run_plan(sla.mechanism, sla.plan), sla.mechanism.geometry, P30)
num = base_parameters(None, P30, sym.phi2, BASE_COUNT, svd_result=report.svds[P30])
print("\nselected regrouping coefficients at 30 digits")
for base, other in (("mx1", "Iyy1"), ("m3", "Iyy2"), ("mx3", "Iyy4"), ("mz3", "m7"), ("mx4", "Iyy4")):
    r, c = num.phi1.index(param_index(int(base[-1]), base[:-1])), num.phi2.index(param_index(int(other[-1]), other[:-1]))
    print(f"  {base:4s} <- {other:5s} {float(num.beta[r, c]): .8f}")

# the 41st singular value sits about 1e-19 below the first, so 30 digits leave ~11 good digits in beta
with P30.context():
    diff = max(abs(a - b) for a, b in zip(num.beta.flat, sym.beta.flat))
print(f"\nnumeric vs symbolic beta at 30 digits: max difference {float(diff):.1e}")

forced = base_parameters(dp, DP, sym.phi2, BASE_COUNT)
worst = np.unravel_index(np.abs(forced.beta).argmax(), forced.beta.shape)
print(f"double precision, rank forced to {BASE_COUNT}: largest |beta| = {abs(forced.beta[worst]):.2e} "
      f"({param_label(forced.phi1[worst[0]])} <- {param_label(forced.phi2[worst[1]])})")
