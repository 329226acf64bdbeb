"""
When does the rare-outcome approximation break?
===============================================

No sampling here.  For each baseline outcome prevalence we solve for the
coefficients that give TE = log 2 and MP = 0.5 exactly, then evaluate the
approximate formulas at those true coefficients.  Whatever distance remains
is pure approximation error.
"""

import math

from prodmed import MediationRequest, SimulationScenario, evaluate, solve_design
from prodmed.measures import Flavor

req = MediationRequest(0, 1)
print(f"{'prev':>6} {'case':>5} {'flavor':>12} {'NIE bias %':>11} {'MP bias %':>10}")
for case in (3, 4):
    flavors = [Flavor.APPROXIMATE] + ([Flavor.PROBIT] if case == 3 else [])
    for prev in (0.01, 0.03, 0.10, 0.25, 0.50):
        scen = SimulationScenario(case, 100, math.log(2), 0.5, baseline_outcome_prev=prev)
        theta = solve_design(scen).theta()
        for fl in flavors:
            ms = evaluate(theta, req.with_flavor(fl), case)
            nie_bias = 100 * (ms.nie / scen.nie_target - 1)
            mp_bias = 100 * (ms.mp / scen.mp_target - 1)
            print(f"{prev:>6.2f} {case:>5} {fl.value:>12} {nie_bias:>11.2f} {mp_bias:>10.2f}")

# The approximate NIE drifts upward with prevalence in both cases.  For a
# binary mediator the approximate MP error changes sign near 15-20% before
# growing, so its magnitude is not monotone over the whole range.
