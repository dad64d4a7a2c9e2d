"""
Localized index of a reflection
===============================

The reflection x -> -x of the line has one fixed point. With U = (-1, 1)
the localized heat supertrace and the fixed-point side both equal the
fixed-point integrand divided by the length of U, at every t.
"""

import numpy as np

from lefschetz_lattice import build_scenario, heat_family, load_scenario, supertrace, tr_u_phi
from lefschetz_lattice.index_verify import run_scenario

sc = build_scenario(load_scenario("reflection-r1"))
D, pair, plan = sc.D, sc.pair, sc.plan
print(f"{D.model.n_sites} sites, h = {D.model.h}, fixed sites: {pair.fixed_sites().tolist()}")

# stage values of the localized supertrace for two values of t
H = heat_family(D)
for t in (0.6, 0.3):
    vals = [tr_u_phi(plan, pair, H, t, j, True, D.grading) for j in plan.stages]
    print(f"t = {t}: " + " ".join(f"{v:.5f}" for v in vals))

# both sides, the integrand oracle and the verdicts
rep = run_scenario("reflection-r1")
print("integrand oracle", round(rep.integrand.value, 6), "closed form", rep.integrand.closed_form)
print("analytic", round(rep.analytic_value, 6), "geometric", round(rep.geometric_value, 6))
print("1 / vol(U) on the lattice", round(1 / plan.vol_U(plan.j_max), 6))
print(rep.verdicts)

# the global supertrace on a torus does not depend on t
Dt = build_scenario(load_scenario("torus-identity")).D
print([round(supertrace(heat_family(Dt), np.sqrt(s), Dt.grading), 12) for s in (0.05, 0.2, 1.0)])
