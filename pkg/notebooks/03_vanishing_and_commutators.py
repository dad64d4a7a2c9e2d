"""
Vanishing and the trace property
================================

Without fixed points the localized supertrace decays like a Gaussian in the
displacement. Commutators of asymptotically local families have vanishing
localized trace as t goes to 0, while a sharp step multiplier breaks this.
"""

import numpy as np

from lefschetz_lattice import build_scenario, load_scenario
from lefschetz_lattice.asymptotic_trace import asymptotic_trace_test, families_from_spec
from lefschetz_lattice.index_verify import run_scenario

# translation by 2 on a circle: no fixed points
rep = run_scenario("translation-r1")
chk = rep.displacement
print(f"delta = {chk.delta}, envelope C = {chk.envelope.C:.3g}, a = {chk.envelope.a:.3g}")
for row in chk.rows():
    print(f"{row['set']:12s} t = {row['t']:.3f}  |value| = {row['value']:.3e}  bound = {row['envelope']:.3e}")

# commutator of D exp(-t^2 D^2) and a multiplied parametrix
sc = build_scenario(load_scenario("commutator-reference"))
c = sc.config["commutator"]
A, B = families_from_spec(sc.D, c)
good = asymptotic_trace_test(sc.pair, A, B, sc.plan, sc.t_grid, c["j_schedule"], c["r"], c["tol"])
print("t      ", np.round(good.t_values, 4).tolist())
print("values ", [f"{v:.2e}" for v in good.values], "slope", round(good.slope, 2), good.passed)

# negative control: a step multiplier on A
A2, B2 = families_from_spec(sc.D, {**c, "A_multiplier": "step"})
bad = asymptotic_trace_test(sc.pair, A2, B2, sc.plan, sc.t_grid, with_bounds=False)
print("step   ", [f"{v:.2e}" for v in bad.values], "slope", round(bad.slope, 2), bad.passed)
