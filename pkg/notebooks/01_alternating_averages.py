"""
Averages that do not converge
=============================

A density whose averages over growing intervals oscillate between two
values. The localized functionals are built from accumulation points of
such averages, so this is the basic object to look at.
"""

import numpy as np

from lefschetz_lattice import accumulation_points, zeta_example

# zeta(x) = sum_k (-1)**k chi(2**-k x - 1) with a unit-integral bump chi;
# M_j = [-2**(j+1), 2**(j+1)]
F = zeta_example(j_max=14, h=1 / 32)
for j, v in zip(F.stages, F.values):
    print(f"j = {j:2d}   stage average = {v:+.6f}")

# the even and odd stages settle on two different values
for c in F.clusters:
    print(f"accumulation point {c.center:+.6f} witnessed by stages {F.stages[list(c.indices)].tolist()}")

# the selection rule decides which one the functional reports
for rule in ("first", "min", "max"):
    print(rule, round(zeta_example(rule=rule).value, 6))

# a convergent sequence has a single point
print([round(c.center, 6) for c in accumulation_points(1 + 0.5 ** np.arange(30))])
