"""Where the closed-form constants break for the exponential rate.

For mu_n = e**n the increments grow geometrically, so the upper sum estimate
fails, and the closed-form a-priori bound on the Green solution fails with it.
The bound computed from the rate's exact sums still holds.
"""

import numpy as np

from mudich import rates
from mudich.admissibility import AdmissibilityOperator, TruncatedSequence, green_solve
from mudich.scenarios import make_scenario

rep = rates.sum_bound_report(rates.exponential(), 0.5, 2, 2)
print(f"sum {rep.sum:.4f} vs closed-form upper bound {rep.upper:.4f}: holds={rep.upper_holds}")

N = 200
sc = make_scenario("S1", "exp")
op = AdmissibilityOperator(sc.rate, sc.seq, sc.Z, N)
ones = np.ones((N, sc.dim))
ones[0] = 0.0
g = green_solve(op, TruncatedSequence(ones, op.norms), sc.true_split, cert=sc.true_cert)
print(f"constant forcing: sup|x| = {g.sup_x:.4f}")
print(f"  closed-form bound {g.bound:.4f} (ok={g.bound_ok})")
print(f"  exact-sum bound   {g.sum_bound:.4f} (ok={g.sum_bound_ok})")
