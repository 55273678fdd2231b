"""Small perturbations keep the dichotomy; a large coupling destroys it.

Sweeps a weighted perturbation B_m(lam) over a small parameter grid, checks
that the projections move Lipschitz-continuously, then applies a strong
fiber coupling and watches detection fail.
"""

from mudich.admissibility import AdmissibilityOperator
from mudich.robustness import detect_dichotomy, lipschitz_sweep
from mudich.scenarios import make_perturbation, make_scenario

N = 200
sc = make_scenario("S4", "poly")
op = AdmissibilityOperator(sc.rate, sc.seq, sc.Z, N + 60)
grid = [0.0, 0.0025, 0.005, 0.0075, 0.01]

for lam in grid:
    det = detect_dichotomy(op, sc.perturbation, lam, N)
    print(f"lam={lam:.4f}  dichotomy={det.is_dichotomy}")

sweep = lipschitz_sweep(op, sc.perturbation, grid, range(1, N + 1))
print(f"empirical Lipschitz constant of lam -> P(lam): {sweep.emp_lip:.4f}")

big = make_perturbation("coupling", sc.rate, scale=10.0)
print(f"coupling c=10: dichotomy={detect_dichotomy(op, big, 1.0, N).is_dichotomy}")
