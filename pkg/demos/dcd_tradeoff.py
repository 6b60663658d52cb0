"""Accuracy against cost of the dichotomous coordinate descent solver.

DCD solves the RLS normal equations with power-of-two steps, so every
operation is a shift or an addition. Nu caps the number of coordinate
updates per time instant: few updates mean cheap but partial solves.

    python3 demos/dcd_tradeoff.py
"""

import numpy as np

from diffrls import harness
from diffrls.dcd import DcdParams, dcd_solve

rng = np.random.default_rng(0)
m = 16
q, _ = np.linalg.qr(rng.standard_normal((m, m)))
phi = (q * np.geomspace(1, 10, m)) @ q.T
x = rng.uniform(-1, 1, m)
b = phi @ x

print("one 16-dimensional system, H = 1, Mb = 16")
print(f"{'Nu':>5s}  {'max error':>10s}  {'additions':>9s}")
for nu in (1, 2, 4, 16, 64, 256):
    dw, r, adds = dcd_solve(phi, b, DcdParams(1.0, 16, nu))
    print(f"{nu:5d}  {np.abs(dw - x).max():10.2e}  {adds:9d}")

print("\noperations per node and instant (M = 16, n_k = 10, Nu = 4, Mb = 16)")
print(f"{'algorithm':>10s} {'update':>8s} {'mults':>6s} {'adds':>6s} {'divs':>5s} {'sqrt':>5s}")
for row in harness.complexity_rows(16, 10):
    print(f"{row[0]:>10s} {row[1]:>8s} " + " ".join(f"{v:>6d}" if i < 2 else f"{v:>5d}"
                                                     for i, v in enumerate(row[2:])))
