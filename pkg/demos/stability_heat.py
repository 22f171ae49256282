"""Mean-square decay of the stochastic heat example, and where the certificate breaks.

With l = 1 the quadratic Lyapunov function gives E|X(t)|^2 <= exp(-(2 pi^2 - 3) t)|x0|^2 + M.
With l = 10 the same constants no longer hold and the audit returns a counterexample.

    python demos/stability_heat.py [paths]
"""

import sys

import numpy as np

from spdelab.stability import (StabilityError, certify_stability, example4_lyapunov, example4_setup,
                               lyapunov_audit)

paths = int(sys.argv[1]) if len(sys.argv) > 1 else 500
space, q, lv, co = example4_setup(1.0)
ls = example4_lyapunov(1.0)
x0 = np.zeros(space.dim)
x0[:2] = [1.0, 0.5]

rep = certify_stability(space, co, q, lv, ls, x0, T=1.0, M=1000, n_paths=paths, seed=2024)
print(f"l = 1: c3 = {ls.c3:.4f}, k3 = {ls.k3:g}, M = {ls.M:.4f}")
print(f"  audit: {rep.audit.label}; bound check: {rep.verdict}; fitted decay {rep.fitted_decay_rate:.3f}")
for i in range(0, 1001, 200):
    c = rep.curve
    print(f"  t={c.t_grid[i]:.1f}  E|X|^2={c.estimate[i]:.5f} +- {c.stderr[i]:.5f}  bound={rep.bound_curve[i]:.5f}")

_, _, _, co10 = example4_setup(10.0)
bad = lyapunov_audit(space, co10, q, lv, ls)
ce = bad.counterexample
print(f"l = 10 against the l = 1 constants: {bad.label}, margin {bad.worst_margin:.3g}")
print(f"  counterexample has norm {np.linalg.norm(ce):.3g}, leading coordinates {np.round(ce[:3], 3)}")
try:
    example4_lyapunov(10.0)
except StabilityError as e:
    print(f"  no constants for l = 10 either: {e}")
