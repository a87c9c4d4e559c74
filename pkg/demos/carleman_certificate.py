"""Empirical certification of the Carleman inequality on a suite of solves.

Run: python3 demos/carleman_certificate.py
"""
import numpy as np

from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_interval_mesh
from nonlocal_lab.carleman import certify
from nonlocal_lab.solver import TimeGrid, solve_forward
from nonlocal_lab.spaces import sample_fields

spec = KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), horizon=0.25)
mesh = build_interval_mesh(0.0, 1.0, 16, spec.horizon)
grid = TimeGrid(0.4, 40)
suite = [(solve_forward(u0, None, "dirichlet", grid, spec=spec), None)
         for u0 in sample_fields(mesh, 10, seed=0, kind="dirichlet")]
lam_grid, s_grid = [2, 4, 8], [1, 2, 4, 8]
cert = certify(suite, lam_grid, s_grid, "forward", spec)

print("worst log(lhs / rhs) over the suite")
print("  lambda \\ s " + "".join(f"{s:>9}" for s in s_grid))
worst = np.max(cert.log_ratios, axis=-1)
for i, lam in enumerate(lam_grid):
    print(f"  {lam:10} " + "".join(f"{v:9.3f}" for v in worst[i]))
print()
for k, v in cert.summary().items():
    print(f"  {k}: {v}")
for lam in (4, 8):
    print(f"  stability over s in {{4, 8}} at lambda={lam}: {cert.stability(lam, [4, 8]):.3f}")
