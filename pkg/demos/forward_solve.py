"""Forward solves: energy decay and a manufactured-solution convergence study.

Run: python3 demos/forward_solve.py
"""
import numpy as np

from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_interval_mesh
from nonlocal_lab.solver import TimeGrid, manufactured_rhs, regularity_monitor, solve_forward
from nonlocal_lab.spaces import l2_norm, poincare_eigenpair, sample_fields

spec = KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), horizon=0.25)
mesh = build_interval_mesh(0.0, 1.0, 32, spec.horizon)
u0 = sample_fields(mesh, 1, seed=3, kind="dirichlet")[0]
tr = solve_forward(u0, None, "dirichlet", TimeGrid(0.5, 10), "implicit_euler", spec)
print("L2 norm under implicit Euler, f = 0")
print("  " + " ".join(f"{l2_norm(u):.4f}" for u in tr.snapshots))
print(f"  regularity ratio {regularity_monitor(tr, None, spec).ratio:.4f}")

print("\nmanufactured solution e^{-t} w, joint refinement in h and dt")
prev = None
for lev in range(4):
    m = build_interval_mesh(0.0, 1.0, 16 * 2**lev, spec.horizon)
    _, w = poincare_eigenpair("dirichlet", 0.0, spec, m)
    g = TimeGrid(1.0, 10 * 2**lev)
    U = np.exp(-g.times)[:, None] * w.values[None, :]
    sol = solve_forward(w, manufactured_rhs(U, g, spec, m), "dirichlet", g, "implicit_euler",
                        spec, m)
    e = sol.values - U
    M = m.mass_matrix()
    err = np.sqrt(np.trapezoid(np.einsum("ki,ki->k", e, (M @ e.T).T), dx=g.dt))
    ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"  {16 * 2**lev:4d} elements in Omega, {g.steps:4d} steps: error {err:.3e}{ratio}")
    prev = err
