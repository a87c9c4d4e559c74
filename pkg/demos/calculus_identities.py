"""Nonlocal Gauss and Green identities on a variable-order kernel.

Run: python3 demos/calculus_identities.py
"""
import numpy as np

from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_interval_mesh
from nonlocal_lab.calculus import Field, assemble_stiffness, flux_field, gauss_terms, green_terms

spec = KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), horizon=0.25)
rng = np.random.default_rng(0)

print(f"{'elements':>8} {'int_Omega D(nu)':>16} {'int_OmegaI N(nu)':>17} {'green resid':>12}")
for n in (8, 16, 32):
    mesh = build_interval_mesh(0.0, 1.0, n, spec.horizon)
    u = Field(mesh, rng.standard_normal(mesh.n_nodes))
    v = Field(mesh, rng.standard_normal(mesh.n_nodes))
    d, nn = gauss_terms(flux_field(u, 0.0, spec), spec, mesh)
    t1, b, t3 = green_terms(u, v, 0.0, spec, mesh)
    print(f"{n:8d} {d:16.10f} {nn:17.10f} {abs(t1 - b - t3) / abs(b):12.2e}")

A = assemble_stiffness(0.0, spec, mesh).matrix.toarray()
print("\nstiffness on 32 elements")
print(f"  asymmetry  {np.max(np.abs(A - A.T)):.1e}")
print(f"  lambda_min {np.linalg.eigvalsh(A)[0]:.1e}")
print(f"  |A 1|      {np.max(np.abs(A.sum(axis=1))):.1e}")
