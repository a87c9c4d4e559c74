"""Backward diffusion: Tikhonov reconstruction and the Hoelder stability fit.

Run: python3 demos/backward_diffusion.py
"""
import numpy as np

from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_interval_mesh
from nonlocal_lab.inverse import (BackwardProblem, add_noise, backward_reconstruct,
                                  eigenmode_family, stability_audit)
from nonlocal_lab.calculus import Field
from nonlocal_lab.solver import TimeGrid, solve_forward
from nonlocal_lab.spaces import constrain

spec = KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(1), horizon=0.25)
mesh = build_interval_mesh(0.0, 1.0, 64, spec.horizon)
grid = TimeGrid(0.2, 40)
x = mesh.nodes[:, 0]
u0 = constrain(np.sin(np.pi * np.clip(x, 0, 1)) ** 2, "dirichlet", mesh)
tr = solve_forward(u0, None, "dirichlet", grid, "crank_nicolson", spec, mesh)
mid = grid.steps // 2
M = mesh.mass_matrix()
ref = tr.values[mid]

print(f"reconstruct u(t0 = {grid.times[mid]:.2f}) from u(T = {grid.T})")
print(f"{'rho':>8} {'noiseless':>10} {'1% noise':>10}")
noisy = Field(mesh, constrain(add_noise(tr.values[-1], 0.01, seed=1), "dirichlet", mesh))
for rho in (1e-2, 1e-4, 1e-6, 1e-8):
    errs = []
    for data in (tr[-1], noisy):
        rec = backward_reconstruct(BackwardProblem(data, grid.times[mid], rho), spec, mesh, grid,
                                   "crank_nicolson").field.values
        errs.append(np.sqrt((rec - ref) @ M @ (rec - ref) / (ref @ M @ ref)))
    print(f"{rho:8.0e} {errs[0]:10.2e} {errs[1]:10.2e}")

fam = eigenmode_family(spec, mesh, grid, 5.0 / grid.T, 8)
print("\nstability exponent fitted on an eigenmode family")
for frac in (0.25, 0.5, 0.75):
    t0 = grid.times[int(round(frac * grid.steps))]
    a = stability_audit(fam, t0, spec, mesh)
    print(f"  t0/T = {t0 / grid.T:.2f}: theta = {a.theta:.4f}, C = {a.C:.3f}")
