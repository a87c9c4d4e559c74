"""Inverse source recovery from interaction-domain observations on a 2-D box.

Run: python3 demos/inverse_source.py
"""
import numpy as np

from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_box_mesh
from nonlocal_lab.inverse import (SourceProblem, numerical_rank, source_forward_map,
                                  source_reconstruct, truncation_study)
from nonlocal_lab.solver import TimeGrid

mesh = build_box_mesh(0.5, 1.0, 4, 8, 2.0, collar=0.125)
spec = KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(2), 2.0, dim=2)
grid = TimeGrid(0.5, 8)
G = source_forward_map(SourceProblem(0.5, 1.0, grid.T, 8, 4), grid, spec, mesh)
s = np.linalg.svd(G, compute_uv=False)
print(f"forward map {G.shape[0]} x {G.shape[1]}, rank {numerical_rank(s, G.shape)}")
print(f"sigma_max {s[0]:.3e}  sigma_min {s[-1]:.3e}  cond {s[0] / s[-1]:.1f}")

c = np.random.default_rng(0).standard_normal(G.shape[1])
cr, _ = source_reconstruct(G @ c, G)
print(f"noiseless reconstruction error {np.linalg.norm(cr - c) / np.linalg.norm(c):.1e}")

print("\ntruncated SVD with 1% noise")
for row in truncation_study(G, c, 0.01, seed=2)[3::4]:
    print(f"  k = {row['truncation']:2d}: error {row['error']:.3e}")
