"""Variable-order norms, embedding constants and Poincare constants.

Run: python3 demos/norms_and_poincare.py
"""
from nonlocal_lab import DiffusionTensor, KernelSpec, OrderField, build_interval_mesh
from nonlocal_lab.spaces import audit_embeddings, poincare_constant, sample_fields

spec = KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), horizon=0.25)
mesh = build_interval_mesh(0.0, 1.0, 16, spec.horizon)

audit = audit_embeddings(sample_fields(mesh, 100, seed=0, kind="dirichlet"), spec)
print("embedding audit over 100 random Dirichlet fields")
print(f"  C_lower  = {audit.c_lower:.4f}")
print(f"  C_upper  = {audit.c_upper:.4f}")
print(f"  C_energy = {audit.c_energy:.4f}")
print(f"  upper-bound violations: {audit.violations}")

print("\nPoincare constants")
for kind in ("dirichlet", "neumann"):
    vals = [poincare_constant(kind, 0.0, spec, build_interval_mesh(0.0, 1.0, n, spec.horizon))
            for n in (16, 32, 64)]
    print(f"  {kind:9s} " + "  ".join(f"{v:.5f}" for v in vals))
