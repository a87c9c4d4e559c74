"""Variable-order Sobolev seminorms, the energy norm and constraint functionals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .calculus import Field, _vals, get_operator
from .kernel import DiffusionTensor, KernelSpec, OrderField
from .mesh import Mesh
from .quadrature import QuadratureOptions

__all__ = [
    "NormReport",
    "EmbeddingAudit",
    "seminorm_matrix",
    "variable_seminorm",
    "energy_norm",
    "l2_norm",
    "constraint_value",
    "norm_report",
    "audit_embeddings",
    "poincare_constant",
    "poincare_eigenpair",
    "norm_equivalence_ratios",
    "constrain",
    "sample_fields",
]

_SEMI_SPECS: dict = {}


_CONST_ORDERS: dict = {}


def _as_order(order) -> OrderField:
    if isinstance(order, OrderField):
        return order
    # one object per value so that cached operators are reused
    b = float(order)
    if b not in _CONST_ORDERS:
        _CONST_ORDERS[b] = OrderField.constant(b)
    return _CONST_ORDERS[b]


def _seminorm_spec(order: OrderField, mesh: Mesh) -> KernelSpec:
    # keep one spec object per (order, mesh) so the operator cache hits
    key = (id(order), id(mesh))
    hit = _SEMI_SPECS.get(key)
    if hit is not None and hit[0] is order and hit[1] is mesh:
        return hit[2]
    # a horizon beyond the diameter of the meshed domain removes the truncation
    spec = KernelSpec(order, DiffusionTensor.identity(mesh.dim), 2.0 * mesh.diameter + 1.0,
                      dim=mesh.dim, symmetrize=False)
    _SEMI_SPECS[key] = (order, mesh, spec)
    if len(_SEMI_SPECS) > 32:
        _SEMI_SPECS.pop(next(iter(_SEMI_SPECS)))
    return spec


def seminorm_matrix(order, mesh: Mesh, opts: QuadratureOptions | None = None):
    """Matrix S with u^T S u = |u|^2_{H^beta(.)} over Omega~ x Omega~, no horizon."""
    order = _as_order(order)
    spec = _seminorm_spec(order, mesh)
    return get_operator(spec, mesh, opts).stiffness(0.0)


def variable_seminorm(u: Field, order, mesh: Mesh | None = None,
                      opts: QuadratureOptions | None = None) -> float:
    """(∫∫ (u(y) - u(x))^2 / |y - x|^(n + 2 beta(x)) dy dx)^(1/2) over Omega~ x Omega~."""
    mesh = mesh or u.mesh
    S = seminorm_matrix(order, mesh, opts)
    v = _vals(u)
    return float(np.sqrt(max(v @ (S @ v), 0.0)))


def energy_norm(u: Field, t: float, spec: KernelSpec, mesh: Mesh | None = None,
                opts: QuadratureOptions | None = None) -> float:
    """|||u||| = (B(u, u) / 2)^(1/2) with the truncated kernel gamma."""
    mesh = mesh or u.mesh
    A = get_operator(spec, mesh, opts).stiffness(t)
    v = _vals(u)
    return float(np.sqrt(max(0.5 * (v @ (A @ v)), 0.0)))


def l2_norm(u: Field, mesh: Mesh | None = None, region: str | None = None) -> float:
    """L2 norm over Omega~ (default), "interior" or "interaction"."""
    mesh = mesh or u.mesh
    v = _vals(u)
    return float(np.sqrt(max(v @ (mesh.mass_matrix(region) @ v), 0.0)))


def constraint_value(u: Field, kind: str, mesh: Mesh | None = None) -> float:
    """E_c(u): ∫_{Omega_I} u^2 for "dirichlet", (∫_{Omega~} u)^2 for "neumann"."""
    mesh = mesh or u.mesh
    v = _vals(u)
    if kind == "dirichlet":
        return float(v @ (mesh.mass_matrix("interaction") @ v))
    if kind == "neumann":
        return float((mesh.mass_matrix() @ v).sum() ** 2)
    raise ValueError(f"unknown constraint kind {kind!r}")


@dataclass(frozen=True)
class NormReport:
    seminorm_var: float
    seminorm_lo: float
    seminorm_hi: float
    l2: float
    energy: float
    constraint_value: float


def norm_report(u: Field, t: float, spec: KernelSpec, kind: str = "dirichlet",
                mesh: Mesh | None = None) -> NormReport:
    mesh = mesh or u.mesh
    o = spec.order
    return NormReport(
        seminorm_var=variable_seminorm(u, o, mesh),
        seminorm_lo=variable_seminorm(u, o.beta_lo if not o.is_constant else o, mesh),
        seminorm_hi=variable_seminorm(u, o.beta_hi if not o.is_constant else o, mesh),
        l2=l2_norm(u, mesh),
        energy=energy_norm(u, t, spec, mesh),
        constraint_value=constraint_value(u, kind, mesh),
    )


# ---------------------------------------------------------------------------
# audits


@dataclass
class EmbeddingAudit:
    """Per-sample norms and the empirical constants of the embedding inequalities.

    ``c_lower`` bounds ||u||_{H^beta_*} / ||u||_{H^beta(.)}, ``c_upper`` bounds
    ||u||_{H^beta(.)} / ||u||_{H^beta^*}, ``c_energy`` is the smallest C in
    |u|^2_var <= |||u|||^2 / a_* + C eps^(-2 beta_*) ||u||^2 and
    ``violations`` counts samples breaking |||u|||^2 <= a^* |u|^2_var.
    """

    reports: list
    c_lower: float
    c_upper: float
    c_energy: float
    violations: int
    slack_upper: np.ndarray = field(repr=False)

    def rows(self):
        """CSV rows: norms and the slack of each inequality per sample."""
        out = []
        for i, r in enumerate(self.reports):
            out.append(dict(sample=i, seminorm_var=r.seminorm_var, seminorm_lo=r.seminorm_lo,
                            seminorm_hi=r.seminorm_hi, l2=r.l2, energy=r.energy,
                            constraint_value=r.constraint_value,
                            slack_upper=float(self.slack_upper[i])))
        return out


def _full(semi, l2):
    return np.sqrt(np.asarray(semi) ** 2 + np.asarray(l2) ** 2)


def audit_embeddings(samples, spec: KernelSpec, mesh: Mesh | None = None, t: float = 0.0,
                     kind: str = "dirichlet") -> EmbeddingAudit:
    """Empirical check of the embedding chain and the energy/seminorm comparison.

    Parameters
    ----------
    samples : list of Field
        At least 10 fields.
    """
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError("audit_embeddings needs at least 10 sample fields")
    mesh = mesh or samples[0].mesh
    reps = [norm_report(u, t, spec, kind, mesh) for u in samples]
    var = np.array([r.seminorm_var for r in reps])
    lo = np.array([r.seminorm_lo for r in reps])
    hi = np.array([r.seminorm_hi for r in reps])
    l2 = np.array([r.l2 for r in reps])
    en = np.array([r.energy for r in reps])
    f_var, f_lo, f_hi = _full(var, l2), _full(lo, l2), _full(hi, l2)
    ok = f_var > 0
    c_lower = float(np.max(f_lo[ok] / f_var[ok])) if ok.any() else 0.0
    c_upper = float(np.max(f_var[ok] / f_hi[ok])) if ok.any() else 0.0
    a_lo, a_hi = spec.tensor.a_lo, spec.tensor.a_hi
    bl = spec.order.beta_lo
    scale = spec.horizon ** (-2.0 * bl) * l2**2
    excess = var**2 - en**2 / a_lo
    pos = scale > 0
    c_energy = float(max(0.0, np.max(excess[pos] / scale[pos]))) if pos.any() else 0.0
    slack = a_hi * var**2 - en**2
    tol = 1e-10 * np.maximum(a_hi * var**2, 1e-300)
    violations = int(np.sum(slack < -tol))
    return EmbeddingAudit(reps, c_lower, c_upper, c_energy, violations, slack)


def constrain(values, kind: str, mesh: Mesh) -> np.ndarray:
    """Project nodal values onto the constrained space (Dirichlet or Neumann)."""
    v = np.array(values, dtype=float)
    if kind == "dirichlet":
        v[mesh.interaction_nodes] = 0.0
    elif kind == "neumann":
        m = np.asarray(mesh.mass_matrix().sum(axis=0)).ravel()
        v = v - (m @ v) / m.sum()
    else:
        raise ValueError(f"unknown constraint kind {kind!r}")
    return v


def sample_fields(mesh: Mesh, count: int, seed: int = 0, kind: str | None = None) -> list:
    """Random fields alternating rough nodal noise, smooth modes and bumps."""
    rng = np.random.default_rng(seed)
    X = mesh.nodes
    lo, hi = X.min(axis=0), X.max(axis=0)
    Y = (X - lo) / (hi - lo)
    out = []
    for i in range(count):
        style = i % 3
        if style == 0:
            v = rng.standard_normal(mesh.n_nodes)
        elif style == 1:
            k = rng.integers(1, 5, size=mesh.dim)
            ph = rng.uniform(0, 2 * np.pi, size=mesh.dim)
            v = np.prod(np.sin(np.pi * k * Y + ph), axis=1) * rng.uniform(0.5, 2.0)
        else:
            c = rng.uniform(0.2, 0.8, size=mesh.dim)
            w = rng.uniform(0.05, 0.3)
            v = np.exp(-np.sum((Y - c) ** 2, axis=1) / (2 * w * w))
        if kind is not None:
            v = constrain(v, kind, mesh)
        out.append(Field(mesh, v))
    return out


def _constrained_basis(kind: str, mesh: Mesh):
    N = mesh.n_nodes
    if kind == "dirichlet":
        free = mesh.free_nodes
        if len(free) == 0:
            raise ValueError("no free nodes under the Dirichlet constraint")
        Z = np.zeros((N, len(free)))
        Z[free, np.arange(len(free))] = 1.0
        return Z
    if kind == "neumann":
        m = np.asarray(mesh.mass_matrix().sum(axis=0)).ravel()
        return sla.null_space(m[None, :])
    raise ValueError(f"unknown constraint kind {kind!r}")


def poincare_eigenpair(kind: str, t: float, spec: KernelSpec, mesh: Mesh,
                       opts: QuadratureOptions | None = None):
    """Smallest generalized eigenpair of (A/2, M) on the constrained subspace.

    Returns ``(lam_min, u)`` with ``u`` a :class:`Field`. Raises
    ``ArithmeticError`` if the restricted problem is singular.
    """
    A = get_operator(spec, mesh, opts).stiffness(t).toarray()
    M = mesh.mass_matrix().toarray()
    Z = _constrained_basis(kind, mesh)
    Ar = 0.5 * Z.T @ A @ Z
    Mr = Z.T @ M @ Z
    w, V = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T), subset_by_index=[0, 0])
    lam = float(w[0])
    scale = max(float(np.max(np.abs(np.diag(Ar)))), 1e-300)
    if not lam > 1e-12 * scale:
        raise ArithmeticError(f"restricted eigenproblem is singular (lambda_min = {lam:.3e}); "
                              f"the {kind} constraint does not remove the constants")
    u = Z @ V[:, 0]
    return lam, Field(mesh, u)


def poincare_constant(kind: str, t: float, spec: KernelSpec, mesh: Mesh,
                      opts: QuadratureOptions | None = None) -> float:
    """lambda_min of A/2 against M on the constrained space; 1/lambda_min is the constant."""
    return poincare_eigenpair(kind, t, spec, mesh, opts)[0]


def norm_equivalence_ratios(samples, t: float, spec: KernelSpec, mesh: Mesh | None = None):
    """|||u||| / ||u||_{H^beta(.)} for each sample (full norm includes L2)."""
    out = []
    for u in samples:
        m = mesh or u.mesh
        full = float(np.hypot(variable_seminorm(u, spec.order, m), l2_norm(u, m)))
        out.append(energy_norm(u, t, spec, m) / full if full > 0 else np.nan)
    return np.array(out)
