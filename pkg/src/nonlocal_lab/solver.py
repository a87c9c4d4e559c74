"""θ-scheme time stepping of the volume-constrained problems and the a-priori monitor."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import Field, _vals, get_operator
from .kernel import KernelSpec
from .mesh import Mesh
from .quadrature import QuadratureOptions
from .spaces import l2_norm, variable_seminorm

__all__ = [
    "TimeGrid",
    "Trajectory",
    "solve_forward",
    "manufactured_rhs",
    "regularity_monitor",
    "MonitorReport",
    "source_values",
]

SCHEMES = {"implicit_euler": 1.0, "crank_nicolson": 0.5}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k dt on [0, T]."""

    T: float
    steps: int

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


_MAGIC = b"NLTRAJ01"
_KINDS = {"dirichlet": 0, "neumann": 1, "none": 2}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nodal values on a time grid, shape (steps + 1, n_nodes)."""

    values: np.ndarray
    grid: TimeGrid
    kind: str
    mesh: Mesh

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.steps + 1, self.mesh.n_nodes):
            raise ValueError(f"trajectory shape {v.shape} does not match grid and mesh")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k) -> Field:
        return Field(self.mesh, self.values[k])

    @property
    def snapshots(self) -> list:
        return [self[k] for k in range(len(self))]

    def scaled(self, c: float) -> "Trajectory":
        return Trajectory(c * self.values, self.grid, self.kind, self.mesh)

    def time_derivative(self) -> np.ndarray:
        """Central differences inside, second-order one-sided at the ends."""
        if len(self) < 3:
            return np.diff(self.values, axis=0).repeat(2, axis=0)[: len(self)] / self.grid.dt
        return np.gradient(self.values, self.grid.dt, axis=0, edge_order=2)

    # -- persistence -------------------------------------------------------
    def to_csv(self, path) -> None:
        """Rows ``time,node,value`` with 17 significant digits."""
        t = self.grid.times
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time,node,value\n")
            for k in range(len(self)):
                tk = format(float(t[k]), ".17g")
                for i, v in enumerate(self.values[k]):
                    fh.write(f"{tk},{i},{format(float(v), '.17g')}\n")

    def save_binary(self, path) -> None:
        """Header: 8-byte magic, int64 times, int64 nodes, int64 kind, float64 T.

        Followed by the values as little-endian float64 in row-major order.
        """
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqqd", len(self), self.mesh.n_nodes, _KINDS[self.kind],
                                 self.grid.T))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load_binary(cls, path, mesh: Mesh) -> "Trajectory":
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError("not a trajectory file")
            nt, nn, kc, T = struct.unpack("<qqqd", fh.read(32))
            data = np.frombuffer(fh.read(), dtype="<f8")
        if nn != mesh.n_nodes or data.size != nt * nn:
            raise ValueError("trajectory file does not match the mesh")
        kind = {v: k for k, v in _KINDS.items()}[kc]
        return cls(data.reshape(nt, nn), TimeGrid(T, nt - 1), kind, mesh)


# ---------------------------------------------------------------------------


def source_values(f, grid: TimeGrid, mesh: Mesh) -> np.ndarray | None:
    """Nodal source values at the grid times, shape (steps + 1, N), or None."""
    if f is None:
        return None
    if isinstance(f, Trajectory):
        return f.values
    if callable(f):
        return np.array([_vals(f(t)) for t in grid.times], dtype=float)
    F = np.asarray(f, dtype=float)
    if F.shape != (grid.steps + 1, mesh.n_nodes):
        raise ValueError(f"source array must have shape {(grid.steps + 1, mesh.n_nodes)}")
    return F


class _StepSolver:
    """Factorized step matrix, cached by the scalar multiplying A."""

    def __init__(self, M, kind, free, mvec, tol):
        self.M, self.kind, self.free, self.mvec, self.tol = M, kind, free, mvec, tol
        self._cache = {}

    def system(self, K):
        if self.kind == "dirichlet":
            return K[self.free][:, self.free]
        m = self.mvec[:, None]
        return sp.bmat([[K, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]]).tocsc()

    def solve(self, key, K, rhs):
        lu = self._cache.get(key)
        if lu is None:
            S = self.system(K).tocsc()
            try:
                lu = spla.splu(S)
            except RuntimeError:
                lu = ("cg", S)
            self._cache = {key: lu}
        if isinstance(lu, tuple):
            S = lu[1]
            x, info = spla.cg(S, rhs, rtol=self.tol, maxiter=20 * S.shape[0])
            if info != 0:
                raise ArithmeticError("step matrix is singular and CG did not converge")
            return x
        return lu.solve(rhs)


def solve_forward(u0, f, kind: str, grid: TimeGrid, scheme: str = "implicit_euler",
                  spec: KernelSpec | None = None, mesh: Mesh | None = None,
                  opts: QuadratureOptions | None = None, freeze_tensor: bool = False,
                  tol: float = 1e-10) -> Trajectory:
    """Advance M (u^{k+1} - u^k)/dt + A(t_θ) u^θ = M f_θ.

    Parameters
    ----------
    u0 : Field or array
        Initial data satisfying the constraint.
    f : None, callable t -> nodal values, or array (steps + 1, N)
        Source; grid arrays are combined as f_θ = θ f_{k+1} + (1-θ) f_k.
    kind : {"dirichlet", "neumann"}
        Dirichlet eliminates the interaction nodes; Neumann solves on all
        of Omega~ with one multiplier enforcing ∫ u = 0.
    scheme : {"implicit_euler", "crank_nicolson"}
    freeze_tensor : bool
        Use A(0) at every step.
    """
    if spec is None:
        raise ValueError("solve_forward needs a kernel spec")
    mesh = mesh or (u0.mesh if isinstance(u0, Field) else None)
    if mesh is None:
        raise ValueError("solve_forward needs a mesh")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if kind not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown constraint kind {kind!r}")
    theta = SCHEMES[scheme]
    op = get_operator(spec, mesh, opts)
    M = mesh.mass_matrix().tocsr()
    N = mesh.n_nodes
    u = np.array(_vals(u0), dtype=float).reshape(-1)
    if u.shape != (N,):
        raise ValueError("initial data does not match the mesh")
    scale = max(np.max(np.abs(u)), 1e-300)
    mvec = np.asarray(M.sum(axis=0)).ravel()
    free = mesh.free_nodes
    if kind == "dirichlet":
        bad = np.max(np.abs(u[mesh.interaction_nodes]), initial=0.0)
        if bad > 1e-10 * scale:
            raise ValueError(f"initial data violates the Dirichlet constraint (max {bad:.3e} on Omega_I)")
        u[mesh.interaction_nodes] = 0.0
    else:
        mean = float(mvec @ u)
        if abs(mean) > 1e-10 * scale * mesh.total_measure:
            raise ValueError(f"initial data violates the zero-mean constraint (∫u = {mean:.3e})")
    F = source_values(f, grid, mesh)
    dt = grid.dt
    tg = grid.times
    tens = spec.tensor
    iso = tens.isotropic
    steps = _StepSolver(M, kind, free, mvec, tol)
    out = np.empty((grid.steps + 1, N))
    out[0] = u
    for k in range(grid.steps):
        t_th = tg[k] + theta * dt
        t_eval = 0.0 if freeze_tensor else t_th
        if iso:
            # A(t) = c(t) A0: the factorization is reused while c is unchanged
            A = op.stiffness(t_eval)
            key = ("iso", float(tens.time_factor(t_eval)))
        else:
            A = op.stiffness(t_eval)
            key = ("t", t_eval)
        K = (M + theta * dt * A).tocsr()
        rhs = M @ u - (1.0 - theta) * dt * (A @ u)
        if F is not None:
            rhs = rhs + dt * (M @ (theta * F[k + 1] + (1.0 - theta) * F[k]))
        if kind == "dirichlet":
            new = np.zeros(N)
            new[free] = steps.solve(key, K, rhs[free])
        else:
            sol = steps.solve(key, K, np.append(rhs, 0.0))
            new = sol[:N]
        u = new
        out[k + 1] = u
    return Trajectory(out, grid, kind, mesh)


def manufactured_rhs(u_exact, grid: TimeGrid, spec: KernelSpec, mesh: Mesh,
                     opts: QuadratureOptions | None = None) -> np.ndarray:
    """f(t_k) = du/dt(t_k) + M^{-1} A(t_k) u(t_k) on the grid.

    ``u_exact`` is a Trajectory, an array (steps + 1, N) or a callable of t.
    Time derivatives use central differences with second-order one-sided
    stencils at the ends.
    """
    if grid.steps + 1 < 3:
        raise ValueError("manufactured_rhs needs at least 3 grid times")
    U = source_values(u_exact, grid, mesh)
    dU = np.gradient(U, grid.dt, axis=0, edge_order=2)
    op = get_operator(spec, mesh, opts)
    out = np.empty_like(U)
    for k, t in enumerate(grid.times):
        out[k] = dU[k] + op.strong(U[k], t)
    return out


@dataclass(frozen=True)
class MonitorReport:
    lhs: float
    rhs: float
    ratio: float
    sup_seminorm: float
    dt_norm: float
    strong_norm: float
    inconsistent: bool = False


def _time_l2(sq, grid):
    return float(np.sqrt(max(np.trapezoid(sq, dx=grid.dt), 0.0)))


def regularity_monitor(traj: Trajectory, f, spec: KernelSpec, mesh: Mesh | None = None,
                       opts: QuadratureOptions | None = None, tol: float = 1e-14) -> MonitorReport:
    """Ratio of the two sides of the a-priori estimate on a computed trajectory.

    LHS = sup_k ||u(t_k)||_{H^beta(.)} + ||du/dt||_{L2(0,T;L2(Omega))}
          + ||D(aD*u)||_{L2(0,T;L2(Omega))};
    RHS = ||f||_{L2(0,T;L2(Omega~))} + ||u0||_{H^beta(.)}.
    Full norms include the L2 part.
    """
    mesh = mesh or traj.mesh
    grid = traj.grid
    op = get_operator(spec, mesh, opts)
    Mo = mesh.mass_matrix("interior")
    M = mesh.mass_matrix()

    def full(v):
        return float(np.hypot(variable_seminorm(v, spec.order, mesh), l2_norm(v, mesh)))

    sup = max(full(traj.values[k]) for k in range(len(traj)))
    dU = traj.time_derivative()
    dsq = np.einsum("ki,ki->k", dU, (Mo @ dU.T).T)
    S = np.array([op.strong(traj.values[k], t) for k, t in enumerate(grid.times)])
    ssq = np.einsum("ki,ki->k", S, (Mo @ S.T).T)
    lhs = sup + _time_l2(dsq, grid) + _time_l2(ssq, grid)
    F = source_values(f, grid, mesh)
    fn = 0.0 if F is None else _time_l2(np.einsum("ki,ki->k", F, (M @ F.T).T), grid)
    rhs = fn + full(traj.values[0])
    if rhs <= tol:
        return MonitorReport(lhs, rhs, 0.0, sup, _time_l2(dsq, grid), _time_l2(ssq, grid),
                             inconsistent=lhs > tol)
    return MonitorReport(lhs, rhs, lhs / rhs, sup, _time_l2(dsq, grid), _time_l2(ssq, grid))
