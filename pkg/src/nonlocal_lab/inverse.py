"""Backward diffusion with Tikhonov regularization and the inverse-source experiment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .calculus import Field, _vals, get_operator
from .kernel import KernelSpec
from .mesh import Mesh
from .quadrature import QuadratureOptions
from .solver import SCHEMES, TimeGrid, Trajectory, solve_forward
from .spaces import seminorm_matrix

__all__ = [
    "BackwardProblem",
    "BackwardResult",
    "BackwardConvergenceError",
    "Propagator",
    "backward_reconstruct",
    "dirichlet_eigenmodes",
    "eigenmode_family",
    "StabilityAudit",
    "stability_audit",
    "add_noise",
    "SourceProblem",
    "source_forward_map",
    "source_reconstruct",
    "truncation_study",
    "numerical_rank",
]


# ---------------------------------------------------------------------------
# backward problem


@dataclass(frozen=True)
class BackwardProblem:
    """Recover u(., t0) from the observed terminal state u(., T)."""

    observed_T: Field
    target_time: float
    regularization: float
    noise_level: float = 0.0

    def __post_init__(self):
        if not self.target_time >= 0:
            raise ValueError("target time must be nonnegative")
        if not self.regularization > 0:
            raise ValueError("regularization must be positive")
        if not self.noise_level >= 0:
            raise ValueError("noise level must be nonnegative")


class BackwardConvergenceError(ArithmeticError):
    """CG hit its iteration cap; ``history`` holds the relative residuals."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = list(history)


@dataclass
class BackwardResult:
    field: Field
    initial: Field
    iterations: int
    residuals: list
    misfit: float
    horizon_note: str = ""


class Propagator:
    """Discrete Dirichlet solution map on the free nodes and its transpose.

    One theta-step is P_k = K_k^{-1} R_k with K_k = M + theta dt A_k and
    R_k = M - (1 - theta) dt A_k, all restricted to the free nodes. Both are
    symmetric, so P_k^T = R_k K_k^{-1}.
    """

    def __init__(self, spec: KernelSpec, mesh: Mesh, grid: TimeGrid,
                 scheme: str = "crank_nicolson", opts: QuadratureOptions | None = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.spec, self.mesh, self.grid = spec, mesh, grid
        self.theta = SCHEMES[scheme]
        self.free = mesh.free_nodes
        self.op = get_operator(spec, mesh, opts)
        M = mesh.mass_matrix().tocsr()
        self.M = M[self.free][:, self.free].tocsc()
        self._lu = {}
        self._R = {}

    def _step(self, k):
        dt, th = self.grid.dt, self.theta
        t = self.grid.times[k] + th * dt
        tens = self.spec.tensor
        key = float(tens.time_factor(t)) if tens.isotropic else t
        if key not in self._lu:
            A = self.op.stiffness(t)[self.free][:, self.free]
            self._lu[key] = spla.splu((self.M + th * dt * A).tocsc())
            self._R[key] = (self.M - (1.0 - th) * dt * A).tocsr()
        return self._lu[key], self._R[key]

    def forward(self, x, n=None):
        n = self.grid.steps if n is None else n
        x = np.asarray(x, dtype=float)
        for k in range(n):
            lu, R = self._step(k)
            x = lu.solve(R @ x)
        return x

    def transpose(self, y, n=None):
        n = self.grid.steps if n is None else n
        y = np.asarray(y, dtype=float)
        for k in reversed(range(n)):
            lu, R = self._step(k)
            y = R @ lu.solve(y)
        return y

    def full(self, x):
        out = np.zeros(self.mesh.n_nodes)
        out[self.free] = x
        return out


def _time_index(grid: TimeGrid, t0: float) -> int:
    j = int(round(t0 / grid.dt))
    if not (0 <= j < grid.steps) or abs(j * grid.dt - t0) > 1e-9 * max(grid.T, 1.0):
        raise ValueError(f"target time {t0} is not a grid time in [0, T)")
    return j


def backward_reconstruct(p: BackwardProblem, spec: KernelSpec, mesh: Mesh, grid: TimeGrid,
                         scheme: str = "crank_nicolson", tol: float = 1e-12,
                         maxiter: int | None = None,
                         opts: QuadratureOptions | None = None) -> BackwardResult:
    """Tikhonov reconstruction of u(., t0) from u(., T) (Dirichlet, f = 0).

    Minimizes ||S_T u0 - d||^2 + rho ||u0||^2 in L2(Omega~) through CG on the
    normal equations (S^T M S + rho M) u0 = S^T M d.
    """
    j = _time_index(grid, p.target_time)
    prop = Propagator(spec, mesh, grid, scheme, opts)
    d = np.asarray(_vals(p.observed_T), dtype=float)[prop.free]
    M = prop.M
    rho = p.regularization
    n = len(prop.free)

    def normal(x):
        return prop.transpose(M @ prop.forward(x)) + rho * (M @ x)

    H = spla.LinearOperator((n, n), matvec=normal, dtype=float)
    b = prop.transpose(M @ d)
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        z = Field(mesh, np.zeros(mesh.n_nodes))
        return BackwardResult(z, z, 0, [0.0], 0.0)
    hist = []

    def cb(xk):
        hist.append(float(np.linalg.norm(b - normal(xk)) / bn))

    cap = maxiter or 10 * n
    x, info = spla.cg(H, b, rtol=tol, atol=0.0, maxiter=cap, callback=cb)
    if info > 0:
        raise BackwardConvergenceError(
            f"CG did not converge in {cap} iterations (last relative residual "
            f"{hist[-1] if hist else float('nan'):.3e})", hist)
    r = prop.forward(x) - d
    misfit = float(np.sqrt(max(r @ (M @ r), 0.0)))
    u_t0 = prop.forward(x, j)
    return BackwardResult(Field(mesh, prop.full(u_t0)), Field(mesh, prop.full(x)), len(hist), hist,
                          misfit)


# ---------------------------------------------------------------------------
# conditional stability


def dirichlet_eigenmodes(spec: KernelSpec, mesh: Mesh, t: float = 0.0,
                         opts: QuadratureOptions | None = None):
    """All pairs of A v = mu M v on the Dirichlet free nodes, M-normalized.

    Returns ``(mu, V)`` with ``V`` of shape (N, n_free), ascending ``mu``.
    """
    free = mesh.free_nodes
    A = get_operator(spec, mesh, opts).stiffness(t).toarray()[np.ix_(free, free)]
    M = mesh.mass_matrix().toarray()[np.ix_(free, free)]
    mu, W = sla.eigh(0.5 * (A + A.T), 0.5 * (M + M.T))
    V = np.zeros((mesh.n_nodes, len(free)))
    V[free] = W
    return mu, V


def eigenmode_family(spec: KernelSpec, mesh: Mesh, grid: TimeGrid, mu_min: float = 0.0,
                     count: int = 6, mu_max: float | None = None,
                     opts: QuadratureOptions | None = None) -> list:
    """Trajectories e^{-mu_k t} phi_k for ``count`` modes with mu_min <= mu_k <= mu_max,
    spread evenly through that part of the spectrum.

    ``mu_max`` defaults to 200 / T so that e^{-mu T} stays representable.
    """
    mu, V = dirichlet_eigenmodes(spec, mesh, 0.0, opts)
    hi = 200.0 / grid.T if mu_max is None else mu_max
    idx = np.nonzero((mu >= mu_min) & (mu <= hi))[0]
    if len(idx) < count:
        raise ValueError("not enough eigenmodes above mu_min")
    pick = idx[np.unique(np.linspace(0, len(idx) - 1, count).round().astype(int))]
    fam = []
    for k in pick:
        vals = np.exp(-mu[k] * grid.times)[:, None] * V[:, k][None, :]
        fam.append(Trajectory(vals, grid, "dirichlet", mesh))
    return fam


@dataclass
class StabilityAudit:
    """Hölder-type fit X <= C Y^{1-theta} Z^theta over a family.

    ``C_fit`` is the regression intercept; ``C`` is the smallest constant with
    every member satisfied at the fitted theta, so ``slack`` (log scale) is >= 0.
    """

    theta: float
    C: float
    C_fit: float
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    slack: np.ndarray
    rate_proxy: np.ndarray
    rate_bounded: bool
    ok: bool = field(default=True)

    def rows(self):
        return [dict(member=i, X=float(self.X[i]), Y=float(self.Y[i]), Z=float(self.Z[i]),
                     slack=float(self.slack[i]), rate_proxy=float(self.rate_proxy[i]))
                for i in range(len(self.X))]


def stability_audit(family, t0: float, spec: KernelSpec, mesh: Mesh | None = None,
                    opts: QuadratureOptions | None = None) -> StabilityAudit:
    """Fit theta and C in ||u(t0)||_{L2(Omega)} <= C ||u||_{L2(Q~)}^{1-theta} ||u(T)||_H^theta.

    Raises ``ValueError`` for a degenerate family (fewer than two distinct
    exponent profiles).
    """
    family = list(family)
    if len(family) < 2:
        raise ValueError("stability audit needs at least two trajectories")
    mesh = mesh or family[0].mesh
    if not spec.order.is_constant:
        raise ValueError("stability audit assumes a constant order")
    Mo = mesh.mass_matrix("interior")
    M = mesh.mass_matrix()
    S = seminorm_matrix(spec.order, mesh, opts)

    def hnorm(v):
        return float(np.sqrt(max(v @ (S @ v), 0.0) + max(v @ (M @ v), 0.0)))

    X, Y, Z, B = [], [], [], []
    for tr in family:
        j = _time_index(tr.grid, t0)
        U = tr.values
        X.append(np.sqrt(max(U[j] @ (Mo @ U[j]), 0.0)))
        sq = np.einsum("ki,ki->k", U, (M @ U.T).T)
        Y.append(np.sqrt(max(np.trapezoid(sq, dx=tr.grid.dt), 0.0)))
        Z.append(hnorm(U[-1]))
        B.append(hnorm(U[0]))
    X, Y, Z, B = map(np.array, (X, Y, Z, B))
    if np.any(X <= 0) or np.any(Y <= 0) or np.any(Z <= 0):
        raise ValueError("family members must be nonzero at t0 and T")
    lx, ly, lz = np.log(X), np.log(Y), np.log(Z)
    # log X - log Y = log C + theta (log Z - log Y)
    xs = lz - ly
    ys = lx - ly
    if np.ptp(xs) <= 1e-10 * max(1.0, np.max(np.abs(xs))):
        raise ValueError("degenerate family: all members give the same profile")
    theta, logc = np.polyfit(xs, ys, 1)
    resid = ys - (logc + theta * xs)
    logc_env = logc + float(np.max(resid))
    slack = logc_env + theta * xs - ys
    # logarithmic-rate proxy with the a-priori bound max ||u(0)||_H
    bound = float(np.max(B))
    yn, zn = Y / bound, Z / bound
    with np.errstate(invalid="ignore", divide="ignore"):
        proxy = yn * np.sqrt(np.maximum(np.log(1.0 / zn), 0.0))
    fin = proxy[np.isfinite(proxy) & (proxy > 0)]
    bounded = bool(len(fin) == len(proxy) and np.max(fin) <= 10.0 * np.min(fin))
    return StabilityAudit(float(theta), float(np.exp(logc_env)), float(np.exp(logc)), X, Y, Z,
                          slack, proxy, bounded, bool(np.all(slack >= -1e-12)))


def add_noise(values, level: float, seed: int = 0) -> np.ndarray:
    """Additive Gaussian noise of standard deviation level * ||values||_inf."""
    v = np.asarray(values, dtype=float)
    if level == 0:
        return v.copy()
    rng = np.random.default_rng(seed)
    return v + level * float(np.max(np.abs(v))) * rng.standard_normal(v.shape)


# ---------------------------------------------------------------------------
# inverse source


@dataclass
class SourceProblem:
    """Sources f(x', t) on Omega = (0, ell) x (0, width), observed on Omega_I x (0, t_obs).

    ``basis`` is a list of callables ``f(points, t) -> values``; the default
    is the tensor product of cos(j pi x2 / width) for j < space_modes and
    cos(k pi t / t_obs) for k < time_modes.
    """

    ell: float
    width: float
    t_obs: float
    space_modes: int = 8
    time_modes: int = 4
    basis: list | None = None

    def __post_init__(self):
        if not (self.ell > 0 and self.width > 0 and self.t_obs > 0):
            raise ValueError("ell, width and t_obs must be positive")
        if self.basis is None:
            self.basis = [self._mode(j, k) for j in range(self.space_modes)
                          for k in range(self.time_modes)]

    def _mode(self, j, k):
        w, to = self.width, self.t_obs

        def f(X, t):
            X = np.atleast_2d(X)
            return np.cos(j * np.pi * X[:, 1] / w) * np.cos(k * np.pi * t / to)

        return f

    def inside(self, X) -> np.ndarray:
        """Nodes of the closed rectangle Omega."""
        X = np.atleast_2d(X)
        tol = 1e-12 * max(self.ell, self.width)
        return ((X[:, 0] >= -tol) & (X[:, 0] <= self.ell + tol)
                & (X[:, 1] >= -tol) & (X[:, 1] <= self.width + tol))

    def source_array(self, f, mesh: Mesh, grid: TimeGrid, check: bool = True) -> np.ndarray:
        """Nodal values of ``f`` on the closed rectangle, zero elsewhere, on the grid."""
        X = mesh.nodes
        ins = self.inside(X)
        out = np.zeros((grid.steps + 1, mesh.n_nodes))
        for k, t in enumerate(grid.times):
            v = np.asarray(f(X[ins], t), dtype=float)
            if check:
                for x1 in (0.0, self.ell):
                    Xs = X[ins].copy()
                    Xs[:, 0] = x1
                    w = np.asarray(f(Xs, t), dtype=float)
                    if np.max(np.abs(w - v), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(v))):
                        raise ValueError("basis source depends on x1")
            out[k, ins] = v
        return out


def source_forward_map(p: SourceProblem, grid: TimeGrid, spec: KernelSpec, mesh: Mesh,
                       opts: QuadratureOptions | None = None) -> np.ndarray:
    """Columns: traces on the interaction nodes at t_1..t_n for each basis source.

    Uses u(., 0) = 0 and the Neumann (zero interaction flux) condition.
    """
    if mesh.dim != 2:
        raise ValueError("the inverse-source experiment runs on a 2-D mesh")
    if not spec.order.is_constant:
        raise ValueError("the inverse-source experiment needs a constant order")
    if spec.horizon < mesh.diameter:
        raise ValueError("horizon must cover the meshed domain (eps >= diam)")
    obs = mesh.interaction_nodes
    cols = []
    zero = np.zeros(mesh.n_nodes)
    for f in p.basis:
        F = p.source_array(f, mesh, grid)
        if not np.any(F):
            cols.append(np.zeros(grid.steps * len(obs)))
            continue
        tr = solve_forward(zero, F, "neumann", grid, "implicit_euler", spec, mesh, opts)
        cols.append(tr.values[1:, obs].ravel())
    return np.column_stack(cols)


def numerical_rank(s: np.ndarray, shape) -> int:
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > max(shape) * np.finfo(float).eps * s[0]))


def source_reconstruct(data, G: np.ndarray, truncation: int | None = None):
    """Truncated-SVD solution of G c = data.

    Returns ``(coefficients, residual)`` with the residual in the Euclidean norm.
    """
    data = np.asarray(data, dtype=float)
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    rank = numerical_rank(s, G.shape)
    k = rank if truncation is None else int(truncation)
    if k > rank:
        raise ValueError(f"truncation {k} exceeds the numerical rank {rank}")
    if k < 0:
        raise ValueError("truncation must be nonnegative")
    c = Vt[:k].T @ ((U[:, :k].T @ data) / s[:k])
    return c, float(np.linalg.norm(G @ c - data))


def truncation_study(G: np.ndarray, coeffs, noise: float, seed: int = 0):
    """Relative coefficient error for each truncation level on noisy data."""
    coeffs = np.asarray(coeffs, dtype=float)
    data = add_noise(G @ coeffs, noise, seed)
    s = np.linalg.svd(G, compute_uv=False)
    rank = numerical_rank(s, G.shape)
    nc = max(np.linalg.norm(coeffs), 1e-300)
    out = []
    for k in range(1, rank + 1):
        c, r = source_reconstruct(data, G, k)
        out.append(dict(truncation=k, error=float(np.linalg.norm(c - coeffs) / nc), residual=r))
    return out
