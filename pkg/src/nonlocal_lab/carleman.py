"""Carleman-inequality terms on discrete trajectories and empirical certification.

All weighted time integrals are accumulated in log space, so large s e^{lambda T}
never overflows; reports carry both the logarithms and the (possibly huge)
values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .calculus import get_operator
from .kernel import KernelSpec
from .mesh import Mesh
from .quadrature import QuadratureOptions
from .solver import Trajectory, source_values
from .spaces import seminorm_matrix

__all__ = [
    "CarlemanWeight",
    "weight_eval",
    "CarlemanReport",
    "SpatialTerms",
    "spatial_terms",
    "carleman_terms",
    "Certificate",
    "certify",
]

LHS_FIELDS = ("lhs_dt", "lhs_diff", "lhs_l2", "lhs_semi")


@dataclass(frozen=True)
class CarlemanWeight:
    """phi(t) = exp(sign * lam * t) together with the large parameter s."""

    lam: float
    s: float
    sign: int = 1

    def __post_init__(self):
        if not (self.lam > 0 and self.s > 0):
            raise ValueError("lambda and s must be positive")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def phi(self, t) -> np.ndarray:
        return np.exp(self.sign * self.lam * np.asarray(t, dtype=float))


def weight_eval(w: CarlemanWeight, t) -> float:
    """phi(t) = e^{sign lambda t}."""
    return float(w.phi(t))


@dataclass(frozen=True)
class SpatialTerms:
    """Per-time spatial integrals of one trajectory; independent of (lambda, s)."""

    times: np.ndarray
    dt2: np.ndarray        # ||du/dt||^2_{L2(Omega)}
    diff2: np.ndarray      # ||D(aD*u)||^2_{L2(Omega)}
    u2: np.ndarray         # ||u||^2_{L2(Omega)}
    semi2: np.ndarray      # |u|^2_{H^beta(.)(Omega~)}
    L2: np.ndarray         # ||L(u)||^2_{L2(Omega~)}
    inter: np.ndarray      # ∫_{Omega_I} (|u| + |du/dt|) |N(aD*u)|
    h_first: float         # ||u(0)||^2_{H^beta(.)}
    h_last: float          # ||u(T)||^2_{H^beta(.)}
    scale: float           # max_t ||u(t)||_{L2(Omega~)}

    def scaled(self, c: float) -> "SpatialTerms":
        c2 = c * c
        return SpatialTerms(self.times, c2 * self.dt2, c2 * self.diff2, c2 * self.u2,
                            c2 * self.semi2, c2 * self.L2, c2 * self.inter,
                            c2 * self.h_first, c2 * self.h_last, abs(c) * self.scale)


def spatial_terms(traj: Trajectory, f, spec: KernelSpec, mesh: Mesh | None = None,
                  opts: QuadratureOptions | None = None) -> SpatialTerms:
    """Evaluate the spatial integrals entering every Carleman term.

    L(u) is the defining expression du/dt + D(aD*u) on all of Omega~, with
    D(aD*u) the Galerkin strong form; on Omega_I, N(aD*u) = -D(aD*u).
    When ``f`` is given it replaces L(u) on Omega (where the equation holds).
    """
    mesh = mesh or traj.mesh
    op = get_operator(spec, mesh, opts)
    U = traj.values
    dU = traj.time_derivative()
    times = traj.grid.times
    S = np.array([op.strong(U[k], t) for k, t in enumerate(times)])
    Mo = mesh.mass_matrix("interior")
    M = mesh.mass_matrix()
    Sem = seminorm_matrix(spec.order, mesh, opts)

    def quad(Mat, V):
        return np.maximum(np.einsum("ki,ki->k", V, (Mat @ V.T).T), 0.0)

    L = dU + S
    F = source_values(f, traj.grid, mesh)
    if F is not None:
        on_omega = ~mesh.node_is_interaction
        L = np.where(on_omega[None, :], F, L)
    mI = np.asarray(mesh.mass_matrix("interaction").sum(axis=1)).ravel()
    inter = ((np.abs(U) + np.abs(dU)) * np.abs(S)) @ mI

    def hfull(v):
        return float(max(v @ (Sem @ v), 0.0) + max(v @ (M @ v), 0.0))

    return SpatialTerms(times, quad(Mo, dU), quad(Mo, S), quad(Mo, U), quad(Sem, U),
                        quad(M, L), inter, hfull(U[0]), hfull(U[-1]),
                        float(np.sqrt(np.max(quad(M, U)))))


@dataclass(frozen=True)
class CarlemanReport:
    """Weighted terms of the Carleman inequality for one (trajectory, weight).

    ``logs`` holds natural logarithms of every term (``-inf`` for zero terms);
    the attributes hold their exponentials.
    """

    lhs_dt: float
    lhs_diff: float
    lhs_l2: float
    lhs_semi: float
    rhs_source: float
    rhs_boundary_data: float
    rhs_interaction: float
    variant: str
    weight: CarlemanWeight
    logs: dict = field(default_factory=dict)
    constant: float = float("nan")

    @property
    def log_lhs(self) -> float:
        return float(logsumexp([self.logs[k] for k in LHS_FIELDS]))

    def log_ratio(self, K: float, phi_max: float) -> float:
        """log of LHS / (source + e^{K s phi_max} boundary + interaction)."""
        den = [self.logs["rhs_source"], K * self.weight.s * phi_max + self.logs["rhs_boundary_data"],
               self.logs["rhs_interaction"]]
        lhs = self.log_lhs
        d = float(logsumexp(den))
        if lhs == -np.inf:
            return -np.inf
        return lhs - d


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def _report_from_terms(st: SpatialTerms, w: CarlemanWeight, variant: str) -> CarlemanReport:
    t = st.times
    dt = t[1] - t[0]
    tw = np.full(len(t), dt)
    tw[0] = tw[-1] = 0.5 * dt
    phi = w.phi(t)
    e = 2.0 * w.s * phi
    lw = _log(tw) + e
    s, lam = w.s, w.lam

    def term(g, pref):
        return float(logsumexp(lw + _log(g) + _log(pref)))

    logs = {
        "lhs_dt": term(st.dt2, 1.0 / (s * phi)),
        "lhs_diff": term(st.diff2, 1.0 / (s * phi)),
        "lhs_l2": term(st.u2, s * lam**2 * phi),
        "lhs_semi": term(st.semi2, lam * np.ones_like(phi)),
        "rhs_source": term(st.L2, np.ones_like(phi)),
    }
    if variant == "forward":
        logs["rhs_boundary_data"] = float(_log(st.h_first + st.h_last))
        logs["rhs_interaction"] = -np.inf
    else:
        logs["rhs_boundary_data"] = float(_log(st.h_first))
        logs["rhs_interaction"] = term(st.inter, s * lam * np.ones_like(phi))
    with np.errstate(over="ignore"):
        vals = {k: float(np.exp(v)) for k, v in logs.items()}
    return CarlemanReport(vals["lhs_dt"], vals["lhs_diff"], vals["lhs_l2"], vals["lhs_semi"],
                          vals["rhs_source"], vals["rhs_boundary_data"], vals["rhs_interaction"],
                          variant, w, logs)


def _check_variant(traj: Trajectory, variant: str, tol: float):
    U = traj.values
    scale = max(float(np.max(np.abs(U))), 1e-300)
    if variant == "forward":
        if traj.kind == "dirichlet":
            bad = float(np.max(np.abs(U[:, traj.mesh.interaction_nodes]), initial=0.0))
            if bad > tol * scale:
                raise ValueError(f"forward variant needs u = 0 on Omega_I (max {bad:.3e})")
        elif traj.kind != "neumann":
            raise ValueError("forward variant needs a Dirichlet or Neumann trajectory")
    elif variant == "terminal":
        bad = float(np.max(np.abs(U[-1])))
        if bad > tol * scale:
            raise ValueError(f"terminal variant needs u(T) = 0 (max {bad:.3e})")
    else:
        raise ValueError(f"unknown variant {variant!r}")


def carleman_terms(traj: Trajectory, f, w: CarlemanWeight, variant: str, spec: KernelSpec,
                   mesh: Mesh | None = None, opts: QuadratureOptions | None = None,
                   tol: float = 1e-8) -> CarlemanReport:
    """Evaluate every term of the forward (phi = e^{lambda t}) or terminal
    (phi = e^{-lambda t}) Carleman inequality on a trajectory."""
    _check_variant(traj, variant, tol)
    expected = 1 if variant == "forward" else -1
    if w.sign != expected:
        raise ValueError(f"{variant} variant uses sign {expected:+d}")
    st = spatial_terms(traj, f, spec, mesh, opts)
    return _report_from_terms(st, w, variant)


# ---------------------------------------------------------------------------
# certification


@dataclass
class Certificate:
    """Outcome of an empirical certification over a (lambda, s) grid.

    ``log_ratios`` has shape (n_lambda, n_s, n_members). ``C_grid[i, j]`` is the
    maximum ratio over members at (lambda_i, s_j); ``C`` is the supremum over
    the admissible region {lambda >= lambda0, s >= s0}.
    """

    certified: bool
    lam0: float | None
    s0: float | None
    C: float
    K: float
    lambda_grid: np.ndarray
    s_grid: np.ndarray
    log_ratios: np.ndarray
    reports: list
    message: str = ""

    @property
    def C_grid(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(np.max(self.log_ratios, axis=2))

    def stability(self, lam: float, s_values) -> float:
        """max / min of C(lam, s) over the given s values."""
        i = int(np.nonzero(np.isclose(self.lambda_grid, lam))[0][0])
        js = [int(np.nonzero(np.isclose(self.s_grid, s))[0][0]) for s in s_values]
        c = self.C_grid[i, js]
        return float(np.max(c) / np.min(c)) if np.min(c) > 0 else float("inf")

    def rows(self):
        out = []
        for i, lam in enumerate(self.lambda_grid):
            for j, s in enumerate(self.s_grid):
                for m, rep in enumerate(self.reports[i][j]):
                    r = dict(lam=float(lam), s=float(s), member=m)
                    for k in LHS_FIELDS + ("rhs_source", "rhs_boundary_data", "rhs_interaction"):
                        r[k] = getattr(rep, k)
                    with np.errstate(over="ignore"):
                        r["ratio"] = float(np.exp(self.log_ratios[i, j, m]))
                    out.append(r)
        return out

    def summary(self) -> dict:
        return dict(certified=self.certified, lambda0=self.lam0, s0=self.s0, C=self.C, K=self.K,
                    message=self.message)


def _phi_max(lam, variant, T):
    return float(np.exp(lam * T)) if variant == "forward" else 1.0


def certify(suite, lambda_grid, s_grid, variant: str, spec: KernelSpec,
            mesh: Mesh | None = None, opts: QuadratureOptions | None = None,
            stability_factor: float = 2.0) -> Certificate:
    """Fit K and find the smallest (lambda0, s0) with a stable constant C.

    Parameters
    ----------
    suite : list of (Trajectory, source)
    lambda_grid, s_grid : increasing sequences

    Notes
    -----
    The growth constant of the boundary term is modelled as
    C(lambda) = K max_t phi(t); K minimizes the squared deviation of log R
    from its s-average, summed over every (lambda, member).
    (lambda0, s0) is the first grid point, scanning lambda then s, at which
    C(lambda0, s) varies by at most ``stability_factor`` over s >= s0.
    """
    lam_g = np.asarray(lambda_grid, dtype=float)
    s_g = np.asarray(s_grid, dtype=float)
    if len(suite) == 0:
        raise ValueError("certification suite is empty")
    if np.any(np.diff(lam_g) <= 0) or np.any(np.diff(s_g) <= 0):
        raise ValueError("grids must be strictly increasing")
    sign = 1 if variant == "forward" else -1
    terms = []
    for traj, f in suite:
        _check_variant(traj, variant, 1e-8)
        terms.append(spatial_terms(traj, f, spec, mesh or traj.mesh, opts))
    T = float(suite[0][0].grid.T)
    reports = [[[_report_from_terms(st, CarlemanWeight(lam, s, sign), variant) for st in terms]
                for s in s_g] for lam in lam_g]
    nl, ns, nm = len(lam_g), len(s_g), len(terms)
    pm = np.array([_phi_max(lam, variant, T) for lam in lam_g])

    def log_ratios(K):
        return np.array([[[reports[i][j][m].log_ratio(K, pm[i]) for m in range(nm)]
                          for j in range(ns)] for i in range(nl)])

    def spread(K):
        # least squares on log-ratios: one free level per (lambda, member)
        L = log_ratios(K)
        ok = np.all(np.isfinite(L), axis=1)
        if not ok.any():
            return 0.0
        dev = L - np.where(np.isfinite(L), L, 0.0).mean(axis=1, keepdims=True)
        return float(np.sum(np.where(ok[:, None, :], dev, 0.0) ** 2))

    K = float(minimize_scalar(spread, bounds=(0.0, 50.0), method="bounded",
                              options=dict(xatol=1e-8)).x) if ns > 1 else 0.0
    LR = log_ratios(K)
    if np.all(LR == -np.inf):
        return Certificate(True, float(lam_g[0]), float(s_g[0]), 0.0, K, lam_g, s_g, LR, reports,
                           "all ratios vanish")
    Cg = np.max(LR, axis=2)
    for i in range(nl):
        for j in range(ns):
            tail = Cg[i, j:]
            region = Cg[i:, j:]
            if not np.all(np.isfinite(region[region > -np.inf])):
                continue
            if np.max(tail) - np.min(tail) <= np.log(stability_factor) + 1e-12:
                C = float(np.exp(np.max(region)))
                if np.isfinite(C):
                    return Certificate(True, float(lam_g[i]), float(s_g[j]), C, K, lam_g, s_g,
                                       LR, reports, "certified")
    return Certificate(False, None, None, float("inf"), K, lam_g, s_g, LR, reports,
                       "no admissible region with a stable constant")
