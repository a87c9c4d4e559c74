"""Simplicial meshes of Omega plus its interaction collar, and pair rules."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .quadrature import (QuadratureOptions, barycentric, gauss01, interval_pair_points,
                         triangle_pair_points, triangle_rule, _subdivided_triangle_rule)

__all__ = [
    "INTERIOR",
    "INTERACTION",
    "Mesh",
    "PairRule",
    "build_interval_mesh",
    "build_box_mesh",
    "pair_rule",
    "save_mesh_csv",
    "load_mesh_csv",
]

INTERIOR = 0
INTERACTION = 1
_REGION_NAMES = {INTERIOR: "interior", INTERACTION: "interaction"}


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 simplicial mesh of Omega~ = Omega ∪ Omega_I.

    Attributes
    ----------
    nodes : ndarray, shape (N, n)
    elements : ndarray, shape (E, n+1)
        Node indices of each simplex.
    region : ndarray, shape (E,)
        ``INTERIOR`` (0) or ``INTERACTION`` (1) per element.
    omega : tuple of ndarray
        Lower and upper corners of the box Omega.
    horizon : float or None
        Horizon the collar was built for.
    """

    nodes: np.ndarray
    elements: np.ndarray
    region: np.ndarray
    omega: tuple
    horizon: float | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        region = np.ascontiguousarray(self.region, dtype=np.int8)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "region", region)
        n = nodes.shape[1]
        if elements.shape[1] != n + 1:
            raise ValueError("elements must be simplices matching the node dimension")
        if region.shape != (elements.shape[0],):
            raise ValueError("one region tag per element is required")
        if not np.all(np.isin(region, (INTERIOR, INTERACTION))):
            raise ValueError("region tags must be interior (0) or interaction (1)")
        if np.any(self.element_measures <= 0):
            raise ValueError("degenerate element with non-positive measure")
        for a in (nodes, elements, region):
            a.setflags(write=False)

    # -- sizes -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def element_measures(self) -> np.ndarray:
        V = self.nodes[self.elements]
        if self.dim == 1:
            return np.abs(V[:, 1, 0] - V[:, 0, 0])
        e1, e2 = V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def element_diameters(self) -> np.ndarray:
        V = self.nodes[self.elements]
        d = np.sqrt(np.sum((V[:, :, None, :] - V[:, None, :, :]) ** 2, axis=3))
        return d.max(axis=(1, 2))

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return float(self.element_diameters.max())

    @cached_property
    def diameter(self) -> float:
        """Diameter of the meshed region Omega~."""
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    # -- regions -----------------------------------------------------------
    @cached_property
    def node_is_interaction(self) -> np.ndarray:
        """True for nodes of interaction elements, including those on the boundary of Omega.

        Zeroing these coefficients makes a P1 field vanish on the closure of
        Omega_I, which is how the Dirichlet volume constraint is imposed.
        """
        out = np.zeros(self.n_nodes, dtype=bool)
        out[self.elements[self.region == INTERACTION].ravel()] = True
        out.setflags(write=False)
        return out

    @property
    def interaction_nodes(self) -> np.ndarray:
        return np.nonzero(self.node_is_interaction)[0]

    @property
    def free_nodes(self) -> np.ndarray:
        """Nodes that carry a degree of freedom under the Dirichlet constraint."""
        return np.nonzero(~self.node_is_interaction)[0]

    @property
    def omega_support_nodes(self) -> np.ndarray:
        """Nodes whose hat function is supported in the closure of Omega."""
        return self.free_nodes

    @property
    def total_measure(self) -> float:
        return float(self.element_measures.sum())

    @property
    def omega_measure(self) -> float:
        return float(self.element_measures[self.region == INTERIOR].sum())

    # -- finite element matrices -------------------------------------------
    def mass_matrix(self, region: str | None = None) -> sp.csr_matrix:
        """Consistent P1 mass matrix over Omega~ (default), "interior" or "interaction"."""
        key = "_mass_" + str(region)
        cache = self.__dict__.setdefault("_cache", {})
        if key in cache:
            return cache[key]
        mask = np.ones(self.n_elements, dtype=bool)
        if region == "interior":
            mask = self.region == INTERIOR
        elif region == "interaction":
            mask = self.region == INTERACTION
        elif region is not None:
            raise ValueError(f"unknown region {region!r}")
        n1 = self.dim + 1
        local = (np.ones((n1, n1)) + np.eye(n1)) / ((n1) * (n1 + 1))
        el = self.elements[mask]
        vals = self.element_measures[mask][:, None, None] * local[None]
        rows = np.repeat(el, n1, axis=1)
        cols = np.tile(el, (1, n1))
        M = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(self.n_nodes, self.n_nodes)).tocsr()
        cache[key] = M
        return M

    def lumped_mass(self) -> np.ndarray:
        return np.asarray(self.mass_matrix().sum(axis=1)).ravel()

    # -- point location ----------------------------------------------------
    @cached_property
    def _locator(self):
        if self.dim == 1:
            x = self.nodes[:, 0]
            lo = np.minimum(x[self.elements[:, 0]], x[self.elements[:, 1]])
            order = np.argsort(lo)
            return lo[order], order
        cen = self.nodes[self.elements].mean(axis=1)
        return cKDTree(cen), None

    def locate(self, points):
        """Element index and barycentric coordinates of each point.

        Raises
        ------
        ValueError
            If a point lies outside the meshed region.
        """
        from .kernel import as_points

        p = as_points(points, self.dim)
        V = self.nodes[self.elements]
        tol = 1e-12 * max(self.diameter, 1.0)
        if self.dim == 1:
            lo_sorted, order = self._locator
            pos = np.clip(np.searchsorted(lo_sorted, p[:, 0], side="right") - 1,
                          0, len(order) - 1)
            k = order[pos]
            a, b = V[k, 0, 0], V[k, 1, 0]
            t = (p[:, 0] - a) / (b - a)
            lam = np.column_stack([1.0 - t, t])
            bad = (lam < -tol / self.h).any(axis=1)
            if np.any(bad):
                raise ValueError(f"point(s) outside the mesh, e.g. {p[bad][0]}")
            return k, np.clip(lam, 0.0, 1.0)
        tree, _ = self._locator
        kq = min(12, self.n_elements)
        _, cand = tree.query(p, k=kq)
        cand = np.atleast_2d(cand)
        T = V[cand]  # (m, kq, 3, 2)
        e1, e2 = T[:, :, 1] - T[:, :, 0], T[:, :, 2] - T[:, :, 0]
        det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
        d = p[:, None, :] - T[:, :, 0]
        l1 = (d[..., 0] * e2[..., 1] - d[..., 1] * e2[..., 0]) / det
        l2 = (e1[..., 0] * d[..., 1] - e1[..., 1] * d[..., 0]) / det
        lam = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
        score = lam.min(axis=-1)
        j = np.argmax(score, axis=1)
        rows = np.arange(p.shape[0])
        if np.any(score[rows, j] < -1e-9):
            bad = score[rows, j] < -1e-9
            raise ValueError(f"point(s) outside the mesh, e.g. {p[bad][0]}")
        return cand[rows, j], np.clip(lam[rows, j], 0.0, 1.0)

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate the P1 interpolant of nodal ``values`` at ``points``."""
        values = np.asarray(values, dtype=float)
        k, lam = self.locate(points)
        return np.einsum("mi,mi->m", lam, values[self.elements[k]])

    def region_of(self, points) -> np.ndarray:
        """Region tag of the element containing each point."""
        k, _ = self.locate(points)
        return self.region[k]


@dataclass(frozen=True)
class PairRule:
    """Quadrature points (x, y) with weights for an element pair."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def points(self):
        return list(zip(self.x, self.y, self.weights))


def _collar_cells(horizon, h, collar):
    width = horizon if collar is None else collar
    if not (np.isfinite(width) and width > 0):
        raise ValueError("collar width must be finite and positive")
    return int(math.ceil(width / h - 1e-9))


def build_interval_mesh(a: float, b: float, elements: int, horizon: float,
                        collar: float | None = None) -> Mesh:
    """Uniform mesh of (a, b) plus a collar of ceil(width/h) cells on each side.

    Parameters
    ----------
    collar : float, optional
        Collar width; defaults to the horizon.
    """
    if elements < 2:
        raise ValueError(f"need at least 2 elements, got {elements}")
    if not b > a:
        raise ValueError("need a < b")
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be finite and positive, got {horizon}")
    h = (b - a) / elements
    c = _collar_cells(horizon, h, collar)
    k = np.arange(-c, elements + c + 1)
    x = a + h * k
    x[c] = a
    x[c + elements] = b
    el = np.column_stack([np.arange(len(x) - 1), np.arange(1, len(x))])
    region = np.where((k[:-1] >= 0) & (k[:-1] < elements), INTERIOR, INTERACTION)
    return Mesh(x[:, None], el, region, (np.array([a]), np.array([b])), float(horizon))


def build_box_mesh(lx: float, ly: float, nx: int, ny: int, horizon: float,
                   collar: float | None = None) -> Mesh:
    """Structured triangulation of (0, lx) x (0, ly) plus a collar ring.

    Each cell is split into two triangles. The collar has ceil(width/h)
    cells in each direction, ``width`` defaulting to the horizon.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    if not (lx > 0 and ly > 0):
        raise ValueError("box side lengths must be positive")
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be finite and positive, got {horizon}")
    hx, hy = lx / nx, ly / ny
    cx, cy = _collar_cells(horizon, hx, collar), _collar_cells(horizon, hy, collar)
    ix = np.arange(-cx, nx + cx + 1)
    iy = np.arange(-cy, ny + cy + 1)
    X, Y = np.meshgrid(ix * hx, iy * hy, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    mx, my = len(ix), len(iy)

    def nid(i, j):
        return i * my + j

    I, J = np.meshgrid(np.arange(mx - 1), np.arange(my - 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    p00, p10, p01, p11 = nid(I, J), nid(I + 1, J), nid(I, J + 1), nid(I + 1, J + 1)
    el = np.vstack([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    inside = ((ix[I] >= 0) & (ix[I] < nx) & (iy[J] >= 0) & (iy[J] < ny))
    region = np.where(np.concatenate([inside, inside]), INTERIOR, INTERACTION)
    return Mesh(nodes, el, region, (np.zeros(2), np.array([lx, ly])), float(horizon))


def _as_simplex(K, dim):
    K = np.asarray(K, dtype=float)
    if dim == 1:
        return K.reshape(2)
    return K.reshape(3, 2)


def pair_rule(K, K2, spec, order: int = 4, levels: int = 5, near_factor: float = 1.0) -> PairRule:
    """Quadrature rule for integrating over the element pair K x K2.

    ``K`` and ``K2`` are vertex arrays: two endpoints in 1-D, three vertices
    in 2-D. Far, well separated pairs get the tensor-product Gauss rule;
    touching pairs get the graded relative-coordinate rule.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    dim = spec.dim
    A, B = _as_simplex(K, dim), _as_simplex(K2, dim)
    opts = QuadratureOptions(order, levels, near_factor=near_factor)
    if dim == 1:
        a1, b1 = sorted(A)
        a2, b2 = sorted(B)
        if (a1, b1) == (a2, b2):
            kind = "identical"
        elif b1 == a2 or b2 == a1:
            kind = "adjacent"
        else:
            kind = "far"
        dist = max(a2 - b1, a1 - b2, 0.0)
        if kind == "far" and dist >= near_factor * max(b1 - a1, b2 - a2):
            s, w = gauss01(order)
            x = np.repeat(a1 + (b1 - a1) * s, order)
            y = np.tile(a2 + (b2 - a2) * s, order)
            ww = np.outer(w * (b1 - a1), w * (b2 - a2)).ravel()
            return PairRule(x[:, None], y[:, None], ww, kind)

        def exp_at(x0):
            return 1.0 - 2.0 * float(spec.order(np.array([[x0]]))[0])

        x, y, w = interval_pair_points((a1, b1), (a2, b2), opts, spec.horizon,
                                       exp_at if kind != "far" else None,
                                       half=(kind == "identical"))
        if kind == "identical":
            x, y, w = np.concatenate([x, y]), np.concatenate([y, x]), np.concatenate([w, w])
        return PairRule(x[:, None], y[:, None], w, kind)

    shared = sum(any(np.allclose(p, q) for q in B) for p in A)
    kind = "identical" if shared == 3 else ("adjacent" if shared > 0 else "far")

    def area(T):
        u, v = T[1] - T[0], T[2] - T[0]
        return 0.5 * abs(u[0] * v[1] - u[1] * v[0])

    if kind == "far":
        diam = max(np.ptp(A, axis=0).max(), np.ptp(B, axis=0).max())
        dist = min(np.linalg.norm(p - q) for p in A for q in B)
        lam, w = triangle_rule(order)
        if dist < near_factor * diam:
            lam, w = _subdivided_triangle_rule(order, 1)
        Q = len(w)
        x = np.repeat(lam @ A, Q, axis=0)
        y = np.tile(lam @ B, (Q, 1))
        ww = np.outer(w * area(A), w * area(B)).ravel()
        return PairRule(x, y, ww, kind)
    pts = np.vstack([A, B])
    bmax = float(np.max(spec.order(pts)))
    e = 1.0 - 2.0 * bmax + (3 - shared)
    lx, ly, w = triangle_pair_points(A, B, opts, spec.horizon, e, half=(kind == "identical"))
    x, y = lx @ A, ly @ B
    if kind == "identical":
        x, y, w = np.vstack([x, y]), np.vstack([y, x]), np.concatenate([w, w])
    return PairRule(x, y, w, kind)


# ---------------------------------------------------------------------------
# CSV persistence


def _fmt(v) -> str:
    return format(float(v), ".17g")


def save_mesh_csv(mesh: Mesh, directory) -> tuple:
    """Write ``nodes.csv`` (id,x[,y]) and ``elements.csv`` (id,n0..,region)."""
    os.makedirs(directory, exist_ok=True)
    coords = ["x", "y"][: mesh.dim]
    pn = os.path.join(directory, "nodes.csv")
    pe = os.path.join(directory, "elements.csv")
    with open(pn, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + coords)
        for i, p in enumerate(mesh.nodes):
            w.writerow([i] + [_fmt(v) for v in p])
    with open(pe, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"n{k}" for k in range(mesh.dim + 1)] + ["region"])
        for i, (e, r) in enumerate(zip(mesh.elements, mesh.region)):
            w.writerow([i] + [int(v) for v in e] + [_REGION_NAMES[int(r)]])
    return pn, pe


def load_mesh_csv(directory, horizon: float | None = None) -> Mesh:
    """Read a mesh written by :func:`save_mesh_csv`."""
    with open(os.path.join(directory, "nodes.csv"), encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    nodes = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    with open(os.path.join(directory, "elements.csv"), encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = {v: k for k, v in _REGION_NAMES.items()}
    el = np.array([[int(v) for v in r[1:-1]] for r in rows[1:]])
    region = np.array([names[r[-1]] for r in rows[1:]])
    V = nodes[el[region == INTERIOR]]
    omega = (V.reshape(-1, nodes.shape[1]).min(axis=0), V.reshape(-1, nodes.shape[1]).max(axis=0))
    return Mesh(nodes, el, region, omega, horizon)
