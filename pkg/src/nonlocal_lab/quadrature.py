"""Element-pair quadrature for integrands singular on the diagonal x = y.

Pairs of elements (K, K') are integrated in relative coordinates z = y - x.
For fixed z the inner integral runs over K ∩ (K' - z), whose geometry is
piecewise polynomial in z; the outer z-integral is split at the kinks of that
dependence and at the horizon, and the pieces that touch z = 0 are integrated
with a radially graded rule whose innermost piece uses the substitution
r = d s^(1/(e+1)) matched to the expected radial exponent e.

Rules are stored in barycentric form so that one rule serves every
translated copy of a configuration.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "QuadratureOptions",
    "gauss01",
    "triangle_rule",
    "graded_rule",
    "interval_pair_points",
    "triangle_pair_points",
    "PairBlock",
    "PairQuadrature",
]


@dataclass(frozen=True)
class QuadratureOptions:
    """Orders and grading of the pair rules.

    Parameters
    ----------
    order : int, optional
        Gauss points per direction. Defaults to 8 in 1-D and 3 in 2-D.
    levels : int, optional
        Number of geometric grading levels toward the singular point
        (``L_sub``). Defaults to 5 in 1-D and 4 in 2-D.
    ratio : float
        Grading ratio between consecutive levels.
    near_factor : float
        Far pairs closer than ``near_factor * diameter`` get refined rules.
    """

    order: int | None = None
    levels: int | None = None
    ratio: float = 0.5
    near_factor: float = 1.0

    def resolved(self, dim: int) -> "QuadratureOptions":
        order = self.order if self.order is not None else (8 if dim == 1 else 3)
        levels = self.levels if self.levels is not None else (5 if dim == 1 else 4)
        if order < 1:
            raise ValueError("quadrature order must be >= 1")
        if levels < 0:
            raise ValueError("levels must be >= 0")
        return QuadratureOptions(order, levels, self.ratio, self.near_factor)


# ---------------------------------------------------------------------------
# elementary rules


@functools.lru_cache(maxsize=None)
def gauss01(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def triangle_rule(n: int):
    """Collapsed Gauss rule on the reference triangle (0,0), (1,0), (0,1).

    Returns barycentric coordinates ``(Q, 3)`` and weights summing to 1.
    """
    s, ws = gauss01(n)
    u = np.repeat(s, n)
    v = np.tile(s, n) * (1.0 - u)
    w = np.repeat(ws, n) * np.tile(ws, n) * (1.0 - u) * 2.0
    lam = np.column_stack([1.0 - u - v, u, v])
    return lam, w


@functools.lru_cache(maxsize=4096)
def _graded_rule_cached(n, levels, ratio, exponent):
    s, ws = gauss01(n)
    r, w = [], []
    hi = 1.0
    for _ in range(levels):
        lo = hi * ratio
        r.append(lo + (hi - lo) * s)
        w.append((hi - lo) * ws)
        hi = lo
    # innermost piece [0, hi]: nodes t = s^kappa, weights interpolatory on
    # span{t^e, 1, t^(e+1), t, ...} so that constants stay exact
    kappa = 1.0 / (1.0 + exponent)
    t = s**kappa
    wf = kappa * t / s * ws
    e = exponent
    if abs(e - round(e)) < 1e-9 and e > -0.5:
        # integer exponent: the integrand is smooth, plain Gauss is exact
        t, wf = s, ws
    elif abs(e - round(e)) > 1e-3:
        pw = [e + k // 2 if k % 2 == 0 else k // 2 for k in range(n)]
        mom = np.array([1.0 / (q + 1.0) for q in pw])
        for tc in (t, s ** (2.0 * kappa), s**2, s):
            w_int = np.linalg.solve(np.array([tc**q for q in pw]), mom)
            if np.all(w_int > 0):
                t, wf = tc, w_int
                break
    r.append(hi * t)
    w.append(hi * wf)
    return np.concatenate(r), np.concatenate(w)


def graded_rule(n: int, levels: int, ratio: float, exponent: float):
    """Rule on [0, 1] for F(r) ~ r^exponent * smooth near r = 0.

    The interval is split geometrically toward 0; the innermost piece uses
    r = d s^kappa with kappa = 1/(exponent+1), which makes the transformed
    integrand smooth. Its weights are adjusted so that the rule stays exact
    for constants.
    """
    if exponent <= -1.0:
        raise ValueError(f"radial exponent {exponent} is not integrable")
    return _graded_rule_cached(int(n), int(levels), float(ratio), round(float(exponent), 12))


def _geometric_split(near, far):
    """Split [near, far] (|near| < |far|, same sign) so each piece is no longer
    than its distance to 0."""
    sign = 1.0 if far > 0 else -1.0
    d0, d1 = abs(near), abs(far)
    cuts = [d0]
    while cuts[-1] < d1:
        nxt = 2.0 * cuts[-1] if cuts[-1] > 0 else d1
        cuts.append(min(nxt, d1))
        if cuts[-1] >= d1:
            break
    return [(sign * a, sign * b) for a, b in zip(cuts[:-1], cuts[1:])]


# ---------------------------------------------------------------------------
# 1-D pair rules


def interval_pair_points(K, L, opts: QuadratureOptions, horizon: float,
                         exponent_at=None, half: bool = False):
    """Quadrature points for the pair of intervals K = [a, b], L = [c, d].

    Parameters
    ----------
    exponent_at : callable, optional
        Maps a point x0 on the diagonal to the radial exponent of the
        integrand, ``1 - 2 beta(x0)`` for the stiffness integrand. Required
        when the pair touches.
    half : bool
        For identical pairs, only the part with y > x is returned.

    Returns
    -------
    x, y, w : ndarray
        Points and positive weights.
    """
    a, b = float(K[0]), float(K[1])
    c, d = float(L[0]), float(L[1])
    n, levels, ratio = opts.order, opts.levels, opts.ratio
    zlo, zhi = c - b, d - a
    if half:
        zlo = 0.0
    bps = {zlo, zhi}
    for p in (c - a, d - b, 0.0, -horizon, horizon):
        if zlo < p < zhi:
            bps.add(p)
    bps = sorted(bps)
    s, ws = gauss01(n)
    xs, ys, wts = [], [], []

    def inner(z):
        lo = np.maximum(a, c - z)
        hi = np.minimum(b, d - z)
        return lo, np.maximum(hi - lo, 0.0)

    for z0, z1 in zip(bps[:-1], bps[1:]):
        if z1 - z0 <= 1e-15 * (zhi - zlo):
            continue
        zm = 0.5 * (z0 + z1)
        if abs(zm) > horizon:
            continue
        if z0 == 0.0 or z1 == 0.0:
            sign = 1.0 if z1 > 0 else -1.0
            R = abs(z1 if z1 != 0.0 else z0)
            lo0, len0 = inner(0.0)
            touching = len0 <= 1e-14 * (b - a)
            for xi, wxi in zip(s, ws):
                x0 = lo0 + xi * len0
                e = exponent_at(x0) if exponent_at is not None else 0.0
                if touching:
                    e += 1.0
                r, wr = graded_rule(n, levels, ratio, e)
                z = sign * R * r
                lo, ln = inner(z)
                x = lo + xi * ln
                xs.append(x)
                ys.append(x + z)
                wts.append(wxi * ln * R * wr)
        else:
            near, far = (z0, z1) if abs(z0) < abs(z1) else (z1, z0)
            pieces = [(z0, z1)]
            if abs(near) < abs(far - near):
                pieces = _geometric_split(near, far)
            for p0, p1 in pieces:
                lo_, hi_ = min(p0, p1), max(p0, p1)
                z = lo_ + (hi_ - lo_) * s
                wz = (hi_ - lo_) * ws
                lo, ln = inner(z)
                x = lo[:, None] + ln[:, None] * s[None, :]
                xs.append(x.ravel())
                ys.append((x + z[:, None]).ravel())
                wts.append((wz[:, None] * ln[:, None] * ws[None, :]).ravel())
    if not xs:
        return np.empty(0), np.empty(0), np.empty(0)
    x, y, w = np.concatenate(xs), np.concatenate(ys), np.concatenate(wts)
    keep = w > 0
    return x[keep], y[keep], w[keep]


# ---------------------------------------------------------------------------
# 2-D helpers


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _ccw(tri):
    tri = np.asarray(tri, dtype=float)
    if _cross(tri[1] - tri[0], tri[2] - tri[0]) < 0:
        return tri[[0, 2, 1]]
    return tri


def clip_convex(poly, clip):
    """Sutherland-Hodgman intersection of convex ccw polygons."""
    out = [np.asarray(p, float) for p in poly]
    m = len(clip)
    for i in range(m):
        if not out:
            break
        p, q = clip[i], clip[(i + 1) % m]
        e = q - p
        inp = out
        out = []
        k = len(inp)
        for j in range(k):
            cur, prv = inp[j], inp[j - 1]
            ic = e[0] * (cur[1] - p[1]) - e[1] * (cur[0] - p[0])
            ip = e[0] * (prv[1] - p[1]) - e[1] * (prv[0] - p[0])
            if ic >= 0:
                if ip < 0:
                    t = ip / (ip - ic)
                    out.append(prv + t * (cur - prv))
                out.append(cur)
            elif ip >= 0:
                t = ip / (ip - ic)
                out.append(prv + t * (cur - prv))
    return out


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    return 0.5 * float(np.sum(_cross(p, np.roll(p, -1, axis=0))))


def _fan_points(poly, lam, w):
    """Map a reference-triangle rule onto the fan triangulation of ``poly``."""
    p = np.asarray(poly)
    pts, wts = [], []
    for i in range(1, len(p) - 1):
        v0, v1, v2 = p[0], p[i], p[i + 1]
        area = 0.5 * _cross(v1 - v0, v2 - v0)
        if area <= 0:
            continue
        pts.append(lam[:, :1] * v0 + lam[:, 1:2] * v1 + lam[:, 2:3] * v2)
        wts.append(w * area)
    if not pts:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(pts), np.concatenate(wts)


def barycentric(tri, pts):
    """Barycentric coordinates of ``pts`` (m, 2) in triangle ``tri`` (3, 2)."""
    tri = np.asarray(tri, float)
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    lam12 = np.linalg.solve(T, (np.asarray(pts) - tri[0]).T).T
    return np.column_stack([1.0 - lam12.sum(axis=1), lam12])


def _arrangement_faces(K, L, scale):
    """Faces of the arrangement of kink lines of |K ∩ (L - z)| inside K' - K."""
    import shapely
    from shapely.geometry import LineString, MultiPoint, Polygon

    P = MultiPoint((L[None, :, :] - K[:, None, :]).reshape(-1, 2)).convex_hull
    big = 4.0 * scale
    lines = []
    for tri_a, tri_b, sgn in ((K, L, -1.0), (L, K, 1.0)):
        # lines through (vertex of tri_b) - (vertex of tri_a) along edges of tri_a
        for i in range(3):
            e = tri_a[(i + 1) % 3] - tri_a[i]
            e = e / np.linalg.norm(e)
            for v in tri_b:
                p0 = (v - tri_a[i]) if sgn < 0 else (tri_a[i] - v)
                lines.append(LineString([p0 - big * e, p0 + big * e]))
    lines.append(P.exterior)
    merged = shapely.unary_union(lines)
    faces = []
    for f in shapely.get_parts(shapely.polygonize(shapely.get_parts(merged))):
        if f.area <= 1e-14 * scale**2:
            continue
        if not P.buffer(1e-12 * scale).contains(f.representative_point()):
            continue
        f = shapely.geometry.polygon.orient(Polygon(f.exterior), 1.0)
        faces.append(np.asarray(f.exterior.coords)[:-1])
    return faces


def triangle_pair_points(K, L, opts: QuadratureOptions, horizon: float,
                         exponent: float = 0.0, half: bool = False):
    """Quadrature points for a touching (or overlapping) triangle pair.

    ``exponent`` is the radial exponent of the inner-integrated integrand at
    z = 0. Returns barycentric coordinates of x in ``K`` and y in ``L`` with
    absolute weights.
    """
    K = np.asarray(K, float)
    L = np.asarray(L, float)
    Kc, Lc = _ccw(K), _ccw(L)
    n, levels, ratio = opts.order, opts.levels, opts.ratio
    scale = max(np.ptp(np.vstack([K, L]), axis=0).max(), 1e-300)
    faces = _arrangement_faces(K, L, scale)
    d0 = K[1] - K[0]
    tlam, tw = triangle_rule(n)
    s, ws = gauss01(n)
    r_ref, wr_ref = graded_rule(n, levels, ratio, exponent)
    zs, wzs = [], []
    tol = 1e-10 * scale
    for f in faces:
        cen = f.mean(axis=0)
        if half and _cross(d0, cen) <= 0:
            continue
        rad = np.sqrt(np.sum(f**2, axis=1))
        if _dist_origin_polygon(f) > horizon:
            continue
        k0 = int(np.argmin(rad))
        if rad[k0] <= tol:
            f = np.roll(f, -k0, axis=0)
            for i in range(1, len(f) - 1):
                A, B = f[i], f[i + 1]
                det = _cross(A, B)
                if det <= 0:
                    continue
                D = A[None, :] + s[:, None] * (B - A)[None, :]
                rmax = np.minimum(1.0, horizon / np.sqrt(np.sum(D**2, axis=1)))
                rho = rmax[:, None] * r_ref[None, :]
                wt = (ws * rmax)[:, None] * wr_ref[None, :] * rho * det
                zs.append((rho[:, :, None] * D[:, None, :]).reshape(-1, 2))
                wzs.append(wt.ravel())
        else:
            pts, wts = _fan_points(f, tlam, tw)
            keep = np.sum(pts**2, axis=1) <= horizon**2
            zs.append(pts[keep])
            wzs.append(wts[keep])
    if not zs:
        return np.empty((0, 3)), np.empty((0, 3)), np.empty(0)
    Z = np.concatenate(zs)
    WZ = np.concatenate(wzs)
    ilam, iw = triangle_rule(max(2, n - 1))
    xs, ws_all = [], []
    zrep = []
    for z, wz in zip(Z, WZ):
        poly = clip_convex(list(Kc), Lc - z)
        if len(poly) < 3 or _polygon_area(poly) <= 1e-14 * scale**2:
            continue
        pts, wts = _fan_points(poly, ilam, iw)
        xs.append(pts)
        ws_all.append(wts * wz)
        zrep.append(np.broadcast_to(z, pts.shape))
    X = np.concatenate(xs)
    Y = X + np.concatenate(zrep)
    W = np.concatenate(ws_all)
    keep = W > 0
    return barycentric(K, X[keep]), barycentric(L, Y[keep]), W[keep]


def _dist_origin_polygon(f):
    """Distance from the origin to a convex ccw polygon (0 if inside)."""
    m = len(f)
    inside = True
    best = np.inf
    for i in range(m):
        p, q = f[i], f[(i + 1) % m]
        e = q - p
        if _cross(e, -p) < 0:
            inside = False
        t = np.clip(np.dot(-p, e) / np.dot(e, e), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p + t * e)))
    return 0.0 if inside else best


# ---------------------------------------------------------------------------
# block-structured pair quadrature over a mesh


@dataclass
class PairBlock:
    """Pairs (k1[b], k2[b]) sharing one barycentric rule.

    ``weights`` are normalized by |K||K'| so that a block serves pairs of
    equal element measures; ``lam_x`` and ``lam_y`` have shape (Q, n+1).
    """

    k1: np.ndarray
    k2: np.ndarray
    lam_x: np.ndarray
    lam_y: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def n_points(self) -> int:
        return len(self.k1) * len(self.weights)


class PairQuadrature:
    """All element-pair rules needed to integrate over Omega~ x Omega~.

    Unordered pairs are stored once. For an identical pair only the half
    {y after x} is covered, so every double integral is recovered as
    ``sum over rule points of F(x, y) + F(y, x)``.

    Parameters
    ----------
    mesh : Mesh
    beta : callable
        Order field used to choose the radial exponents of touching pairs.
    horizon : float
        Interaction radius; pairs farther apart are skipped.
    opts : QuadratureOptions
    """

    def __init__(self, mesh, beta, horizon: float, opts: QuadratureOptions | None = None):
        self.mesh = mesh
        self.horizon = float(horizon)
        self.opts = (opts or QuadratureOptions()).resolved(mesh.dim)
        self.beta = beta
        self.blocks: list[PairBlock] = []
        self._build()

    # -- enumeration -------------------------------------------------------
    def _candidate_pairs(self):
        mesh = self.mesh
        cen = mesh.nodes[mesh.elements].mean(axis=1)
        diam = mesh.element_diameters
        r = self.horizon + 2.0 * diam.max() + 1e-12
        tree = cKDTree(cen)
        pairs = tree.query_pairs(r, output_type="ndarray")
        E = mesh.n_elements
        same = np.column_stack([np.arange(E), np.arange(E)])
        if len(pairs) == 0:
            return same
        pairs = np.sort(pairs, axis=1)
        return np.vstack([same, pairs])

    def _build(self):
        mesh = self.mesh
        P = self._candidate_pairs()
        el = mesh.elements
        shared = (el[P[:, 0]][:, :, None] == el[P[:, 1]][:, None, :]).any(axis=2).sum(axis=1)
        if mesh.dim == 1:
            self._build_1d(P, shared)
        else:
            self._build_2d(P, shared)

    # -- 1-D ---------------------------------------------------------------
    def _build_1d(self, P, shared):
        mesh, opts, eps = self.mesh, self.opts, self.horizon
        x = mesh.nodes[:, 0]
        el = mesh.elements
        lo = np.minimum(x[el[:, 0]], x[el[:, 1]])
        hi = np.maximum(x[el[:, 0]], x[el[:, 1]])
        h = hi - lo
        k1, k2 = P[:, 0], P[:, 1]
        dist = np.maximum(lo[k2] - hi[k1], lo[k1] - hi[k2])
        far_ext = np.maximum(hi[k2] - lo[k1], hi[k1] - lo[k2])
        touching = (k1 == k2) | (shared > 0)
        dist = np.where(touching, 0.0, dist)
        active = dist < eps
        P, shared, dist, far_ext = P[active], shared[active], dist[active], far_ext[active]
        k1, k2 = P[:, 0], P[:, 1]
        touching = (k1 == k2) | (shared > 0)
        sep = dist >= opts.near_factor * np.maximum(h[k1], h[k2])
        tensor = (~touching) & sep & (far_ext <= eps)

        s, ws = gauss01(opts.order)
        if np.any(tensor):
            lx = np.column_stack([1.0 - s, s])
            lam_x = np.repeat(lx, len(s), axis=0)
            lam_y = np.tile(lx, (len(s), 1))
            w = np.outer(ws, ws).ravel()
            self.blocks.append(PairBlock(k1[tensor], k2[tensor], lam_x, lam_y, w, "far"))

        groups: dict = {}
        beta = self.beta

        def exp_at(x0):
            return 1.0 - 2.0 * float(beta(np.array([[x0]]))[0])

        for i in np.nonzero(~tensor)[0]:
            a1, b1 = lo[k1[i]], hi[k1[i]]
            a2, b2 = lo[k2[i]], hi[k2[i]]
            same = k1[i] == k2[i]
            kind = "identical" if same else ("adjacent" if touching[i] else "far")
            xq, yq, wq = interval_pair_points((a1, b1), (a2, b2), opts, eps,
                                              exp_at if touching[i] else None, half=same)
            if len(wq) == 0:
                continue
            # element orientation: barycentric weights refer to el[k, 0], el[k, 1]
            lx = _interval_bary(x[el[k1[i]]], xq)
            ly = _interval_bary(x[el[k2[i]]], yq)
            wn = wq / (h[k1[i]] * h[k2[i]])
            key = (kind, np.round(lx, 13).tobytes(), np.round(ly, 13).tobytes())
            g = groups.setdefault(key, [[], [], lx, ly, wn, kind])
            g[0].append(k1[i])
            g[1].append(k2[i])
        for k1s, k2s, lx, ly, wn, kind in groups.values():
            self.blocks.append(PairBlock(np.array(k1s), np.array(k2s), lx, ly, wn, kind))

    # -- 2-D ---------------------------------------------------------------
    def _build_2d(self, P, shared):
        mesh, opts, eps = self.mesh, self.opts, self.horizon
        X = mesh.nodes
        el = mesh.elements
        V = X[el]  # (E, 3, 2)
        meas = mesh.element_measures
        diam = mesh.element_diameters
        k1, k2 = P[:, 0], P[:, 1]
        touching = (k1 == k2) | (shared > 0)
        dmin = np.where(touching, 0.0, _triangle_distance(V[k1], V[k2]))
        dmax = np.sqrt(np.max(np.sum((V[k1][:, :, None, :] - V[k2][:, None, :, :]) ** 2,
                                     axis=3), axis=(1, 2)))
        active = dmin < eps
        k1, k2, touching, dmin, dmax, shared = (k1[active], k2[active], touching[active],
                                                dmin[active], dmax[active], shared[active])
        sep = dmin >= opts.near_factor * np.maximum(diam[k1], diam[k2])
        tensor = (~touching) & sep & (dmax <= eps)
        near = (~touching) & ~tensor

        lam, w = triangle_rule(opts.order)
        if np.any(tensor):
            Q = len(w)
            self.blocks.append(PairBlock(k1[tensor], k2[tensor], np.repeat(lam, Q, axis=0),
                                         np.tile(lam, (Q, 1)), np.outer(w, w).ravel(), "far"))
        if np.any(near):
            lam_s, w_s = _subdivided_triangle_rule(opts.order, 1)
            Q = len(w_s)
            self.blocks.append(PairBlock(k1[near], k2[near], np.repeat(lam_s, Q, axis=0),
                                         np.tile(lam_s, (Q, 1)), np.outer(w_s, w_s).ravel(),
                                         "near"))

        groups: dict = {}
        for i in np.nonzero(touching)[0]:
            a, b = k1[i], k2[i]
            Ka, Kb = V[a], V[b]
            ref = Ka[0]
            same = a == b
            kind = "identical" if same else "adjacent"
            # radial exponent: weakest decay of the inner measure times kernel
            pts = np.vstack([Ka, Kb, Ka.mean(axis=0, keepdims=True), Kb.mean(axis=0, keepdims=True)])
            bmax = float(np.max(self.beta(pts)))
            e = 1.0 - 2.0 * bmax + (3 - int(shared[i]))
            e = math.floor(e / 0.05) * 0.05
            key = (kind, np.round((Ka - ref) / diam[a], 9).tobytes(),
                   np.round((Kb - ref) / diam[a], 9).tobytes(), round(e, 6),
                   round(eps / diam[a], 9))
            g = groups.get(key)
            if g is None:
                lx, ly, wq = triangle_pair_points(Ka, Kb, opts, eps, e, half=same)
                g = groups[key] = [[], [], lx, ly, wq / (meas[a] * meas[b]), kind]
            g[0].append(a)
            g[1].append(b)
        for k1s, k2s, lx, ly, wn, kind in groups.values():
            self.blocks.append(PairBlock(np.array(k1s), np.array(k2s), lx, ly, wn, kind))

    # -- evaluation --------------------------------------------------------
    def iter_points(self, max_points: int = 400_000):
        """Yield chunks ``(block, idx, X, Y, W)`` of physical points.

        ``X`` and ``Y`` have shape (B, Q, n) and ``W`` shape (B, Q), where
        ``idx`` selects the pairs of ``block`` in the chunk.
        """
        mesh = self.mesh
        V = mesh.nodes[mesh.elements]
        meas = mesh.element_measures
        for blk in self.blocks:
            Q = len(blk.weights)
            step = max(1, max_points // max(Q, 1))
            for start in range(0, len(blk.k1), step):
                idx = np.arange(start, min(start + step, len(blk.k1)))
                a, b = blk.k1[idx], blk.k2[idx]
                Xp = np.einsum("qi,bid->bqd", blk.lam_x, V[a])
                Yp = np.einsum("qi,bid->bqd", blk.lam_y, V[b])
                W = blk.weights[None, :] * (meas[a] * meas[b])[:, None]
                yield blk, idx, Xp, Yp, W

    @property
    def n_points(self) -> int:
        return sum(b.n_points for b in self.blocks)


def _interval_bary(ends, pts):
    e0, e1 = float(ends[0]), float(ends[1])
    t = (np.asarray(pts) - e0) / (e1 - e0)
    return np.column_stack([1.0 - t, t])


@functools.lru_cache(maxsize=None)
def _subdivided_triangle_rule(n, depth):
    lam, w = triangle_rule(n)
    tris = [np.eye(3)]
    for _ in range(depth):
        new = []
        for T in tris:
            m01, m12, m20 = (T[0] + T[1]) / 2, (T[1] + T[2]) / 2, (T[2] + T[0]) / 2
            new += [np.array([T[0], m01, m20]), np.array([m01, T[1], m12]),
                    np.array([m20, m12, T[2]]), np.array([m12, m20, m01])]
        tris = new
    L = np.concatenate([lam @ T for T in tris])
    W = np.concatenate([w / len(tris) for _ in tris])
    return L, W


def _point_segment_distance(p, a, b):
    e = b - a
    t = np.clip(np.sum((p - a) * e, axis=-1) / np.sum(e * e, axis=-1), 0.0, 1.0)
    q = a + t[..., None] * e
    return np.sqrt(np.sum((p - q) ** 2, axis=-1))


def _triangle_distance(A, B):
    """Distance between disjoint triangles, vectorized over the leading axis."""
    best = np.full(A.shape[0], np.inf)
    for S, T in ((A, B), (B, A)):
        for i in range(3):
            for j in range(3):
                d = _point_segment_distance(S[:, i], T[:, j], T[:, (j + 1) % 3])
                best = np.minimum(best, d)
    return best
