"""Independent reference computations used by the tests.

The stiffness oracle integrates the literal kernel over ordered pairs. The
inner y-integral is evaluated in closed form (polynomial times a power of
|y - x|) and the outer x-integral is done adaptively by ``quad_vec``. It
shares no code with the pair-quadrature assembly.
"""
import numpy as np
from scipy import integrate


def _power_moments(z0, z1, p):
    """∫_{z0}^{z1} z^m |z|^p dz for m = 0, 1, 2 and an interval on one side of 0.

    Moments that diverge at z = 0 are returned as 0; callers only use them
    with vanishing coefficients.
    """
    out = np.zeros(3)
    if z1 <= z0:
        return out
    sign = 1.0
    q0, q1 = z0, z1
    if z0 < 0:
        q0, q1, sign = -z1, -z0, -1.0
    for m in range(3):
        k = m + p + 1
        if q0 == 0 and k <= 0:
            continue
        if k == 0:
            v = np.log(q1 / q0)
        else:
            v = (q1**k - (0.0 if q0 == 0 else q0**k)) / k
        out[m] = sign**m * v
    return out


def _hat_values(xs, el, x):
    """Nodal basis values at x restricted to element ``el`` (zero outside)."""
    a, b = el
    xa, xb = xs[a], xs[b]
    return {a: (xb - x) / (xb - xa), b: (x - xa) / (xb - xa)}


def oracle_stiffness_1d(mesh, beta, horizon, factor=1.0, epsrel=1e-11):
    """Dense reference A for a 1-D mesh and the literal kernel c |z|^{-(1+2 beta(x))}.

    ``beta`` is a callable on scalar x. Returns an (N, N) array.
    """
    xs = mesh.nodes[:, 0]
    els = [tuple(sorted(e, key=lambda i: xs[i])) for e in mesh.elements]
    N = mesh.n_nodes

    def inner(x, ex_el):
        p = -(1.0 + 2.0 * beta(x))
        own = _hat_values(xs, ex_el, x)
        out = np.zeros((N, N))
        for f in els:
            c, d = xs[f[0]], xs[f[1]]
            lo, hi = max(c, x - horizon), min(d, x + horizon)
            if hi <= lo:
                continue
            dofs = sorted(set(f) | set(ex_el))
            # d_k(x + z) = A_k + B_k z on this y-element
            A = np.zeros(len(dofs))
            B = np.zeros(len(dofs))
            hf = _hat_values(xs, f, x)
            for i, k in enumerate(dofs):
                A[i] = hf.get(k, 0.0) - own.get(k, 0.0)
                if k == f[0]:
                    B[i] = -1.0 / (d - c)
                elif k == f[1]:
                    B[i] = 1.0 / (d - c)
            touches = lo <= x <= hi
            if touches:
                A[:] = 0.0  # continuity of P1 at x
            pieces = [(lo - x, min(hi, x) - x), (max(lo, x) - x, hi - x)] if touches \
                else [(lo - x, hi - x)]
            mom = np.zeros(3)
            for z0, z1 in pieces:
                mom += _power_moments(z0, z1, p)
            loc = (np.outer(A, A) * mom[0] + (np.outer(A, B) + np.outer(B, A)) * mom[1]
                   + np.outer(B, B) * mom[2])
            out[np.ix_(dofs, dofs)] += loc
        return out.ravel()

    total = np.zeros(N * N)
    for e in els:
        a, b = xs[e[0]], xs[e[1]]
        brk = sorted({v for v in np.concatenate([xs - horizon, xs + horizon]) if a < v < b})
        val, _ = integrate.quad_vec(lambda x: inner(x, e), a, b, epsabs=0.0, epsrel=epsrel,
                                    points=brk or None, norm="max", limit=2000)
        total += val
    return factor * total.reshape(N, N)


def oracle_interaction_1d(xs, vals, x, beta, horizon):
    """2 ∫ (u(y) - u(x)) gamma_sym(x, y) dy over the mesh span, for a = I.

    ``u`` is the piecewise-linear interpolant of ``vals`` at sorted nodes
    ``xs`` and ``beta`` a callable on scalars. The singular part is paired
    symmetrically, with u(x +- z) - u(x) taken exactly from the slopes.
    """
    xs = np.asarray(xs, float)
    vals = np.asarray(vals, float)
    slopes = np.diff(vals) / np.diff(xs)
    ux = np.interp(x, xs, vals)

    def g(y, r):
        if r == 0 or r > horizon:
            return 0.0
        return 0.5 * (r ** (-1 - 2 * beta(x)) + r ** (-1 - 2 * beta(y)))

    def F(y):
        return 2.0 * (np.interp(y, xs, vals) - ux) * g(y, abs(y - x))

    lo, hi = xs[0], xs[-1]
    a, b = max(lo, x - horizon), min(hi, x + horizon)
    pts = sorted({p for p in xs if a < p < b and p != x})
    left = [p for p in pts if p < x]
    right = [p for p in pts if p > x]
    dl = x - (left[-1] if left else a)
    dr = (right[0] if right else b) - x
    total = 0.0
    m = min(dl, dr)
    kw = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    if m > 0:
        kr = min(np.searchsorted(xs, x, side="right") - 1, len(slopes) - 1)
        kl = max(np.searchsorted(xs, x, side="left") - 1, 0)
        sr, sl = slopes[kr], slopes[kl]
        # z = m s^p makes the z^(1 - 2 beta) endpoint behaviour smooth
        pw = 2.0 / (2.0 - 2.0 * beta(x))

        def G(s):
            z = m * s**pw
            val = 2.0 * (sr * z * g(x + z, z) - sl * z * g(x - z, z))
            return val * m * pw * s ** (pw - 1.0)

        total += integrate.quad(G, 0.0, 1.0, **kw)[0]
    edges = sorted({a, b, x - m, x + m, *pts})
    for p0, p1 in zip(edges[:-1], edges[1:]):
        if p0 >= x - m and p1 <= x + m:
            continue
        total += integrate.quad(F, p0, p1, **kw)[0]
    return total
