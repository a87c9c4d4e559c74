"""Variable-order singular kernel: order field beta, tensor a, and alpha/gamma.

Points are passed as arrays of shape ``(m, n)``; a single point may be given
as a scalar (1-D) or a length-``n`` vector and is promoted automatically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "KernelDomainError",
    "OrderField",
    "DiffusionTensor",
    "KernelSpec",
    "ValidationReport",
    "as_points",
    "eval_alpha",
    "pair_alpha",
    "eval_gamma",
    "validate_spec",
]


class KernelDomainError(ValueError):
    """Raised when a kernel ingredient is evaluated on coincident points."""


def as_points(x, dim: int) -> np.ndarray:
    """Promote ``x`` to a float array of shape ``(m, dim)``."""
    p = np.asarray(x, dtype=float)
    if p.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given for dim={dim}")
        return p.reshape(1, 1)
    if p.ndim == 1:
        if dim == 1:
            return p.reshape(-1, 1)
        if p.shape[0] == dim:
            return p.reshape(1, dim)
        raise ValueError(f"point of length {p.shape[0]} for dim={dim}")
    if p.shape[-1] != dim:
        raise ValueError(f"points with trailing size {p.shape[-1]} for dim={dim}")
    return p.reshape(-1, dim)


# ---------------------------------------------------------------------------
# order field


@dataclass(frozen=True, eq=False)
class OrderField:
    """Spatially varying fractional order beta(x) with declared bounds.

    Parameters
    ----------
    func : callable
        Maps points ``(m, n)`` to values ``(m,)``.
    beta_lo, beta_hi : float
        Declared bounds, ``0 < beta_lo <= beta_hi < 1``.
    lipschitz_bound : float, optional
        Declared Lipschitz constant, checked by :func:`validate_spec`.
    name : str
        Label used in reports.
    """

    func: Callable[[np.ndarray], np.ndarray]
    beta_lo: float
    beta_hi: float
    lipschitz_bound: Optional[float] = None
    name: str = "custom"
    const: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.beta_lo <= self.beta_hi < 1.0):
            raise ValueError(
                f"order bounds must satisfy 0 < beta_lo <= beta_hi < 1, got "
                f"beta_lo={self.beta_lo}, beta_hi={self.beta_hi}"
            )
        if self.lipschitz_bound is not None and self.lipschitz_bound < 0:
            raise ValueError("lipschitz_bound must be nonnegative")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.const is not None:
            return np.full(x.shape[0], self.const)
        return np.asarray(self.func(x), dtype=float).reshape(x.shape[0])

    @property
    def is_constant(self) -> bool:
        return self.const is not None

    @classmethod
    def constant(cls, beta: float) -> "OrderField":
        beta = float(beta)
        return cls(lambda x: np.full(x.shape[0], beta), beta, beta, 0.0,
                   name=f"constant({beta:g})", const=beta)

    @classmethod
    def sine(cls, center: float = 0.5, amplitude: float = 0.4,
             frequency: float = np.pi) -> "OrderField":
        """beta(x) = center + amplitude*sin(frequency*x_1)."""
        c, amp, w = float(center), float(amplitude), float(frequency)
        return cls(lambda x: c + amp * np.sin(w * x[:, 0]),
                   c - abs(amp), c + abs(amp), abs(amp * w),
                   name=f"sine({c:g},{amp:g},{w:g})")

    @classmethod
    def bump(cls, base: float = 0.3, height: float = 0.4, center=0.5,
             width: float = 0.2) -> "OrderField":
        """beta(x) = base + height*exp(-|x - center|^2 / width^2)."""
        b, hgt, wd = float(base), float(height), float(width)
        ctr = np.atleast_1d(np.asarray(center, dtype=float))

        def f(x):
            r2 = np.sum((x - ctr[: x.shape[1]]) ** 2, axis=1)
            return b + hgt * np.exp(-r2 / wd**2)

        lo, hi = min(b, b + hgt), max(b, b + hgt)
        lip = abs(hgt) * np.sqrt(2.0 / np.e) / wd
        return cls(f, lo, hi, lip, name=f"bump({b:g},{hgt:g},{wd:g})")

    @classmethod
    def nodal(cls, mesh, values, beta_lo: float, beta_hi: float,
              lipschitz_bound: Optional[float] = None) -> "OrderField":
        """Piecewise-linear interpolant of nodal values on ``mesh``."""
        vals = np.asarray(values, dtype=float).copy()
        if vals.shape != (mesh.n_nodes,):
            raise ValueError("one order value per mesh node is required")
        return cls(lambda x: mesh.interpolate(vals, x), beta_lo, beta_hi,
                   lipschitz_bound, name="nodal")


# ---------------------------------------------------------------------------
# diffusion tensor


@dataclass(frozen=True, eq=False)
class DiffusionTensor:
    """Symmetric uniformly elliptic tensor a(t, x, y).

    ``func(t, x, y)`` and ``dt_func(t, x, y)`` map point arrays ``(m, n)`` to
    matrices ``(m, n, n)``. Isotropic tensors a = c(t) I are flagged through
    ``time_factor`` so that assembly can scale a single matrix.
    """

    func: Callable
    dt_func: Optional[Callable]
    a_lo: float
    a_hi: float
    time_factor: Optional[Callable[[float], float]] = None
    name: str = "custom"

    def __post_init__(self):
        if not (0.0 < self.a_lo <= self.a_hi):
            raise ValueError(f"ellipticity bounds must satisfy 0 < a_lo <= a_hi, "
                             f"got a_lo={self.a_lo}, a_hi={self.a_hi}")

    @property
    def isotropic(self) -> bool:
        return self.time_factor is not None

    @property
    def time_independent(self) -> bool:
        return getattr(self.time_factor, "constant", False)

    def __call__(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(t, x, y), dtype=float)

    def quadratic_form(self, t, x, y, z) -> np.ndarray:
        """z . a(t, x, y) z for rows of ``z``."""
        if self.isotropic:
            return self.time_factor(t) * np.einsum("ij,ij->i", z, z)
        a = self(t, x, y)
        return np.einsum("ij,ijk,ik->i", z, a, z)

    @classmethod
    def scaled_identity(cls, c: float = 1.0, dim: int = 1) -> "DiffusionTensor":
        c = float(c)
        if c <= 0:
            raise ValueError("scaled_identity needs c > 0")
        eye = np.eye(dim)

        def factor(t):
            return c
        factor.constant = True
        return cls(lambda t, x, y: c * np.broadcast_to(eye, (x.shape[0], dim, dim)),
                   lambda t, x, y: np.zeros((x.shape[0], dim, dim)),
                   c, c, time_factor=factor,
                   name="identity" if c == 1.0 else f"scaled_identity({c:g})")

    @classmethod
    def identity(cls, dim: int = 1) -> "DiffusionTensor":
        return cls.scaled_identity(1.0, dim)

    @classmethod
    def time_periodic(cls, c: float, omega: float, dim: int = 1) -> "DiffusionTensor":
        """a(t) = (1 + c sin(omega t)) I, bounds 1 - |c| and 1 + |c|."""
        c, omega = float(c), float(omega)
        if abs(c) >= 1:
            raise ValueError("time_periodic needs |c| < 1 for ellipticity")
        eye = np.eye(dim)

        def factor(t):
            return 1.0 + c * np.sin(omega * t)

        a_lo = 1.0 - abs(c)
        # dt a = c*omega*cos(omega t) I must stay below a_hi
        a_hi = max(1.0 + abs(c), abs(c * omega))
        return cls(lambda t, x, y: factor(t) * np.broadcast_to(eye, (x.shape[0], dim, dim)),
                   lambda t, x, y: c * omega * np.cos(omega * t)
                   * np.broadcast_to(eye, (x.shape[0], dim, dim)),
                   a_lo, a_hi, time_factor=factor,
                   name=f"time_periodic({c:g},{omega:g})")


# ---------------------------------------------------------------------------
# kernel spec


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Horizon, order field and tensor defining the nonlocal operator.

    ``symmetrize`` selects gamma_sym = (gamma(x,y) + gamma(y,x)) / 2 and the
    matching antisymmetric alpha used by the pointwise operators.
    """

    order: OrderField
    tensor: DiffusionTensor
    horizon: float
    dim: int = 1
    symmetrize: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be finite and positive, got {self.horizon}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")

    def replace(self, **kw) -> "KernelSpec":
        args = dict(order=self.order, tensor=self.tensor, horizon=self.horizon,
                    dim=self.dim, symmetrize=self.symmetrize)
        args.update(kw)
        return KernelSpec(**args)


def _split(x, y, dim):
    x = as_points(x, dim)
    y = as_points(y, dim)
    x, y = np.broadcast_arrays(x, y)
    z = y - x
    r = np.sqrt(np.einsum("ij,ij->i", z, z))
    return x, y, z, r


def _check_distinct(r):
    if np.any(r == 0.0):
        raise KernelDomainError("kernel evaluated at coincident points x = y")


def _alpha_exponent(beta, dim):
    return dim / 2.0 + beta + 1.0


def eval_alpha(x, y, spec: KernelSpec) -> np.ndarray:
    """Literal alpha(x, y) = (y - x) / |y - x|^(n/2 + beta(x) + 1) inside the horizon.

    Returns an array of shape ``(m, n)``.
    """
    x, y, z, r = _split(x, y, spec.dim)
    _check_distinct(r)
    p = _alpha_exponent(spec.order(x), spec.dim)
    out = z * (r ** -p)[:, None]
    out[r > spec.horizon] = 0.0
    return out


def pair_alpha(x, y, spec: KernelSpec) -> np.ndarray:
    """alpha honoring ``spec.symmetrize``.

    In symmetrized mode this is the antisymmetric
    (y - x) sqrt((|y-x|^(-2p(x)) + |y-x|^(-2p(y))) / 2), which satisfies
    alpha . a alpha = gamma_sym exactly and reduces to :func:`eval_alpha`
    when beta is constant.
    """
    if not spec.symmetrize:
        return eval_alpha(x, y, spec)
    x, y, z, r = _split(x, y, spec.dim)
    _check_distinct(r)
    return alpha_values(x, y, z, spec)


def alpha_values(x, y, z, spec: KernelSpec) -> np.ndarray:
    """:func:`pair_alpha` on pre-shaped arrays with the exact offset ``z = y - x``.

    No coincidence check; used where ``y`` was rounded onto ``x``.
    """
    r = np.sqrt(np.einsum("ij,ij->i", z, z))
    if not spec.symmetrize:
        out = z * (r ** -_alpha_exponent(spec.order(x), spec.dim))[:, None]
        out[r > spec.horizon] = 0.0
        return out
    px = _alpha_exponent(spec.order(x), spec.dim)
    py = _alpha_exponent(spec.order(y), spec.dim)
    s = np.sqrt(0.5 * (r ** (-2 * px) + r ** (-2 * py)))
    out = z * s[:, None]
    out[r > spec.horizon] = 0.0
    return out


def gamma_values(t, x, y, spec: KernelSpec, symmetrize: Optional[bool] = None,
                 z: Optional[np.ndarray] = None) -> np.ndarray:
    """gamma on pre-shaped point arrays without the coincidence check.

    Coincident pairs give ``inf`` or ``nan``; quadrature rules never produce them.
    ``z`` optionally supplies y - x exactly when y was rounded.
    """
    sym = spec.symmetrize if symmetrize is None else symmetrize
    if z is None:
        z = y - x
    r2 = np.einsum("ij,ij->i", z, z)
    q = spec.tensor.quadratic_form(t, x, y, z)
    n = spec.dim
    ex = 0.5 * (n + 2.0 * spec.order(x) + 2.0)
    if sym:
        ey = 0.5 * (n + 2.0 * spec.order(y) + 2.0)
        g = 0.5 * q * (r2 ** -ex + r2 ** -ey)
    else:
        g = q * r2 ** -ex
    g[r2 > spec.horizon**2] = 0.0
    return g


def eval_gamma(t: float, x, y, spec: KernelSpec) -> np.ndarray:
    """gamma(t, x, y) = (y-x).a(y-x) / |y-x|^(n + 2 beta(x) + 2), honoring symmetrization."""
    x, y, z, r = _split(x, y, spec.dim)
    _check_distinct(r)
    return gamma_values(t, x, y, spec)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    """Worst-case violations per checked invariant (positive means violated)."""

    violations: dict = field(default_factory=dict)
    tolerance: float = 1e-12
    samples: int = 0

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.violations.values())

    @property
    def failures(self) -> list:
        return [k for k, v in self.violations.items() if v > self.tolerance]


def validate_spec(spec: KernelSpec, sample_count: int = 1000, seed: int = 0,
                  bounds=None, t_range=(0.0, 1.0)) -> ValidationReport:
    """Sample (t, x, y, xi) and report worst violations of the kernel assumptions.

    Parameters
    ----------
    bounds : array_like, optional
        ``(lo, hi)`` corner points of the sampling box; defaults to the unit box.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = spec.dim
    if bounds is None:
        lo, hi = np.zeros(n), np.ones(n)
    else:
        lo = np.broadcast_to(np.asarray(bounds[0], float), (n,))
        hi = np.broadcast_to(np.asarray(bounds[1], float), (n,))
    m = int(sample_count)
    x = lo + (hi - lo) * rng.random((m, n))
    y = lo + (hi - lo) * rng.random((m, n))
    t = t_range[0] + (t_range[1] - t_range[0]) * rng.random(m)
    xi = rng.standard_normal((m, n))
    xi2 = np.einsum("ij,ij->i", xi, xi)

    order = spec.order
    tens = spec.tensor
    v = {}
    b = np.concatenate([order(x), order(y)])
    v["order_below_beta_lo"] = float(np.max(order.beta_lo - b))
    v["order_above_beta_hi"] = float(np.max(b - order.beta_hi))
    if order.lipschitz_bound is not None:
        d = np.sqrt(np.sum((x - y) ** 2, axis=1))
        v["order_lipschitz"] = float(np.max(np.abs(order(x) - order(y))
                                            - order.lipschitz_bound * d))

    a = np.stack([tens(ti, xi_[None], yi[None])[0] for ti, xi_, yi in zip(t, x, y)])
    a_swap = np.stack([tens(ti, yi[None], xi_[None])[0] for ti, xi_, yi in zip(t, x, y)])
    scale = max(1.0, float(np.max(np.abs(a))))
    v["tensor_symmetry"] = float(np.max(np.abs(a - np.transpose(a, (0, 2, 1))))) / scale
    v["tensor_swap_symmetry"] = float(np.max(np.abs(a - a_swap))) / scale
    # the sup over xi of the Rayleigh quotient is attained at eigenvectors;
    # the random xi are kept as an independent spot check
    eig = np.linalg.eigvalsh(0.5 * (a + np.transpose(a, (0, 2, 1))))
    q = np.einsum("ij,ijk,ik->i", xi, a, xi) / xi2
    v["ellipticity_lower"] = float(max(np.max(tens.a_lo - eig[:, 0]), np.max(tens.a_lo - q)))
    v["ellipticity_upper"] = float(max(np.max(eig[:, -1] - tens.a_hi), np.max(q - tens.a_hi)))
    if tens.dt_func is not None:
        da = np.stack([np.asarray(tens.dt_func(ti, xi_[None], yi[None]))[0]
                       for ti, xi_, yi in zip(t, x, y)])
        eig_d = np.linalg.eigvalsh(0.5 * (da + np.transpose(da, (0, 2, 1))))
        v["time_derivative_upper"] = float(np.max(eig_d[:, -1] - tens.a_hi))
    v["horizon_positive"] = 0.0 if (np.isfinite(spec.horizon) and spec.horizon > 0) else 1.0
    return ValidationReport(violations=v, samples=m)
