import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from nonlocal_lab import (DiffusionTensor, KernelSpec, OrderField, build_box_mesh,
                          build_interval_mesh)
from nonlocal_lab.calculus import (Field, apply_adjoint, apply_diffusion, apply_divergence,
                                   apply_interaction, assemble_stiffness, diffusion_at,
                                   export_matrix_coo, flux_field, gauss_residual, gauss_terms,
                                   green_residual, green_terms)
from nonlocal_lab.kernel import KernelDomainError, pair_alpha
from nonlocal_lab.spaces import constrain
from oracles import oracle_interaction_1d, oracle_stiffness_1d


def _beta(spec):
    return lambda x: float(spec.order(np.array([[x]]))[0])


@pytest.fixture(scope="module", params=["constant", "variable"])
def oracle_case(request, spec_const, spec_var, mesh8):
    spec = spec_const if request.param == "constant" else spec_var
    spec = spec.replace(order=OrderField.constant(0.5)) if request.param == "constant" else spec
    return spec, oracle_stiffness_1d(mesh8, _beta(spec), spec.horizon)


def test_field_validation(mesh8):
    with pytest.raises(ValueError):
        Field(mesh8, np.zeros(3))
    v = np.zeros(mesh8.n_nodes)
    v[0] = np.nan
    with pytest.raises(ValueError):
        Field(mesh8, v)


def test_stiffness_matches_dense_oracle(oracle_case, mesh8):
    spec, O = oracle_case
    A = assemble_stiffness(0.0, spec, mesh8).matrix.toarray()
    scale = np.max(np.abs(O))
    assert np.all(np.abs(A - O) <= 1e-6 * np.abs(O) + 1e-12 * scale)


@pytest.mark.parametrize("case", ["1d_const", "1d_var", "1d_periodic", "2d"])
def test_stiffness_structure(case, spec_const, spec_var, mesh8):
    if case == "2d":
        mesh = build_box_mesh(1.0, 1.0, 3, 3, 0.4)
        spec = KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(2), 0.4, dim=2)
    else:
        mesh = mesh8
        spec = {"1d_const": spec_const, "1d_var": spec_var,
                "1d_periodic": spec_var.replace(tensor=DiffusionTensor.time_periodic(0.5, 2 * np.pi))}[case]
    A = assemble_stiffness(0.3, spec, mesh).matrix.toarray()
    nA = np.max(np.abs(A))
    assert np.max(np.abs(A - A.T)) <= 1e-12 * nA
    assert np.linalg.eigvalsh(A)[0] >= -1e-10 * np.linalg.norm(A, 2)
    assert np.max(np.abs(A @ np.ones(mesh.n_nodes))) <= 1e-10 * np.linalg.norm(A, 2)


def test_quadratic_form_nonnegative(spec_var, mesh8, rng):
    A = assemble_stiffness(0.0, spec_var, mesh8)
    U = rng.standard_normal((100, mesh8.n_nodes))
    assert np.all(np.einsum("ki,ij,kj->k", U, A.matrix.toarray(), U) >= 0)
    u = Field(mesh8, U[0])
    assert A.form(u, u) == pytest.approx(U[0] @ A.matrix @ U[0])


def test_apply_adjoint_examples(mesh8):
    spec = KernelSpec(OrderField.constant(0.5), DiffusionTensor.identity(1), 0.6)
    mesh = build_interval_mesh(0.0, 1.0, 8, 0.6)
    ones = Field(mesh, np.ones(mesh.n_nodes))
    assert np.all(apply_adjoint(ones, 0.1, 0.4, spec) == 0)
    u = Field.from_function(mesh, lambda X: X[:, 0])
    # u(y) - u(x) = 0.5, so D*u = -0.5 alpha(0, 0.5)
    al = pair_alpha(np.array([[0.0]]), np.array([[0.5]]), spec)[0, 0]
    val = apply_adjoint(u, 0.0, 0.5, spec)
    assert val.shape == (1,)
    assert val[0] == pytest.approx(-0.5 * al, rel=1e-14)
    # the pair term changes sign under swap for constant order
    assert apply_adjoint(u, 0.5, 0.0, spec)[0] == pytest.approx(val[0], rel=1e-14)


def test_apply_divergence_trivial_fields(spec_const, mesh8):
    zero = lambda X, Y: np.zeros_like(X)
    assert apply_divergence(zero, 0.5, spec_const, mesh8) == 0.0
    anti = lambda X, Y: np.sin(3 * X) - np.sin(3 * Y)
    assert abs(apply_divergence(anti, 0.37, spec_const, mesh8)) <= 1e-12
    # nu = alpha: (alpha(x,y) + alpha(y,x)) vanishes for constant order
    al = lambda X, Y: pair_alpha(X, Y, spec_const)
    assert abs(apply_divergence(al, 0.37, spec_const, mesh8)) <= 1e-10


def test_divergence_of_flux_matches_oracle(spec_var, mesh16, rng):
    u = Field(mesh16, rng.standard_normal(mesh16.n_nodes))
    xs = mesh16.nodes[:, 0]
    order = np.argsort(xs)
    for x in (0.3, 0.5 + 1e-3, 0.9375):
        ref = -oracle_interaction_1d(xs[order], u.values[order], x, _beta(spec_var),
                                     spec_var.horizon)
        got = apply_divergence(flux_field(u, 0.0, spec_var), x, spec_var, mesh16)
        assert got == pytest.approx(ref, rel=1e-6)
        assert diffusion_at(u, 0.0, x, spec_var) == pytest.approx(ref, rel=1e-6)


def test_kink_with_large_order_diverges(spec_var, mesh16, rng):
    # beta(0.5) = 0.6: the strong form of a P1 function is infinite at its nodes
    u = Field(mesh16, rng.standard_normal(mesh16.n_nodes))
    with pytest.raises(KernelDomainError):
        diffusion_at(u, 0.0, 0.5, spec_var)


def test_apply_interaction(spec_var, mesh8, rng):
    xs = mesh8.nodes[:, 0]
    order = np.argsort(xs)
    ones = Field(mesh8, np.ones(mesh8.n_nodes))
    assert apply_interaction(ones, 0.0, -0.1, spec_var) == pytest.approx(0.0, abs=1e-12)
    u = Field(mesh8, rng.standard_normal(mesh8.n_nodes))
    for x in (-0.2, -0.0625, 1.1, 1.0):
        ref = oracle_interaction_1d(xs[order], u.values[order], x, _beta(spec_var),
                                    spec_var.horizon)
        assert apply_interaction(u, 0.0, x, spec_var) == pytest.approx(ref, rel=1e-6)
    with pytest.raises(ValueError):
        apply_interaction(u, 0.0, 0.5, spec_var)


def test_horizon_locality(spec_var, mesh16):
    # u lives on [0.5, 1.25]; x = -0.2 is more than eps = 0.25 away and u(x) = 0
    u = Field.from_function(mesh16, lambda X: np.clip(X[:, 0] - 0.5, 0, None))
    assert apply_interaction(u, 0.0, -0.2, spec_var) == 0.0
    assert diffusion_at(u, 0.0, 0.2, spec_var) == 0.0


def test_apply_diffusion_eigenvector(spec_const):
    mesh = build_interval_mesh(0.0, 1.0, 32, 0.25)
    A = assemble_stiffness(0.0, spec_const, mesh)
    mu, V = sla.eigh(A.matrix.toarray(), A.mass.toarray())
    for k in (1, 3, 10):
        got = apply_diffusion(Field(mesh, V[:, k]), 0.0, spec_const, mesh).values
        assert np.linalg.norm(got - mu[k] * V[:, k]) <= 1e-4 * abs(mu[k]) * np.linalg.norm(V[:, k])
    ones = Field(mesh, np.ones(mesh.n_nodes))
    assert np.max(np.abs(apply_diffusion(ones, 0.0, spec_const).values)) <= 1e-8


def test_apply_diffusion_linear(spec_var, mesh16, rng):
    u = Field(mesh16, rng.standard_normal(mesh16.n_nodes))
    v = Field(mesh16, rng.standard_normal(mesh16.n_nodes))
    lhs = apply_diffusion(2 * u + v, 0.0, spec_var).values
    rhs = 2 * apply_diffusion(u, 0.0, spec_var).values + apply_diffusion(v, 0.0, spec_var).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


@given(st.integers(0, 2**32 - 1))
def test_adjointness(seed):
    mesh = build_interval_mesh(0.0, 1.0, 16, 0.25)
    spec = KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), 0.25)
    r = np.random.default_rng(seed)
    u = Field(mesh, r.standard_normal(mesh.n_nodes))
    v = Field(mesh, constrain(r.standard_normal(mesh.n_nodes), "dirichlet", mesh))
    Du = apply_diffusion(u, 0.0, spec).values
    lhs = float(v.values @ (mesh.mass_matrix() @ Du))
    A = assemble_stiffness(0.0, spec, mesh)
    assert lhs == pytest.approx(A.form(u, v), rel=1e-9, abs=1e-9 * np.linalg.norm(Du))


def test_gauss_residual(spec_var, mesh8, rng):
    zero = lambda X, Y: np.zeros_like(X)
    assert gauss_residual(zero, spec_var, mesh8) == 0.0
    for _ in range(5):
        nu = flux_field(Field(mesh8, rng.standard_normal(mesh8.n_nodes)), 0.0, spec_var)
        d, _n = gauss_terms(nu, spec_var, mesh8)
        assert gauss_residual(nu, spec_var, mesh8) <= 1e-8 * (abs(d) + 1)


def test_gauss_residual_literal_mode_is_finite(mesh8, rng):
    spec = KernelSpec(OrderField.sine(0.5, 0.4, 2 * np.pi), DiffusionTensor.identity(1), 0.25,
                      symmetrize=False)
    nu = flux_field(Field(mesh8, rng.standard_normal(mesh8.n_nodes)), 0.0, spec)
    assert np.isfinite(gauss_residual(nu, spec, mesh8))


def test_green_identity(spec_var, mesh8, rng):
    zero = Field(mesh8, np.zeros(mesh8.n_nodes))
    u = Field(mesh8, rng.standard_normal(mesh8.n_nodes))
    assert green_residual(zero, u, 0.0, spec_var) == 0.0
    assert green_residual(u, zero, 0.0, spec_var) == 0.0
    for _ in range(5):
        u = Field(mesh8, rng.standard_normal(mesh8.n_nodes))
        v = Field(mesh8, rng.standard_normal(mesh8.n_nodes))
        terms = green_terms(u, v, 0.0, spec_var)
        assert green_residual(u, v, 0.0, spec_var) <= 1e-6 * max(map(abs, terms))
    # v = 0 on the interaction domain: the boundary term drops out
    w = Field(mesh8, constrain(v.values, "dirichlet", mesh8))
    t1, b, t3 = green_terms(u, w, 0.0, spec_var)
    assert t3 == 0.0
    assert t1 == pytest.approx(b, rel=1e-6)


def test_export_coo(tmp_path, spec_const, mesh8):
    A = assemble_stiffness(0.0, spec_const, mesh8).matrix
    p = tmp_path / "A.txt"
    export_matrix_coo(A, p)
    raw = p.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "row,col,value"
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    B = np.zeros(A.shape)
    B[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    assert np.array_equal(B, A.toarray())
