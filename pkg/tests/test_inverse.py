import numpy as np
import pytest
from hypothesis import given, strategies as st

from nonlocal_lab import (DiffusionTensor, KernelSpec, OrderField, build_box_mesh,
                          build_interval_mesh)
from nonlocal_lab.calculus import Field
from nonlocal_lab.inverse import (BackwardProblem, Propagator, SourceProblem, add_noise,
                                  backward_reconstruct, dirichlet_eigenmodes, eigenmode_family,
                                  numerical_rank, source_forward_map, source_reconstruct,
                                  stability_audit, truncation_study)
from nonlocal_lab.solver import TimeGrid, Trajectory, solve_forward
from nonlocal_lab.spaces import constrain


@pytest.fixture(scope="module")
def backward_setup(spec_const):
    mesh = build_interval_mesh(0.0, 1.0, 64, 0.25)
    return spec_const, mesh, TimeGrid(0.2, 100)


def _rel(mesh, a, b):
    M = mesh.mass_matrix()
    e = a - b
    return float(np.sqrt(e @ (M @ e) / (b @ (M @ b))))


def test_problem_validation(mesh8):
    zero = Field(mesh8, np.zeros(mesh8.n_nodes))
    for kw in (dict(target_time=-0.1, regularization=1.0),
               dict(target_time=0.1, regularization=0.0),
               dict(target_time=0.1, regularization=1.0, noise_level=-1.0)):
        with pytest.raises(ValueError):
            BackwardProblem(zero, **kw)


def test_propagator_matches_solver_and_transpose(spec_var, mesh16, rng):
    g = TimeGrid(0.1, 5)
    P = Propagator(spec_var, mesh16, g)
    u0 = constrain(rng.standard_normal(mesh16.n_nodes), "dirichlet", mesh16)
    tr = solve_forward(u0, None, "dirichlet", g, "crank_nicolson", spec_var, mesh16)
    free = mesh16.free_nodes
    assert np.allclose(P.full(P.forward(u0[free])), tr.values[-1], rtol=0, atol=1e-12)
    x, y = rng.standard_normal((2, len(free)))
    assert y @ P.forward(x) == pytest.approx(x @ P.transpose(y), rel=1e-12)


def test_zero_data_reconstructs_zero(backward_setup):
    spec, mesh, g = backward_setup
    res = backward_reconstruct(BackwardProblem(Field(mesh, np.zeros(mesh.n_nodes)), 0.1, 1e-4),
                               spec, mesh, g)
    assert np.all(res.field.values == 0)


def test_error_decreases_with_regularization(backward_setup):
    spec, mesh, g = backward_setup
    x = mesh.nodes[:, 0]
    u0 = constrain(np.sin(np.pi * np.clip(x, 0, 1)) ** 2, "dirichlet", mesh)
    tr = solve_forward(u0, None, "dirichlet", g, "crank_nicolson", spec, mesh)
    mid = g.steps // 2
    errs = []
    for rho in (1e-2, 1e-4, 1e-6):
        res = backward_reconstruct(BackwardProblem(tr[-1], g.times[mid], rho), spec, mesh, g)
        errs.append(_rel(mesh, res.field.values, tr.values[mid]))
    assert errs[0] > errs[1] > errs[2]


def test_eigenmode_reconstruction(backward_setup):
    spec, mesh, g = backward_setup
    mu, V = dirichlet_eigenmodes(spec, mesh)
    T, t0 = g.T, g.T / 2
    data = Field(mesh, np.exp(-mu[0] * T) * V[:, 0])
    res = backward_reconstruct(BackwardProblem(data, t0, 1e-8), spec, mesh, g)
    assert _rel(mesh, res.field.values, np.exp(-mu[0] * t0) * V[:, 0]) < 0.01
    assert res.iterations == len(res.residuals) and res.iterations > 0


def test_backward_is_linear(backward_setup, rng):
    spec, mesh, g = backward_setup
    a, b = (Field(mesh, constrain(v, "dirichlet", mesh))
            for v in rng.standard_normal((2, mesh.n_nodes)))

    def rec(d):
        return backward_reconstruct(BackwardProblem(d, 0.1, 1e-3), spec, mesh, g).field.values

    ra, rb, rab = rec(a), rec(b), rec(a + 2 * b)
    assert np.max(np.abs(rab - ra - 2 * rb)) <= 1e-8 * np.max(np.abs(rab))


@pytest.fixture(scope="module")
def family_setup(spec_const):
    mesh = build_interval_mesh(0.0, 1.0, 64, 0.25)
    g = TimeGrid(0.2, 40)
    return spec_const, mesh, g, eigenmode_family(spec_const, mesh, g, 5 / g.T, 8)


@pytest.mark.parametrize("frac", [0.25, 0.5, 0.75])
def test_theta_matches_time_fraction(family_setup, frac):
    spec, mesh, g, fam = family_setup
    t0 = g.times[int(round(frac * g.steps))]
    audit = stability_audit(fam, t0, spec, mesh)
    assert abs(audit.theta - t0 / g.T) <= 0.05
    assert audit.ok and np.all(audit.slack >= 0)
    assert audit.C >= audit.C_fit
    assert len(audit.rows()) == len(fam)


def test_audit_at_initial_time(family_setup):
    spec, mesh, g, fam = family_setup
    audit = stability_audit(fam, 0.0, spec, mesh)
    assert audit.ok


@given(st.floats(1e-3, 1e3), st.integers(0, 7))
def test_slack_is_scale_invariant(c, member):
    mesh = build_interval_mesh(0.0, 1.0, 32, 0.25)
    spec = KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(1), 0.25)
    g = TimeGrid(0.2, 20)
    fam = eigenmode_family(spec, mesh, g, 25.0, 8)
    base = stability_audit(fam, 0.1, spec, mesh)
    fam2 = list(fam)
    tr = fam2[member]
    fam2[member] = Trajectory(c * tr.values, g, tr.kind, mesh)
    scaled = stability_audit(fam2, 0.1, spec, mesh)
    assert scaled.theta == pytest.approx(base.theta, abs=1e-9)
    assert scaled.slack[member] == pytest.approx(base.slack[member], abs=1e-9)


def test_degenerate_family_rejected(family_setup):
    spec, mesh, g, fam = family_setup
    tr = fam[0]
    copies = [Trajectory(c * tr.values, g, tr.kind, mesh) for c in (1.0, 2.0, 3.0)]
    with pytest.raises(ValueError):
        stability_audit(copies, 0.1, spec, mesh)
    with pytest.raises(ValueError):
        stability_audit(fam[:1], 0.1, spec, mesh)
    with pytest.raises(ValueError):
        stability_audit(fam, 0.1, spec.replace(order=OrderField.sine(0.45, 0.1)), mesh)


def test_add_noise():
    v = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(add_noise(v, 0.0), v)
    a, b = add_noise(v, 0.1, seed=3), add_noise(v, 0.1, seed=3)
    assert np.array_equal(a, b) and not np.array_equal(a, v)


# ---------------------------------------------------------------------------
# inverse source


@pytest.fixture(scope="module")
def source_setup():
    mesh = build_box_mesh(0.5, 1.0, 4, 8, 2.0, collar=0.125)
    spec = KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(2), 2.0, dim=2)
    g = TimeGrid(0.5, 8)
    p = SourceProblem(0.5, 1.0, g.T, 8, 4)
    return mesh, spec, g, p, source_forward_map(p, g, spec, mesh)


def test_forward_map_shape_and_injectivity(source_setup):
    mesh, spec, g, p, G = source_setup
    assert G.shape == (g.steps * len(mesh.interaction_nodes), 32)
    s = np.linalg.svd(G, compute_uv=False)
    assert s[-1] > 0 and numerical_rank(s, G.shape) == 32
    assert np.isfinite(s[0] / s[-1])


def test_forward_map_zero_column_and_linearity(source_setup):
    mesh, spec, g, p, G = source_setup
    f1, f2 = p.basis[1], p.basis[6]
    q = SourceProblem(0.5, 1.0, g.T, basis=[lambda X, t: 0.0 * np.atleast_2d(X)[:, 0], f1, f2,
                                            lambda X, t: f1(X, t) + f2(X, t)])
    Gq = source_forward_map(q, g, spec, mesh)
    assert np.all(Gq[:, 0] == 0)
    assert np.allclose(Gq[:, 3], Gq[:, 1] + Gq[:, 2], rtol=0, atol=1e-10 * np.max(np.abs(Gq)))
    assert np.allclose(Gq[:, 1], G[:, 1], rtol=0, atol=1e-12 * np.max(np.abs(G)))


def test_forward_map_preconditions(source_setup):
    mesh, spec, g, p, _ = source_setup
    bad = SourceProblem(0.5, 1.0, g.T, basis=[lambda X, t: np.atleast_2d(X)[:, 0]])
    with pytest.raises(ValueError, match="x1"):
        source_forward_map(bad, g, spec, mesh)
    with pytest.raises(ValueError):
        source_forward_map(p, g, spec.replace(horizon=0.5), mesh)
    with pytest.raises(ValueError):
        source_forward_map(p, g, spec.replace(order=OrderField.sine(0.4, 0.1)), mesh)


def test_source_reconstruct(source_setup, rng):
    *_, G = source_setup
    c0, r0 = source_reconstruct(np.zeros(G.shape[0]), G)
    assert np.all(c0 == 0) and r0 == 0
    c = rng.standard_normal(G.shape[1])
    cr, resid = source_reconstruct(G @ c, G)
    assert np.linalg.norm(cr - c) / np.linalg.norm(c) < 1e-6
    assert resid <= 1e-10 * np.linalg.norm(G @ c)
    with pytest.raises(ValueError):
        source_reconstruct(G @ c, G, G.shape[1] + 1)


def test_truncation_study_rows(source_setup, rng):
    *_, G = source_setup
    rows = truncation_study(G, rng.standard_normal(G.shape[1]), 0.01, seed=2)
    assert [r["truncation"] for r in rows] == list(range(1, G.shape[1] + 1))
    assert all(np.isfinite(r["error"]) and r["error"] >= 0 for r in rows)
