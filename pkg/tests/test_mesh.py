import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonlocal_lab import (DiffusionTensor, KernelSpec, OrderField, build_box_mesh,
                          build_interval_mesh, pair_rule)
from nonlocal_lab.mesh import INTERACTION, INTERIOR, load_mesh_csv, save_mesh_csv


def test_interval_mesh_hand_construction():
    m = build_interval_mesh(0, 1, 4, 0.25)
    assert len(m.elements) == 6
    assert np.sum(m.region == INTERIOR) == 4
    np.testing.assert_allclose([m.nodes.min(), m.nodes.max()], [-0.25, 1.25])


def test_interval_collar_counts():
    m = build_interval_mesh(0, 1, 8, 0.5)
    assert np.sum(m.region == INTERACTION) == 8
    assert m.h == pytest.approx(0.125)


@pytest.mark.parametrize("bad", [dict(elements=0), dict(horizon=0.0), dict(elements=1)])
def test_interval_mesh_rejects(bad):
    kw = dict(elements=4, horizon=0.25)
    kw.update(bad)
    with pytest.raises(ValueError):
        build_interval_mesh(0, 1, kw["elements"], kw["horizon"])


def test_box_mesh_hand_construction():
    m = build_box_mesh(1, 1, 2, 2, 0.5)
    assert np.sum(m.region == INTERIOR) == 8
    # one ring of 0.5-cells around a 2x2 grid: 4x4 cells, 32 triangles
    assert len(m.elements) == 32
    with pytest.raises(ValueError):
        build_box_mesh(1, 1, 0, 2, 0.5)


@given(st.floats(0.05, 0.6), st.integers(2, 12))
def test_collar_covers_horizon(eps, n):
    m = build_interval_mesh(0, 1, n, eps)
    assert m.nodes.min() <= -eps + 1e-12 and m.nodes.max() >= 1 + eps - 1e-12


def test_box_collar_covers_horizon():
    m = build_box_mesh(0.5, 1.0, 3, 5, 0.3)
    lo, hi = m.nodes.min(axis=0), m.nodes.max(axis=0)
    assert np.all(lo <= -0.3 + 1e-12) and hi[0] >= 0.8 - 1e-12 and hi[1] >= 1.3 - 1e-12


def test_element_measures_and_mass():
    m = build_box_mesh(1, 1, 3, 3, 0.2)
    assert np.all(m.element_measures > 0)
    assert m.mass_matrix().sum() == pytest.approx(m.total_measure, rel=1e-13)
    assert m.mass_matrix("interior").sum() == pytest.approx(1.0, rel=1e-13)


def spec(beta, eps=10.0):
    return KernelSpec(OrderField.constant(beta), DiffusionTensor.identity(1), eps)


def test_far_pair_weights():
    r = pair_rule([0, 1], [2, 3], spec(0.25), order=2)
    assert r.kind == "far" and len(r.weights) == 4
    assert r.weights.sum() == pytest.approx(1.0, rel=1e-14)
    assert np.all(r.weights > 0)


@pytest.mark.parametrize("K2,kind", [([0, 1], "identical"), ([1, 2], "adjacent")])
def test_singular_pair_rules_avoid_diagonal(K2, kind):
    r = pair_rule([0, 1], K2, spec(0.25), order=4, levels=6)
    assert r.kind == kind
    assert np.all(r.weights > 0)
    assert r.weights.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.min(np.abs(r.x - r.y)) > 0


def test_identical_pair_oracle():
    # ∫∫ (y-x)^2 |y-x|^{-1-2 beta} over the unit square, beta = 1/4: 8/15
    r = pair_rule([0, 1], [0, 1], spec(0.25), order=4, levels=6)
    d = np.abs(r.x - r.y)[:, 0]
    assert np.sum(r.weights * d**2 * d ** (-1.5)) == pytest.approx(8 / 15, rel=1e-6)
    assert np.sum(r.weights * d**0.5) == pytest.approx(8 / 15, rel=1e-6)


def test_order_refinement_reduces_error():
    errs = []
    for order in (2, 4, 6):
        r = pair_rule([0, 1], [0, 1], spec(0.45), order=order, levels=5)
        d = np.abs(r.x - r.y)[:, 0]
        errs.append(abs(np.sum(r.weights * d ** (2 - 1.9)) - 2 / (1.1 * 2.1)))
    assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-13


def test_triangle_pair_weights():
    s = KernelSpec(OrderField.constant(0.3), DiffusionTensor.identity(2), 10.0, dim=2)
    A = np.array([[0, 0], [1, 0], [0, 1]], float)
    r = pair_rule(A, A + 3.0, s, order=3)
    assert r.kind == "far"
    assert r.weights.sum() == pytest.approx(0.25, rel=1e-13)
    B = np.array([[1, 0], [1, 1], [0, 1]], float)
    for B, kind in ((A, "identical"), (B, "adjacent")):
        deficits = []
        for levels in (2, 4, 6):
            r = pair_rule(A, B, s, order=3, levels=levels)
            assert r.kind == kind
            assert np.all(r.weights > 0)
            assert np.min(np.linalg.norm(r.x - r.y, axis=1)) > 0
            deficits.append(0.25 - r.weights.sum())
        # only the excluded diagonal cells are missing, and they shrink with grading
        assert deficits[0] > deficits[1] > deficits[2] >= 0
        assert deficits[2] < 1e-4


def test_mesh_csv_roundtrip(tmp_path):
    m = build_box_mesh(1, 0.5, 2, 2, 0.25)
    pn, pe = save_mesh_csv(m, tmp_path)
    raw = open(pn, "rb").read()
    assert b"\r\n" not in raw and raw.startswith(b"id,x,y\n")
    m2 = load_mesh_csv(tmp_path, 0.25)
    np.testing.assert_array_equal(m.nodes, m2.nodes)
    np.testing.assert_array_equal(m.elements, m2.elements)
    np.testing.assert_array_equal(m.region, m2.region)


def test_locate_and_interpolate():
    m = build_box_mesh(1, 1, 4, 4, 0.25)
    v = 2 * m.nodes[:, 0] - m.nodes[:, 1] + 0.5
    p = np.array([[0.33, 0.71], [-0.2, 1.1]])
    np.testing.assert_allclose(m.interpolate(v, p), 2 * p[:, 0] - p[:, 1] + 0.5, rtol=1e-13)
    with pytest.raises(ValueError):
        m.locate([[5.0, 5.0]])
