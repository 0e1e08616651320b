import numpy as np
import pytest

from stcutfem.cutgeom import PointRule, element_quadrature
from stcutfem.levelset import get_problem, slab_time_nodes
from stcutfem.mapping import (GeometryMapping, build_geometry, build_lifting, mesh_velocity,
                              push_forward)
from stcutfem.meshtime import build_mesh, build_time_partition
from conftest import make_problem

one = lambda x, t: 1.0 + 0 * x


def geometry(data, n, N, q_s, q_t, order=8, deform=True):
    a, b = data.background
    return build_geometry(data, build_mesh(a, b, n), build_time_partition(data.T_end, N), q_s, q_t,
                          order, deform=deform)


def affine_mapping(mesh, fn, q_s=1, q_t=1, t0=0.0, t1=1.0):
    tn = slab_time_nodes(t0, t1, q_t)
    x = mesh.lagrange_nodes(q_s)
    disp = fn(x[:, None], tn[None, :])
    return GeometryMapping(0, t0, t1, q_s, q_t, mesh, disp, np.ones_like(disp), tn)


def test_linear_geometry_gives_identity():
    for g in geometry(get_problem("ms1"), 30, 5, q_s=1, q_t=1):
        assert g.mapping.is_identity


def test_undeformed_option():
    for g in geometry(get_problem("ms1"), 30, 5, q_s=2, q_t=2, deform=False):
        assert g.mapping.is_identity


def circle():
    return make_problem(lambda x, t: x * x - 1.0 + 0 * t, lambda x, t: 2 * x + 0 * t, (-1.3, 1.7))


def test_static_quadratic_nodes_on_closed_form_root():
    (g,) = geometry(circle(), 12, 1, q_s=2, q_t=1)  # h = 0.25
    x = g.mesh.lagrange_nodes(2)
    lin = g.levelset.eval_lin_global(x, 0.0)
    moved = np.flatnonzero(g.mapping.weights[:, 0] == 1.0)  # outside the blending ring
    assert moved.size > 0
    y = x[moved] + g.mapping.disp[moved, 0]
    np.testing.assert_allclose(np.abs(y), np.sqrt(lin[moved] + 1.0), atol=1e-12)


def test_interface_on_a_node_is_mapped_exactly():
    # element [a, a + h] with a^2 + (a + h)^2 = 2 puts the zero of phi^lin at its midpoint
    h = 0.25
    a = (-h + np.sqrt(h * h - 2 * (h * h - 2))) / 2
    data = make_problem(lambda x, t: x * x - 1.0 + 0 * t, lambda x, t: 2 * x + 0 * t,
                        (a - 8 * h, a + 4 * h))
    (g,) = geometry(data, 12, 1, q_s=2, q_t=1)
    bd = g.quad.boundary
    right = bd.x > 0
    np.testing.assert_allclose(bd.xhat[right], a + h / 2, atol=1e-14)
    np.testing.assert_allclose(bd.x[right], 1.0, atol=1e-10)


def test_mapped_interface_error_third_order():
    errs = []
    for n in (12, 24, 48):
        (g,) = geometry(circle(), n, 1, q_s=2, q_t=1)
        errs.append(np.abs(np.abs(g.quad.boundary.x) - 1.0).max() / g.mesh.h**3)
    # the phase of the interface in its element changes with n, so compare to h^3
    assert max(errs) <= 2.5 * min(errs)


def test_root_residual_on_cut_nodes():
    data = get_problem("ms1")
    for g in geometry(data, 30, 10, q_s=2, q_t=2):
        mp, ls = g.mapping, g.levelset
        x = g.mesh.lagrange_nodes(2)
        for e in g.topology.cut:
            for j, tj in enumerate(ls.time_nodes):
                nodes = 2 * e + np.arange(3)
                y = x[nodes] + mp.disp[nodes, j]
                xi = np.array([0.0, 0.5, 1.0])
                target = (1 - xi) * ls.lin[e, j] + xi * ls.lin[e + 1, j]
                res = ls.eval_ho(np.full(3, e), y, np.full(3, tj)) - target
                assert np.abs(res).max() <= 1e-12


def test_displacement_decays_second_order():
    data = get_problem("ms1")
    sizes = []
    for n in (30, 60, 120):
        geo = geometry(data, n, n // 3, q_s=2, q_t=2)
        sizes.append(max(np.abs(g.mapping.disp).max() for g in geo))
    rates = np.log2(np.array(sizes[:-1]) / np.array(sizes[1:]))
    assert rates.min() >= 1.8


def test_mesh_velocity_identity_and_affine():
    mesh = build_mesh(0, 1, 4)
    ident = affine_mapping(mesh, lambda x, t: 0 * x * t)
    assert ident.is_identity
    np.testing.assert_array_equal(mesh_velocity(ident, np.array([0.3, 0.6]), 0.5), 0.0)
    shift = affine_mapping(mesh, lambda x, t: 0.1 * t + 0 * x)
    np.testing.assert_allclose(mesh_velocity(shift, np.array([0.3, 0.6]), 0.5), 0.1, atol=1e-14)


def test_interface_velocity_close_to_translation_speed():
    data = get_problem("ms1")
    errs = []
    for n in (30, 60):
        geo = geometry(data, n, n // 3, q_s=2, q_t=2)
        errs.append(max(np.abs(g.quad.boundary.velocity - 0.5).max() for g in geo))
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_push_forward_identity_and_scaling():
    mesh = build_mesh(0, 1, 1)
    r = element_quadrature(mesh, [0], 0.0, 1.0, 4)
    same = push_forward(affine_mapping(mesh, lambda x, t: 0 * x * t), r)
    np.testing.assert_array_equal(same.physical_weights, r.w)
    np.testing.assert_array_equal(same.x, r.xhat)
    stretched = push_forward(affine_mapping(mesh, lambda x, t: 0.1 * x + 0 * t), r)
    np.testing.assert_allclose(stretched.physical_weights, 1.1 * r.w, rtol=1e-14)
    assert stretched.measure() == pytest.approx(1.1)


def test_mapped_measure_third_order():
    data = get_problem("ms1")
    errs = []
    for n in (30, 60, 120):
        geo = geometry(data, n, n // 3, q_s=2, q_t=2)
        errs.append(max(abs(g.quad.end.measure() - 1.0) for g in geo))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates[-1] >= 2.8


def test_slices_shared_between_slabs():
    geo = geometry(get_problem("ms1"), 30, 5, q_s=2, q_t=2)
    for a, b in zip(geo[:-1], geo[1:]):
        assert b.quad.start is a.quad.end


def test_lifting_identity_on_exact_geometry():
    data = make_problem(lambda x, t: x - 1.0 + 0 * t, one, (0.0, 3.0),
                        u_exact=lambda x, t: x + 0 * t)
    (g,) = geometry(data, 4, 1, q_s=1, q_t=1)
    L = build_lifting(data, g)
    np.testing.assert_allclose(L.displacement(np.array([0.5, 1.0, 1.3]), 0.4), 0.0, atol=1e-15)


def test_lifting_moves_offset_interface():
    delta = 0.01
    discrete = make_problem(lambda x, t: x - 1.0 - delta + 0 * t, one, (0.0, 3.0))
    exact = make_problem(lambda x, t: x - 1.0 + 0 * t, one, (0.0, 3.0), u_exact=lambda x, t: x + 0 * t)
    (g,) = geometry(discrete, 4, 1, q_s=1, q_t=1)
    L = build_lifting(exact, g)
    y, _ = L.phi_map(np.array([1.0 + delta]), 0.3)
    assert y[0] == pytest.approx(1.0, abs=1e-13)
    assert L.displacement(np.array([1.0 + delta]), 0.3)[0] == pytest.approx(-delta, abs=1e-13)


def test_lifting_displacement_second_order_for_linear_geometry():
    data = get_problem("ms1")
    sizes = []
    for n in (30, 60, 120):
        g = geometry(data, n, n // 3, q_s=1, q_t=1)[0]
        Xh, X, _ = build_lifting(data, g).boundary(0.5 * (g.t0 + g.t1))
        sizes.append(np.abs(X - Xh).max())
    rates = np.log2(np.array(sizes[:-1]) / np.array(sizes[1:]))
    assert rates.min() >= 1.8
