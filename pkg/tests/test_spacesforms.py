import numpy as np
import pytest

from stcutfem.levelset import get_problem
from stcutfem.spacesforms import (assemble, build_space, facet_penalty, gp_scaling, interpolate,
                                  mass_matrix, mean_split, stiffness_matrix, time_derivative_mass,
                                  trace_row)
from conftest import make_problem, slab_geometry

one = lambda x, t: 1.0 + 0 * x


def static(level, n=4, b=3.0, T=1.0):
    return make_problem(lambda x, t: x - level + 0 * t, one, (0.0, b), T_end=T)


def first(data, n, N=1, **kw):
    return slab_geometry(data, n, N, **kw)[0]


@pytest.mark.parametrize("level,k_s,k_t,dim", [(0.5, 1, 1, 4), (1.0, 1, 1, 6), (1.0, 2, 1, 10)])
def test_space_dimensions(level, k_s, k_t, dim):
    g = first(static(level), 4)
    assert build_space(g.topology, k_s, k_t).dim == dim


def test_interpolation_reproduces_bilinear(rng):
    g = first(static(1.0), 4)
    sp = build_space(g.topology, 1, 1)
    c = interpolate(sp, lambda x, t: x * t)
    e = rng.choice(sp.active, 50)
    xh = g.mesh.vertices[e] + rng.random(50) * g.mesh.lengths[e]
    t = rng.random(50)
    np.testing.assert_allclose(sp.evaluate(c, e, xh, t)[0], xh * t, atol=1e-14)


def test_interpolation_of_constant():
    g = first(static(1.0), 4)
    sp = build_space(g.topology, 2, 2)
    np.testing.assert_array_equal(interpolate(sp, lambda x, t: 3.5 + 0 * x), 3.5)


def test_mean_split_examples():
    data = make_problem(lambda x, t: np.abs(x - 0.5) - 0.5 + 0 * t, one, (0.0, 1.0))
    g = first(data, 4)
    sp = build_space(g.topology, 1, 1)
    mean, rest = mean_split(sp, np.full(sp.dim, 5.0), g.quad.end)
    assert mean == pytest.approx(5.0)
    np.testing.assert_allclose(rest, 0.0, atol=1e-14)
    ux = interpolate(sp, lambda x, t: x)
    mean, _ = mean_split(sp, ux, g.quad.end)
    assert mean == pytest.approx(0.5)
    free = ux - 0.5
    mean, rest = mean_split(sp, free, g.quad.end)
    assert mean == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(rest, free, atol=1e-15)


def test_matrices_against_measures():
    g = first(get_problem("ms1"), 30, 10, q_s=2, q_t=2)
    sp = build_space(g.topology, 2, 2)
    ones = np.ones(sp.dim)
    assert ones @ mass_matrix(sp, g.quad.volume) @ ones == pytest.approx(g.quad.volume.measure(), rel=1e-13)
    assert np.abs(stiffness_matrix(sp, g.quad.volume) @ ones).max() < 1e-12
    assert np.abs(time_derivative_mass(sp, g.quad.volume) @ ones).max() < 1e-12
    assert trace_row(sp, g.quad.end).sum() == pytest.approx(g.quad.end.measure(), rel=1e-13)


def test_ghost_penalty_vanishes_on_constants():
    for g in slab_geometry(get_problem("ms1"), 30, 10, q_s=2, q_t=2):
        sp = build_space(g.topology, 2, 2)
        S = assemble(sp, g, get_problem("ms1"), None if g.slab == 0 else _stub(sp), 1.0)
        assert g.topology.ghost_facets.size > 0
        assert np.abs(S.J @ np.ones(sp.dim)).max() < 1e-10 * np.abs(S.J).max()
        break


def _stub(sp):
    from types import SimpleNamespace
    return SimpleNamespace(space=sp, coeffs=np.zeros(sp.dim))


def test_facet_penalty_closed_form():
    # 1 on T1, 0 on T2, h = 0.25, dt = 0.1, gamma_J = 1
    data = static(0.6, b=1.0, T=0.1)
    g = first(data, 4)
    assert g.mapping.is_identity
    assert 2 in g.topology.ghost_facets.tolist()
    sp = build_space(g.topology, 1, 1)
    nloc = 4
    val = facet_penalty(g, sp.basis, 2, np.ones(nloc), np.zeros(nloc), 1.0, 6)
    assert gp_scaling(1.0, 0.1, 0.25) == pytest.approx((1 + 0.1 / 0.25) / 0.0625)
    assert val == pytest.approx(1.12, rel=1e-13)


def test_blocks_symmetry_properties():
    data = get_problem("ms1")
    g = first(data, 30, 10, q_s=2, q_t=2)
    sp = build_space(g.topology, 2, 2)
    S = assemble(sp, g, data, None, 1.0)
    for M in (S.stiff, S.mass_start, S.mass_end, S.J):
        np.testing.assert_allclose(M, M.T, atol=1e-13)
    np.testing.assert_allclose(S.c, S.mass_end @ np.ones(sp.dim), atol=1e-13)


def test_first_slab_needs_no_previous_trace():
    data = get_problem("ms1")
    geo = slab_geometry(data, 30, 10)
    sp = build_space(geo[1].topology, 1, 1)
    with pytest.raises(ValueError):
        assemble(sp, geo[1], data, None, 1.0)
