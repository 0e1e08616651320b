import numpy as np
import pytest

from stcutfem.meshtime import BackgroundMesh, build_mesh, build_time_partition, check_assumptions


def test_uniform_mesh_counts():
    m = build_mesh(0, 3, 4)
    assert m.n_elements == 4
    assert m.n_vertices == 5
    assert len(m.interior_facets) == 3
    assert m.h == pytest.approx(0.75)


def test_single_element_has_no_interior_facets():
    m = build_mesh(0, 1, 1)
    assert m.n_elements == 1
    assert m.interior_facets.size == 0


def test_vertex_coordinates():
    m = build_mesh(0, 2, 8)
    assert m.h == pytest.approx(0.25)
    assert m.vertices[3] == pytest.approx(0.75)


def test_lengths_sum_to_interval():
    m = build_mesh(-1.3, 1.7, 37)
    assert np.sum(m.lengths) == pytest.approx(3.0, abs=1e-14)
    assert m.vertices[0] == -1.3 and m.vertices[-1] == 1.7


@pytest.mark.parametrize("args", [(0, 1, 0), (1, 1, 3), (2, 1, 3)])
def test_invalid_meshes(args):
    with pytest.raises(ValueError):
        build_mesh(*args)


def test_shape_regularity_enforced():
    with pytest.raises(ValueError):
        BackgroundMesh(np.array([0.0, 0.1, 1.0]))


def test_facet_neighbours():
    m = build_mesh(0, 1, 4)
    assert m.facet_elements(2) == (1, 2)
    assert m.element_facets(0) == [1]
    with pytest.raises(IndexError):
        m.facet_elements(0)


def test_lagrange_nodes_shared_vertices():
    m = build_mesh(0, 1, 3)
    x = m.lagrange_nodes(2)
    assert x.size == 7
    np.testing.assert_array_equal(x[::2], m.vertices)
    np.testing.assert_allclose(x[1::2], [1 / 6, 0.5, 5 / 6])


def test_time_partition():
    tp = build_time_partition(1.0, 4)
    assert tp.dt == pytest.approx(0.25)
    assert tp.times[2] == pytest.approx(0.5)
    one = build_time_partition(0.5, 1)
    assert len(one) == 1 and one.slab(0) == (0.0, 0.5)
    with pytest.raises(ValueError):
        build_time_partition(1.0, 0)
    with pytest.raises(ValueError):
        build_time_partition(0.0, 2)


def test_assumption_check_passes():
    rep = check_assumptions(0.25, 0.1, q_t=1)
    assert rep.mesh_vs_step  # 0.0625 <= 0.1
    assert rep.ok


def test_assumption_check_warns():
    with pytest.warns(RuntimeWarning):
        rep = check_assumptions(0.5, 0.01, q_t=1)
    assert not rep.mesh_vs_step
