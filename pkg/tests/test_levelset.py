import numpy as np
import pytest

from stcutfem.levelset import (concentration_balance, exact_domain, get_problem, slab_time_nodes,
                               verify_manufactured)
from conftest import make_problem, slab_levelsets


def test_static_affine_reproduced():
    data = make_problem(lambda x, t: x - 1.0 + 0 * t, lambda x, t: 1.0 + 0 * x, (0.0, 3.0))
    _, _, lss = slab_levelsets(data, 4, 2, q_s=2, q_t=2)
    x = np.linspace(0, 3, 31)
    for ls in lss:
        for t in (ls.t0, 0.5 * (ls.t0 + ls.t1), ls.t1):
            np.testing.assert_allclose(ls.eval_lin_global(x, t), x - 1.0, atol=1e-14)
            np.testing.assert_allclose(ls.eval_ho_global(x, t), x - 1.0, atol=1e-14)


def test_moving_affine_vertex_value():
    data = make_problem(lambda x, t: x - 1.0 - 0.5 * t, lambda x, t: 1.0 + 0 * x, (0.0, 3.0), T_end=0.4)
    mesh, _, lss = slab_levelsets(data, 4, 1, q_s=1, q_t=1)
    v = int(np.flatnonzero(np.isclose(mesh.vertices, 1.5))[0])
    assert ls_value(lss[0], v, 0.2) == pytest.approx(0.4, abs=1e-14)


def ls_value(ls, v, t):
    return float(ls.vertex_values(np.array([t]))[0, v])


def test_ms1_quadratic_interpolant_exact():
    # phi is quadratic in x and in t, so q = (2, 2) reproduces it
    data = get_problem("ms1")
    _, _, lss = slab_levelsets(data, 4, 2, q_s=2, q_t=2)
    x = np.linspace(0, 3, 97)
    for ls in lss:
        for t in np.linspace(ls.t0, ls.t1, 5):
            err = np.abs(ls.eval_ho_global(x, t) - data.phi(x, t))
            assert err.max() <= 1e-12


def test_ms1_linear_interpolant_second_order():
    data = get_problem("ms1")
    errs = []
    for n in (8, 16, 32):
        _, _, lss = slab_levelsets(data, n, 1, q_s=1, q_t=2)
        x = np.linspace(0, 3, 601)
        errs.append(np.abs(lss[0].eval_lin_global(x, 0.3) - data.phi(x, 0.3)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates.min() > 1.9


def test_continuity_across_slabs():
    data = get_problem("ms1")
    _, _, lss = slab_levelsets(data, 12, 4, q_s=2, q_t=2)
    for a, b in zip(lss[:-1], lss[1:]):
        np.testing.assert_array_equal(a.lin[:, -1], b.lin[:, 0])
        np.testing.assert_array_equal(a.ho[:, -1], b.ho[:, 0])


def test_time_nodes_keep_endpoints():
    t = slab_time_nodes(0.1, 0.3, 2)
    assert t[0] == 0.1 and t[-1] == 0.3
    assert t[1] == pytest.approx(0.2)


@pytest.mark.parametrize("name", ["ms0", "ms1", "ms2-quadratic-levelset"])
def test_manufactured_solutions(name):
    rep = verify_manufactured(get_problem(name))
    assert rep.status == "ok"
    assert rep.max_pde_residual <= 1e-6
    assert rep.max_flux <= 1e-6


def test_manufactured_skipped_without_exact():
    data = make_problem(lambda x, t: x - 1.0 + 0 * t, lambda x, t: 1.0 + 0 * x, (0.0, 3.0))
    assert verify_manufactured(data).status == "skipped"


def test_exact_domain_ms1():
    (l, r), = exact_domain(get_problem("ms1"), 0.6)
    assert l == pytest.approx(0.7, abs=1e-12)
    assert r == pytest.approx(1.7, abs=1e-12)


def test_concentration_balance_ms1():
    assert concentration_balance(get_problem("ms1"), [0.2, 0.5, 0.8]).max() < 1e-6


def test_unknown_problem():
    with pytest.raises(KeyError):
        get_problem("nope")
