import numpy as np
import pytest
from dataclasses import replace

from stcutfem import SolveConfig, build_mesh, build_time_partition, get_problem, solve
from stcutfem.norms import eoc, error_vs_exact, mesh_time_derivative
from stcutfem.solver import SlabSolution
from stcutfem.spacesforms import build_space, interpolate, interpolate_physical
from conftest import slab_geometry


def test_eoc_of_halving():
    np.testing.assert_allclose(eoc([1.0, 0.25, 0.0625]), [2.0, 2.0])
    np.testing.assert_allclose(eoc([1.0, 1 / 27], sizes=[0.3, 0.1]), [3.0])


def _sol(g, sp, c):
    return SlabSolution(g.slab, sp, g, c)


def test_mesh_time_derivative_identity_mapping():
    (g,) = slab_geometry(get_problem("ms0"), 8, 1)
    sp = build_space(g.topology, 1, 1)
    x = np.array([0.1, 0.45, 0.9])
    t = np.full(3, 0.2)
    np.testing.assert_allclose(mesh_time_derivative(_sol(g, sp, interpolate(sp, lambda x, t: t)), x, t),
                               1.0, atol=1e-13)
    np.testing.assert_allclose(mesh_time_derivative(_sol(g, sp, interpolate(sp, lambda x, t: x)), x, t),
                               0.0, atol=1e-13)


def test_mesh_time_derivative_follows_the_mapping():
    g = slab_geometry(get_problem("ms1"), 30, 10, q_s=2, q_t=2)[2]
    assert not g.mapping.is_identity
    sp = build_space(g.topology, 2, 2)
    s = _sol(g, sp, interpolate(sp, lambda x, t: x))  # reference-linear
    vol = g.quad.volume
    moving = np.abs(vol.theta_t) > 1e-4
    assert np.any(moving)
    x, t = vol.x[moving], vol.t[moving]
    np.testing.assert_allclose(mesh_time_derivative(s, x, t), 0.0, atol=1e-12)
    # at fixed physical x the same function does change in time
    elem, xhat = g.mapping.preimage(x, t)
    ddt = -g.mapping.dtheta_dt(elem, xhat, t) / g.mapping.dtheta_dx(elem, xhat, t)
    assert np.abs(ddt).max() > 1e-4


def test_interpolant_error_rate_on_fitted_domain():
    data = get_problem("ms0")
    errs = []
    for n in (8, 16, 32):
        geo = slab_geometry(data, n, n // 2)
        sols = []
        for g in geo:
            sp = build_space(g.topology, 1, 1)
            sols.append(_sol(g, sp, interpolate_physical(sp, g, data.u_exact)))
        errs.append(np.sqrt(error_vs_exact(sols, data, gamma_j=0.0).triple2))
    assert eoc(errs)[-1] >= 0.9


def test_polynomial_solution_is_reproduced():
    base = get_problem("ms0")
    u = lambda x, t: (1 + t) * (x**2 - 2 * x**3 / 3) + t**2
    data = replace(base, name="poly", u0=lambda x: u(x, 0.0), u_exact=u,
                   u_exact_x=lambda x, t: (1 + t) * (2 * x - 2 * x**2),
                   f=lambda x, t: (x**2 - 2 * x**3 / 3 + 2 * t) - (1 + t) * (2 - 4 * x))
    res = solve(data, build_mesh(0, 1, 4), build_time_partition(0.5, 3), SolveConfig(k_s=3, k_t=2),
                warn=False)
    rep = error_vs_exact(res.solutions, data)
    for k, v in rep.summary().items():
        assert v <= 1e-9, k


def test_error_needs_exact_solution():
    data = replace(get_problem("ms0"), u_exact=None)
    res = solve(get_problem("ms0"), build_mesh(0, 1, 4), build_time_partition(0.5, 2), SolveConfig(),
                warn=False)
    with pytest.raises(ValueError):
        error_vs_exact(res.solutions, data)
