import numpy as np
import pytest

from stcutfem.cutgeom import build_quadrature, classify
from stcutfem.levelset import ProblemData, interpolate_levelset
from stcutfem.meshtime import build_mesh, build_time_partition


def zero(x, t):
    return 0.0 * (np.asarray(x) + np.asarray(t))


def make_problem(phi, phi_x, background, T_end=1.0, w=zero, f=zero, u0=None, u_exact=None,
                 u_exact_x=None, name="custom"):
    if u0 is None:
        u0 = (lambda x: u_exact(x, 0.0)) if u_exact is not None else (lambda x: 1.0 + 0.0 * x)
    return ProblemData(name=name, phi=phi, phi_x=phi_x, w=w, f=f, u0=u0, background=background,
                       T_end=T_end, u_exact=u_exact, u_exact_x=u_exact_x)


def slab_levelsets(data, n_elements, n_slabs, q_s=1, q_t=1):
    a, b = data.background
    mesh = build_mesh(a, b, n_elements)
    slabs = build_time_partition(data.T_end, n_slabs)
    return mesh, slabs, interpolate_levelset(data, mesh, slabs, q_s, q_t)


def reference_slab(data, n_elements, n_slabs=1, q_s=1, q_t=1, order=6, slab=0):
    """Level set, topology and reference quadrature of one slab."""
    mesh, slabs, lss = slab_levelsets(data, n_elements, n_slabs, q_s, q_t)
    ls = lss[slab]
    top = classify(ls)
    return ls, top, build_quadrature(top, ls, order)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def slab_geometry(data, n_elements, n_slabs, q_s=1, q_t=1, order=8, deform=True):
    from stcutfem.mapping import build_geometry

    a, b = data.background
    return build_geometry(data, build_mesh(a, b, n_elements), build_time_partition(data.T_end, n_slabs),
                          q_s, q_t, order, deform=deform)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
