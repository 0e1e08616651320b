"""Problem data, the built-in problem registry and discrete level-set interpolants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .meshtime import BackgroundMesh, TimePartition
from .polynomials import gauss_legendre, lagrange

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemData:
    """Analytic data of a moving-domain convection-diffusion problem.

    All callables take broadcastable arrays ``(x, t)`` (``u0`` takes ``x``).
    The domain is ``{phi < 0}`` intersected with the background interval.
    """

    name: str
    phi: Field
    phi_x: Field
    w: Field
    f: Field
    u0: Callable[[np.ndarray], np.ndarray]
    background: tuple[float, float]
    T_end: float = 1.0
    u_exact: Optional[Field] = None
    u_exact_x: Optional[Field] = None
    description: str = ""

    @property
    def has_exact(self) -> bool:
        return self.u_exact is not None


def _ms0() -> ProblemData:
    pi = np.pi

    def u(x, t):
        return np.cos(pi * x) * np.exp(-pi**2 * t)

    return ProblemData(
        name="ms0",
        phi=lambda x, t: np.abs(x - 0.5) - 0.5 + 0.0 * t,
        phi_x=lambda x, t: np.sign(x - 0.5) + 0.0 * t,
        w=lambda x, t: 0.0 * (x + t),
        f=lambda x, t: 0.0 * (x + t),
        u0=lambda x: np.cos(pi * x),
        background=(0.0, 1.0),
        T_end=0.5,
        u_exact=u,
        u_exact_x=lambda x, t: -pi * np.sin(pi * x) * np.exp(-pi**2 * t),
        description="static domain (0,1) fitted to the mesh, pure diffusion",
    )


def _ms1() -> ProblemData:
    pi = np.pi

    def rho(t):
        return 0.4 + 0.5 * t

    def u(x, t):
        return np.exp(-t) * np.cos(pi * (x - rho(t)))

    return ProblemData(
        name="ms1",
        phi=lambda x, t: (x - rho(t)) * (x - rho(t) - 1.0),
        phi_x=lambda x, t: 2.0 * (x - rho(t)) - 1.0,
        w=lambda x, t: 0.5 + 0.0 * (x + t),
        f=lambda x, t: (pi**2 - 1.0) * u(x, t),
        u0=lambda x: u(x, 0.0),
        background=(0.0, 3.0),
        T_end=1.0,
        u_exact=u,
        u_exact_x=lambda x, t: -pi * np.exp(-t) * np.sin(pi * (x - rho(t))),
        description="unit interval translating with the flow, quadratic level set",
    )


def _ms2() -> ProblemData:
    pi = np.pi

    def u(x, t):
        return 1.0 + np.cos(pi * x) * np.exp(-pi**2 * t)

    return ProblemData(
        name="ms2-quadratic-levelset",
        phi=lambda x, t: x * x - 1.0 + 0.0 * t,
        phi_x=lambda x, t: 2.0 * x + 0.0 * t,
        w=lambda x, t: 0.0 * (x + t),
        f=lambda x, t: 0.0 * (x + t),
        u0=lambda x: u(x, 0.0),
        background=(-1.3, 1.7),
        T_end=0.5,
        u_exact=u,
        u_exact_x=lambda x, t: -pi * np.sin(pi * x) * np.exp(-pi**2 * t),
        description="static domain (-1,1) cut by the mesh, curved level set",
    )


PROBLEMS: dict[str, Callable[[], ProblemData]] = {
    "ms0": _ms0,
    "ms1": _ms1,
    "ms2-quadratic-levelset": _ms2,
}


def get_problem(name: str) -> ProblemData:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------------------
# discrete level sets


def slab_time_nodes(t0: float, t1: float, q_t: int) -> np.ndarray:
    """Gauss-Lobatto nodes of [t0, t1] with the endpoints stored exactly."""
    tau = lagrange(q_t).nodes
    t = t0 + (t1 - t0) * tau
    if q_t >= 1:
        t[0], t[-1] = t0, t1
    return t


def to_tau(t, t0: float, t1: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tau = (t - t0) / (t1 - t0)
    tau = np.where(t == t0, 0.0, tau)
    return np.where(t == t1, 1.0, tau)


@dataclass(frozen=True, eq=False)
class DiscreteLevelSet:
    """phi^lin (P1 in space) and phi_h (P^{q_s} in space), both P^{q_t} in time on one slab.

    ``lin[v, j]`` is the value at vertex v and time node j; ``ho[i, j]`` the
    value at global P^{q_s} node i.
    """

    slab: int
    t0: float
    t1: float
    q_s: int
    q_t: int
    mesh: BackgroundMesh
    lin: np.ndarray
    ho: np.ndarray
    time_nodes: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def time_basis(self, t) -> np.ndarray:
        return lagrange(self.q_t).eval(to_tau(t, self.t0, self.t1))

    def time_basis_dt(self, t) -> np.ndarray:
        return lagrange(self.q_t).deriv(to_tau(t, self.t0, self.t1)) / self.dt

    def vertex_values(self, t) -> np.ndarray:
        """phi^lin at all vertices; shape (len(t), n_vertices)."""
        return self.time_basis(t) @ self.lin.T

    def vertex_dvalues(self, t) -> np.ndarray:
        return self.time_basis_dt(t) @ self.lin.T

    def vertex_poly(self, v: int) -> np.ndarray:
        """Power coefficients in the slab coordinate tau of the trace at vertex v."""
        return lagrange(self.q_t).monomial_coefficients(self.lin[v])

    def vertex_trace_zero(self, v: int, scale: Optional[float] = None) -> bool:
        scale = self.scale if scale is None else scale
        return bool(np.all(np.abs(self.lin[v]) <= 1e-14 * scale))

    @property
    def scale(self) -> float:
        s = float(np.max(np.abs(self.lin)))
        return s if s > 0 else 1.0

    def eval_lin(self, elem, xhat, t) -> np.ndarray:
        elem = np.asarray(elem, dtype=int)
        v = self.mesh.vertices
        xi = (np.asarray(xhat, dtype=float) - v[elem]) / self.mesh.lengths[elem]
        L = self.time_basis(t)
        left = np.einsum("pj,pj->p", L, self.lin[elem])
        right = np.einsum("pj,pj->p", L, self.lin[elem + 1])
        return (1.0 - xi) * left + xi * right

    def _ho_local(self, elem):
        k = self.q_s
        idx = np.asarray(elem, dtype=int)[:, None] * k + np.arange(k + 1)[None, :]
        return self.ho[idx]  # (P, k+1, q_t+1)

    def eval_ho(self, elem, x, t) -> np.ndarray:
        """phi_h on element ``elem`` (extended polynomially if x lies outside)."""
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        x = np.broadcast_to(np.asarray(x, dtype=float), elem.shape)
        xi = (x - self.mesh.vertices[elem]) / self.mesh.lengths[elem]
        N = lagrange(self.q_s).eval(xi)
        L = self.time_basis(np.broadcast_to(np.asarray(t, dtype=float), elem.shape))
        return np.einsum("pi,pij,pj->p", N, self._ho_local(elem), L)

    def eval_ho_dx(self, elem, x, t) -> np.ndarray:
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        x = np.broadcast_to(np.asarray(x, dtype=float), elem.shape)
        h = self.mesh.lengths[elem]
        xi = (x - self.mesh.vertices[elem]) / h
        dN = lagrange(self.q_s).deriv(xi) / h[:, None]
        L = self.time_basis(np.broadcast_to(np.asarray(t, dtype=float), elem.shape))
        return np.einsum("pi,pij,pj->p", dN, self._ho_local(elem), L)

    def eval_ho_global(self, x, t) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.eval_ho(self.mesh.locate(x), x, t)

    def eval_lin_global(self, x, t) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        return self.eval_lin(self.mesh.locate(x), x, t)


def interpolate_levelset(data: ProblemData, mesh: BackgroundMesh, slabs: TimePartition,
                         q_s: int, q_t: int) -> list[DiscreteLevelSet]:
    if q_s < 1 or q_t < 0:
        raise ValueError("need q_s >= 1 and q_t >= 0")
    xv = mesh.vertices
    xho = mesh.lagrange_nodes(q_s)
    out = []
    for n in range(slabs.N):
        t0, t1 = slabs.slab(n)
        tn = slab_time_nodes(t0, t1, q_t)
        lin = np.asarray(data.phi(xv[:, None], tn[None, :]), dtype=float)
        ho = np.asarray(data.phi(xho[:, None], tn[None, :]), dtype=float)
        # vertices are shared between both interpolants; keep them bitwise equal
        ho[::q_s] = lin
        for a in (lin, ho):
            a.setflags(write=False)
        out.append(DiscreteLevelSet(n, t0, t1, q_s, q_t, mesh, lin, ho, tn))
    return out


# ---------------------------------------------------------------------------
# checks on the analytic data


def exact_domain(data: ProblemData, t: float, resolution: int = 2001) -> list[tuple[float, float]]:
    """Intervals of {phi(., t) < 0} inside the background, located by sign changes and brentq."""
    a, b = data.background
    xs = np.linspace(a, b, resolution)
    ph = np.asarray(data.phi(xs, t + 0.0 * xs), dtype=float)
    pts = []
    for i in range(resolution - 1):
        if ph[i] == 0.0:
            pts.append(xs[i])
        elif ph[i] * ph[i + 1] < 0:
            pts.append(brentq(lambda y: float(data.phi(np.array(y), t)), xs[i], xs[i + 1],
                              xtol=1e-15, rtol=1e-15))
    if ph[-1] == 0.0:
        pts.append(xs[-1])
    edges = sorted(set([a, b] + pts))
    out = []
    for l, r in zip(edges[:-1], edges[1:]):
        if r - l > 0 and float(data.phi(np.array(0.5 * (l + r)), t)) < 0:
            if out and abs(out[-1][1] - l) < 1e-14:
                out[-1] = (out[-1][0], r)
            else:
                out.append((l, r))
    return out


def exact_boundary_points(data: ProblemData, t: float) -> list[tuple[float, float]]:
    """(position, outward normal) of the exact boundary points at time t."""
    out = []
    for l, r in exact_domain(data, t):
        out.append((l, -1.0))
        out.append((r, 1.0))
    return out


@dataclass
class ManufacturedReport:
    status: str  # "ok", "violated" or "skipped"
    max_pde_residual: float = float("nan")
    max_flux: float = float("nan")
    worst_pde_at: Optional[tuple[float, float]] = None
    worst_flux_at: Optional[tuple[float, float]] = None
    tolerance: float = float("nan")


def verify_manufactured(data: ProblemData, samples: int = 50, tol: float = 1e-6,
                        step: float = 1e-5, T_end: Optional[float] = None) -> ManufacturedReport:
    """Finite-difference check of the PDE and of the no-flux condition for ``u_exact``.

    First derivatives use central differences of width ``step``. The second
    derivative uses the three-point stencil with spacing ``10 * step``: at
    ``step`` itself its round-off (about eps/step^2) would exceed the tolerance.
    """
    if data.u_exact is None:
        return ManufacturedReport(status="skipped")
    u = data.u_exact
    T = data.T_end if T_end is None else T_end
    ts = np.linspace(step, T - step, samples)
    worst_r, worst_r_at = 0.0, None
    worst_q, worst_q_at = 0.0, None
    h2 = 10.0 * step
    for t in ts:
        for l, r in exact_domain(data, t):
            xs = np.linspace(l, r, samples + 2)[1:-1]
            xs = xs[(xs - h2 > l) & (xs + h2 < r)]
            if xs.size:
                ut = (u(xs, t + step) - u(xs, t - step)) / (2 * step)
                ux = (u(xs + step, t) - u(xs - step, t)) / (2 * step)
                uxx = (u(xs + h2, t) - 2 * u(xs, t) + u(xs - h2, t)) / h2**2
                res = np.abs(ut + data.w(xs, t) * ux - uxx - data.f(xs, t))
                i = int(np.argmax(res))
                if res[i] > worst_r:
                    worst_r, worst_r_at = float(res[i]), (float(xs[i]), float(t))
        for xb, _ in exact_boundary_points(data, t):
            a, b = data.background
            if xb <= a or xb >= b:
                continue
            if data.u_exact_x is not None:
                q = abs(float(data.u_exact_x(np.array(xb), t)))
            else:
                q = abs(float((u(np.array(xb + step), t) - u(np.array(xb - step), t)) / (2 * step)))
            if q > worst_q:
                worst_q, worst_q_at = q, (float(xb), float(t))
    ok = worst_r <= tol and worst_q <= tol
    return ManufacturedReport("ok" if ok else "violated", worst_r, worst_q, worst_r_at, worst_q_at, tol)


def total_concentration(data: ProblemData, g: Field, t: float, n_gauss: int = 20) -> float:
    """High-order quadrature of g(., t) over the exact domain."""
    xg, wg = gauss_legendre(n_gauss)
    s = 0.0
    for l, r in exact_domain(data, t):
        s += float(np.sum((r - l) * wg * g(l + (r - l) * xg, t)))
    return s


def concentration_balance(data: ProblemData, times, step: float = 1e-5) -> np.ndarray:
    """|d/dt int_Omega u - int_Omega f| at the given times, by central differences."""
    if data.u_exact is None:
        raise ValueError("balance check needs an exact solution")
    out = []
    for t in np.atleast_1d(times):
        dm = (total_concentration(data, data.u_exact, t + step)
              - total_concentration(data, data.u_exact, t - step)) / (2 * step)
        out.append(abs(dm - total_concentration(data, data.f, t)))
    return np.array(out)
