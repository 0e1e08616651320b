"""Cut tensor-product slab spaces, interpolation, mean splitting and form assembly.

All integrals are evaluated on the reference geometry Q^lin and pushed to
Q^h by the mapping: with x = Theta(xhat, t) and J = dTheta/dxhat,

    dx = J dxhat,  d_x u = d_xhat u / J,  d_t^Theta u = d_t uhat,
    d_t u = d_t uhat - Theta_t d_x u.

Matrices follow the convention ``A[i, j] = a(phi_j, phi_i)`` (rows = test).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix

from .cutgeom import CutTopology, PointRule, element_quadrature
from .errors import EmptyDomainError, GeometryError
from .levelset import ProblemData, slab_time_nodes, to_tau
from .mapping import SlabGeometry
from .meshtime import BackgroundMesh
from .polynomials import gauss_legendre, lagrange, points_for_order


class TensorBasis:
    """Local P^{k_s} x P^{k_t} Lagrange basis on T x [t0, t1]; local index i*(k_t+1) + j."""

    def __init__(self, mesh: BackgroundMesh, k_s: int, k_t: int, t0: float, t1: float):
        self.mesh, self.k_s, self.k_t, self.t0, self.t1 = mesh, k_s, k_t, t0, t1
        self.nloc = (k_s + 1) * (k_t + 1)

    def eval(self, elem, xhat, t, derivs: bool = True):
        """Values, d/dxhat and d/dt of all local functions; xhat may leave the element."""
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        xhat = np.broadcast_to(np.asarray(xhat, dtype=float), elem.shape)
        t = np.broadcast_to(np.asarray(t, dtype=float), elem.shape)
        h = self.mesh.lengths[elem]
        xi = (xhat - self.mesh.vertices[elem]) / h
        tau = to_tau(t, self.t0, self.t1)
        bs, bt = lagrange(self.k_s), lagrange(self.k_t)
        N, L = bs.eval(xi), bt.eval(tau)
        P = elem.size
        val = (N[:, :, None] * L[:, None, :]).reshape(P, -1)
        if not derivs:
            return val, None, None
        dN = bs.deriv(xi) / h[:, None]
        dL = bt.deriv(tau) / (self.t1 - self.t0)
        dx = (dN[:, :, None] * L[:, None, :]).reshape(P, -1)
        dt = (N[:, :, None] * dL[:, None, :]).reshape(P, -1)
        return val, dx, dt


@dataclass(eq=False)
class SlabSpace:
    """W_h^{n,k}: continuous P^{k_s} on the active elements, P^{k_t} in time."""

    slab: int
    t0: float
    t1: float
    k_s: int
    k_t: int
    mesh: BackgroundMesh
    active: np.ndarray
    elem_dofs: np.ndarray  # (n_active, k_s+1) spatial dof ids
    node_x: np.ndarray  # coordinate of each spatial dof
    global_node: np.ndarray  # background P^{k_s} node id of each spatial dof
    _row: np.ndarray = field(repr=False)

    @property
    def n_time(self) -> int:
        return self.k_t + 1

    @property
    def n_spatial(self) -> int:
        return self.node_x.size

    @property
    def dim(self) -> int:
        return self.n_spatial * self.n_time

    @property
    def time_nodes(self) -> np.ndarray:
        return slab_time_nodes(self.t0, self.t1, self.k_t)

    @property
    def basis(self) -> TensorBasis:
        return TensorBasis(self.mesh, self.k_s, self.k_t, self.t0, self.t1)

    def dof(self, spatial: int, time_node: int) -> int:
        return spatial * self.n_time + time_node

    def dofs(self, elem) -> np.ndarray:
        """Global dofs of the local basis on each element; shape (P, nloc)."""
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        rows = self._row[elem]
        if np.any(rows < 0):
            raise GeometryError(f"slab {self.slab}: point on an inactive element")
        sp = self.elem_dofs[rows]  # (P, k_s+1)
        return (sp[:, :, None] * self.n_time + np.arange(self.n_time)[None, None, :]).reshape(elem.size, -1)

    def is_active(self, elem) -> np.ndarray:
        return self._row[np.asarray(elem, dtype=int)] >= 0

    def evaluate(self, coeffs: np.ndarray, elem, xhat, t):
        """(value, d/dxhat, d/dt) of the reference expansion at reference points."""
        val, dx, dt = self.basis.eval(elem, xhat, t)
        c = np.asarray(coeffs)[self.dofs(elem)]
        return (np.einsum("pa,pa->p", val, c), np.einsum("pa,pa->p", dx, c),
                np.einsum("pa,pa->p", dt, c))

    def trace_dofs(self, end: bool = True) -> np.ndarray:
        """Dofs carrying the trace at t_n (end) or t_{n-1} (start); all of them for k_t = 0."""
        if self.k_t == 0:
            return np.arange(self.dim)
        j = self.n_time - 1 if end else 0
        return np.arange(self.n_spatial) * self.n_time + j


def build_space(topology: CutTopology, k_s: int, k_t: int, mesh: Optional[BackgroundMesh] = None) -> SlabSpace:
    mesh = topology.mesh if mesh is None else mesh
    if k_s < 1 or k_t < 0:
        raise ValueError("need k_s >= 1 and k_t >= 0")
    active = topology.active
    if active.size == 0:
        raise EmptyDomainError(f"domain does not intersect slab {topology.slab}")
    gnodes = mesh.lagrange_nodes(k_s)
    seen: dict[int, int] = {}
    elem_dofs = np.empty((active.size, k_s + 1), dtype=int)
    order = []
    for r, e in enumerate(active):
        for i in range(k_s + 1):
            g = int(e) * k_s + i
            if g not in seen:
                seen[g] = len(order)
                order.append(g)
            elem_dofs[r, i] = seen[g]
    order = np.array(order, dtype=int)
    row = np.full(mesh.n_elements, -1, dtype=int)
    row[active] = np.arange(active.size)
    return SlabSpace(topology.slab, topology.t0, topology.t1, k_s, k_t, mesh, active,
                     elem_dofs, gnodes[order], order, row)


# ---------------------------------------------------------------------------
# interpolation and mean splitting


def interpolate(space: SlabSpace, g: Callable) -> np.ndarray:
    """Nodal interpolant at (spatial node, time node) pairs of a function of reference (xhat, t)."""
    X = np.repeat(space.node_x, space.n_time)
    T = np.tile(space.time_nodes, space.n_spatial)
    return np.asarray(g(X, T), dtype=float) * np.ones(space.dim)


def interpolate_physical(space: SlabSpace, geom: SlabGeometry, g: Callable) -> np.ndarray:
    """Interpolant of g o Theta, i.e. nodal values of g at mapped nodes."""
    X = np.repeat(space.node_x, space.n_time)
    T = np.tile(space.time_nodes, space.n_spatial)
    # the displacement is continuous, so any element containing the node will do
    elem = space.mesh.locate(X)
    return np.asarray(g(geom.mapping.theta(elem, X, T), T), dtype=float)


def slice_integral(space: SlabSpace, coeffs: np.ndarray, rule: PointRule) -> float:
    if rule.size == 0:
        return 0.0
    val, _, _ = space.evaluate(coeffs, rule.elem, rule.xhat, rule.t)
    return float(np.sum(rule.physical_weights * val))


def mean_split(space: SlabSpace, coeffs: np.ndarray, end_rule: PointRule):
    """Split u = mean * 1 + meanfree with zero mean of the meanfree part at t_n."""
    meas = end_rule.measure()
    if not meas > 0:
        raise EmptyDomainError("vanishing slice measure")
    mean = slice_integral(space, coeffs, end_rule) / meas
    return mean, np.asarray(coeffs, dtype=float) - mean


# ---------------------------------------------------------------------------
# assembly kernels


def _matrix(dim: int, rows: np.ndarray, test: np.ndarray, cols: np.ndarray, trial: np.ndarray,
            w: np.ndarray, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    shape = (dim, dim) if shape is None else shape
    if w.size == 0:
        return np.zeros(shape)
    loc = np.einsum("p,pa,pb->pab", w, test, trial)
    R = np.broadcast_to(rows[:, :, None], loc.shape)
    C = np.broadcast_to(cols[:, None, :], loc.shape)
    return coo_matrix((loc.ravel(), (R.ravel(), C.ravel())), shape=shape).toarray()


def _vector(dim: int, rows: np.ndarray, test: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.size == 0:
        return np.zeros(dim)
    return np.bincount(rows.ravel(), weights=(w[:, None] * test).ravel(), minlength=dim)


def _on_space(space: SlabSpace, rule: PointRule, tol: float = 1e-14) -> PointRule:
    act = space.is_active(rule.elem)
    if np.all(act):
        return rule
    if np.any(np.abs(rule.w[~act]) > tol):
        raise GeometryError(f"slab {space.slab}: quadrature weight on an inactive element")
    return rule.subset(act)


def mass_matrix(space: SlabSpace, rule: PointRule) -> np.ndarray:
    rule = _on_space(space, rule)
    val, _, _ = space.basis.eval(rule.elem, rule.xhat, rule.t, derivs=False)
    d = space.dofs(rule.elem)
    return _matrix(space.dim, d, val, d, val, rule.physical_weights)


def stiffness_matrix(space: SlabSpace, rule: PointRule) -> np.ndarray:
    rule = _on_space(space, rule)
    _, dx, _ = space.basis.eval(rule.elem, rule.xhat, rule.t)
    d = space.dofs(rule.elem)
    return _matrix(space.dim, d, dx, d, dx, rule.w / rule.jac)


def time_derivative_mass(space: SlabSpace, rule: PointRule) -> np.ndarray:
    """int d_t^Theta u d_t^Theta v over the slab (without the dt factor)."""
    rule = _on_space(space, rule)
    _, _, dt = space.basis.eval(rule.elem, rule.xhat, rule.t)
    d = space.dofs(rule.elem)
    return _matrix(space.dim, d, dt, d, dt, rule.physical_weights)


def convection_matrix(space: SlabSpace, rule: PointRule, w: Callable) -> np.ndarray:
    """(d_t u + w d_x u, v) on the deformed slab."""
    rule = _on_space(space, rule)
    val, dx, dt = space.basis.eval(rule.elem, rule.xhat, rule.t)
    wv = np.asarray(w(rule.x, rule.t), dtype=float) * np.ones(rule.size)
    trial = dt * rule.jac[:, None] + (wv - rule.theta_t)[:, None] * dx
    d = space.dofs(rule.elem)
    return _matrix(space.dim, d, val, d, trial, rule.w)


def load_vector(space: SlabSpace, rule: PointRule, f: Callable) -> np.ndarray:
    rule = _on_space(space, rule)
    val, _, _ = space.basis.eval(rule.elem, rule.xhat, rule.t, derivs=False)
    fv = np.asarray(f(rule.x, rule.t), dtype=float) * np.ones(rule.size)
    return _vector(space.dim, space.dofs(rule.elem), val, rule.physical_weights * fv)


def trace_row(space: SlabSpace, rule: PointRule) -> np.ndarray:
    """Entries (v_i, 1) over a time slice."""
    return load_vector(space, rule, lambda x, t: 1.0)


def coupling_matrix(space: SlabSpace, prev: SlabSpace, rule: PointRule) -> np.ndarray:
    """C[i, j] = (prev_j, v_i) on the slice at the shared time t_{n-1}."""
    a = _on_space(space, rule)
    a = _on_space(prev, a)
    vi, _, _ = space.basis.eval(a.elem, a.xhat, a.t, derivs=False)
    vj, _, _ = prev.basis.eval(a.elem, a.xhat, a.t, derivs=False)
    return _matrix(space.dim, space.dofs(a.elem), vi, prev.dofs(a.elem), vj,
                   a.physical_weights, shape=(space.dim, prev.dim))


def boundary_matrix(space: SlabSpace, rule: PointRule, weight: Optional[np.ndarray] = None) -> np.ndarray:
    """int over the lateral boundary of weight * u v (points carry unit measure in 1D)."""
    rule = _on_space(space, rule)
    val, _, _ = space.basis.eval(rule.elem, rule.xhat, rule.t, derivs=False)
    d = space.dofs(rule.elem)
    wt = rule.w if weight is None else rule.w * weight
    return _matrix(space.dim, d, val, d, val, wt)


def flux_weight(rule: PointRule, w: Callable) -> np.ndarray:
    """(w - V_h) n at boundary points."""
    wv = np.asarray(w(rule.x, rule.t), dtype=float) * np.ones(rule.size)
    return (wv - rule.velocity) * rule.normal


# ---------------------------------------------------------------------------
# ghost penalty


def gp_scaling(gamma_j: float, dt: float, h: float) -> float:
    """gamma_tilde / h^2 with gamma_tilde = (1 + dt/h) gamma_J."""
    return (1.0 + dt / h) * gamma_j / h**2


def facet_jump_data(geom: SlabGeometry, basis: TensorBasis, facet: int, order: int):
    """Quadrature of the patch jump on facet ``facet``.

    Returns (B1, B2, w): the jump at point p of the pair (c1, c2) of local
    coefficient vectors on T1 = facet-1 and T2 = facet is B1[p] @ c1 - B2[p] @ c2,
    and w[p] is the physical weight (time x space x Jacobian).
    """
    mesh, mp = geom.mesh, geom.mapping
    e1, e2 = mesh.facet_elements(facet)
    B1s, B2s, ws = [], [], []
    for own, other in ((e1, e2), (e2, e1)):
        r = element_quadrature(mesh, [own], geom.t0, geom.t1, order)
        x = mp.theta(r.elem, r.xhat, r.t)
        jac = mp.dtheta_dx(r.elem, r.xhat, r.t)
        psi = mp.invert_on(np.full(r.size, other), x, r.t, start=r.xhat)
        v_own, _, _ = basis.eval(r.elem, r.xhat, r.t, derivs=False)
        v_oth, _, _ = basis.eval(np.full(r.size, other), psi, r.t, derivs=False)
        if own == e1:
            B1s.append(v_own)
            B2s.append(v_oth)
        else:
            B1s.append(v_oth)
            B2s.append(v_own)
        ws.append(r.w * jac)
    return np.vstack(B1s), np.vstack(B2s), np.concatenate(ws)


def facet_penalty(geom: SlabGeometry, basis: TensorBasis, facet: int, c1: np.ndarray, c2: np.ndarray,
                  gamma_j: float, order: int) -> float:
    """j_F for element-local coefficient vectors on the two sides of ``facet``."""
    B1, B2, w = facet_jump_data(geom, basis, facet, order)
    jump = B1 @ np.asarray(c1, dtype=float) - B2 @ np.asarray(c2, dtype=float)
    return gp_scaling(gamma_j, geom.dt, geom.mesh.h) * float(np.sum(w * jump**2))


def ghost_penalty_matrix(space: SlabSpace, geom: SlabGeometry, gamma_j: float, order: int) -> np.ndarray:
    J = np.zeros((space.dim, space.dim))
    mesh = geom.mesh
    scale = gp_scaling(gamma_j, geom.dt, mesh.h)
    basis = space.basis
    for f in geom.topology.ghost_facets:
        e1, e2 = mesh.facet_elements(int(f))
        B1, B2, w = facet_jump_data(geom, basis, int(f), order)
        B = np.hstack([B1, -B2])
        d = np.concatenate([space.dofs(e1)[0], space.dofs(e2)[0]])
        loc = (B * (w * scale)[:, None]).T @ B
        np.add.at(J, (d[:, None], d[None, :]), loc)
    return 0.5 * (J + J.T)


# ---------------------------------------------------------------------------
# slab systems


@dataclass(eq=False)
class SlabSystem:
    slab: int
    space: SlabSpace
    conv: np.ndarray  # (d_t u + w d_x u, v)
    stiff: np.ndarray
    mass_start: np.ndarray  # (u_+, v_+) at t_{n-1}
    mass_end: np.ndarray  # (u_-, v_-) at t_n
    J: np.ndarray
    load: np.ndarray
    coupling: np.ndarray  # previous trace tested with v_+ at t_{n-1}
    c: np.ndarray  # (v_-, 1) at t_n
    gamma_j: float
    gamma_tilde: float
    K: Optional[float] = None
    coupling_matrix: Optional[np.ndarray] = None

    @property
    def A_Bh(self) -> np.ndarray:
        return self.conv + self.stiff + self.mass_start

    @property
    def A_Bmc(self) -> np.ndarray:
        return -self.conv.T + self.stiff + self.mass_end

    def apply_mean_penalty(self, u: np.ndarray) -> np.ndarray:
        """K (c.u) c, never formed densely."""
        return (self.K or 0.0) * float(self.c @ u) * self.c


def assemble(space: SlabSpace, geom: SlabGeometry, data: ProblemData, prev=None,
             gamma_j: float = 1.0, K: Optional[float] = None, order: Optional[int] = None) -> SlabSystem:
    """All blocks of the slab system.

    ``prev`` is the previous :class:`~stcutfem.solver.SlabSolution` (or any
    object with ``space`` and ``coeffs``); for the first slab the initial
    data enters through the start-slice load instead.
    """
    q = geom.quad
    order = q.order if order is None else order
    conv = convection_matrix(space, q.volume, data.w)
    stiff = stiffness_matrix(space, q.volume)
    m0 = mass_matrix(space, q.start)
    m1 = mass_matrix(space, q.end)
    J = ghost_penalty_matrix(space, geom, gamma_j, order) if gamma_j else np.zeros_like(stiff)
    load = load_vector(space, q.volume, data.f)
    C = None
    if prev is None:
        if space.slab != 0:
            raise ValueError(f"slab {space.slab} needs the previous trace")
        coupling = load_vector(space, q.start, lambda x, t: data.u0(x))
    else:
        C = coupling_matrix(space, prev.space, q.start)
        coupling = C @ prev.coeffs
    c = trace_row(space, q.end)
    gt = (1.0 + geom.dt / geom.mesh.h) * gamma_j
    return SlabSystem(space.slab, space, conv, stiff, m0, m1, J, load, coupling, c,
                      gamma_j, gt, K, C)
