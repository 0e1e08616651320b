"""Isoparametric space-time mesh deformation and the exact-geometry lifting.

The displacement lives in V_h^{q_s} x P^{q_t}(I_n). At every temporal node the
nodes of elements that are cut at that instant, plus ``rings`` layers of
neighbours, move to the matching level of phi_h. One further layer blends the
displacement to zero with a C1 cubic Hermite weight. The node set depends
only on the instant, not on the slab, so slab-end values coincide.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .cutgeom import (CutTopology, PointRule, SpaceTimeQuadrature, boundary_points,
                      build_quadrature, classify)
from .errors import GeometryError
from .levelset import DiscreteLevelSet, ProblemData, interpolate_levelset, slab_time_nodes, to_tau
from .meshtime import BackgroundMesh, TimePartition
from .polynomials import lagrange

ROOT_TOL = 1e-13
ROOT_MAXIT = 50
MIN_JACOBIAN = 0.5


def hermite_decay(s):
    """C1 weight on [0, 1]: 1 at s=0, 0 at s=1, zero slope at both ends."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - 3.0 * s**2 + 2.0 * s**3


def hermite_decay_deriv(s):
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, -6.0 * s + 6.0 * s**2, 0.0)


@dataclass(eq=False)
class GeometryMapping:
    """Theta_h(xhat, t) = xhat + D(xhat, t) on one slab."""

    slab: int
    t0: float
    t1: float
    q_s: int
    q_t: int
    mesh: BackgroundMesh
    disp: np.ndarray  # (n_nodes, q_t+1)
    weights: np.ndarray  # blending weight per node and time node
    time_nodes: np.ndarray = field(repr=False)

    @property
    def is_identity(self) -> bool:
        return not np.any(self.disp)

    def _parts(self, elem, xhat, t):
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        xhat = np.broadcast_to(np.asarray(xhat, dtype=float), elem.shape)
        t = np.broadcast_to(np.asarray(t, dtype=float), elem.shape)
        h = self.mesh.lengths[elem]
        xi = (xhat - self.mesh.vertices[elem]) / h
        idx = elem[:, None] * self.q_s + np.arange(self.q_s + 1)[None, :]
        loc = self.disp[idx]  # (P, q_s+1, q_t+1)
        tau = to_tau(t, self.t0, self.t1)
        return xhat, xi, h, loc, tau

    def displacement(self, elem, xhat, t) -> np.ndarray:
        xhat, xi, h, loc, tau = self._parts(elem, xhat, t)
        if self.is_identity:
            return np.zeros_like(xhat)
        return np.einsum("pi,pij,pj->p", lagrange(self.q_s).eval(xi), loc, lagrange(self.q_t).eval(tau))

    def theta(self, elem, xhat, t) -> np.ndarray:
        xhat = np.asarray(xhat, dtype=float)
        return xhat + self.displacement(elem, xhat, t)

    def dtheta_dx(self, elem, xhat, t) -> np.ndarray:
        xhat, xi, h, loc, tau = self._parts(elem, xhat, t)
        if self.is_identity:
            return np.ones_like(xhat)
        dN = lagrange(self.q_s).deriv(xi) / h[:, None]
        return 1.0 + np.einsum("pi,pij,pj->p", dN, loc, lagrange(self.q_t).eval(tau))

    def dtheta_dt(self, elem, xhat, t) -> np.ndarray:
        xhat, xi, h, loc, tau = self._parts(elem, xhat, t)
        if self.is_identity:
            return np.zeros_like(xhat)
        dL = lagrange(self.q_t).deriv(tau) / (self.t1 - self.t0)
        return np.einsum("pi,pij,pj->p", lagrange(self.q_s).eval(xi), loc, dL)

    def invert_on(self, elem, x, t, start=None, tol: float = 1e-14, maxit: int = 30) -> np.ndarray:
        """Solve Theta|_elem(xhat, t) = x for xhat, using the element's polynomial extension."""
        elem = np.atleast_1d(np.asarray(elem, dtype=int))
        x = np.broadcast_to(np.asarray(x, dtype=float), elem.shape)
        y = x.copy() if start is None else np.array(np.broadcast_to(start, elem.shape), dtype=float)
        if self.is_identity:
            return x.copy()
        for _ in range(maxit):
            r = self.theta(elem, y, t) - x
            dy = r / self.dtheta_dx(elem, y, t)
            y = y - dy
            if np.all(np.abs(dy) <= tol * (1.0 + np.abs(y))):
                return y
        raise GeometryError(f"extended mapping inversion did not converge on slab {self.slab}")

    def preimage(self, x, t, tol: float = 1e-10):
        """(elem, xhat) with Theta(elem, xhat, t) = x; xhat must lie in elem up to ``tol``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        v = self.mesh.vertices
        elem = self.mesh.locate(x)
        xhat = x.copy()
        for _ in range(4):
            xhat = self.invert_on(elem, x, t, start=xhat)
            lo, hi = v[elem] - tol, v[elem + 1] + tol
            left, right = xhat < lo, xhat > hi
            if not (np.any(left) or np.any(right)):
                return elem, xhat
            elem = np.clip(elem - left + right, 0, self.mesh.n_elements - 1)
        raise GeometryError(f"no preimage within element tolerance on slab {self.slab}")


def mesh_velocity(mapping: GeometryMapping, x, t) -> np.ndarray:
    """Mesh velocity dTheta/dt evaluated at the preimage of physical x."""
    elem, xhat = mapping.preimage(x, t)
    return mapping.dtheta_dt(elem, xhat, t)


# ---------------------------------------------------------------------------
# construction


def _solve_level(ls: DiscreteLevelSet, x0: float, target: float, t: float, span: float) -> float:
    """Root of phi_h(y, t) = target near x0 by Newton safeguarded with bisection."""
    mesh = ls.mesh
    tt = np.array([t])

    def g(y):
        yy = np.array([y])
        e = mesh.locate(yy)
        return float(ls.eval_ho(e, yy, tt)[0]) - target, float(ls.eval_ho_dx(e, yy, tt)[0])

    g0, d0 = g(x0)
    if abs(g0) <= 1e-15 * ls.scale:
        return x0
    lo, hi = max(mesh.a, x0 - span), min(mesh.b, x0 + span)
    glo, ghi = g(lo)[0], g(hi)[0]
    toward_left = d0 != 0.0 and -g0 / d0 < 0
    sides = [(lo, x0, glo, g0), (x0, hi, g0, ghi)]
    if not toward_left:
        sides.reverse()
    for a, b, ga, gb in sides:
        if ga == 0.0:
            return a
        if gb == 0.0:
            return b
        if ga * gb < 0:
            break
    else:
        raise GeometryError(f"no level crossing of phi_h within one element of x={x0:.6g}, t={t:.6g}")
    y = x0 if a < x0 < b else 0.5 * (a + b)
    for _ in range(ROOT_MAXIT):
        gy, dy = g(y)
        if gy == 0.0:
            return y
        if (gy < 0) == (ga < 0):
            a, ga = y, gy
        else:
            b = y
        step_ok = dy != 0.0
        y_new = y - gy / dy if step_ok else 0.5 * (a + b)
        if not (a < y_new < b):
            y_new = 0.5 * (a + b)
        if abs(y_new - y) <= ROOT_TOL * max(1.0, abs(y)):
            return y_new
        y = y_new
    raise GeometryError(f"level root did not converge at x={x0:.6g}, t={t:.6g}")


def _solve_levels(ls: DiscreteLevelSet, x0: np.ndarray, target: np.ndarray, t: float,
                  span: np.ndarray) -> np.ndarray:
    """Vectorised version of :func:`_solve_level`; unresolved nodes fall back to it."""
    mesh = ls.mesh
    tt = np.full(x0.shape, t)

    def g(y):
        e = mesh.locate(y)
        return ls.eval_ho(e, y, tt) - target, ls.eval_ho_dx(e, y, tt)

    g0, d0 = g(x0)
    lo = np.maximum(mesh.a, x0 - span)
    hi = np.minimum(mesh.b, x0 + span)
    glo, ghi = g(lo)[0], g(hi)[0]
    left = (d0 != 0) & (-g0 / np.where(d0 == 0, 1.0, d0) < 0)
    # preferred side first, as in the scalar search
    first_ok = np.where(left, glo * g0 <= 0, g0 * ghi <= 0)
    use_left = np.where(first_ok, left, ~left)
    a = np.where(use_left, lo, x0)
    b = np.where(use_left, x0, hi)
    ga = np.where(use_left, glo, g0)
    gb = np.where(use_left, g0, ghi)
    ok = ga * gb <= 0
    y = x0.copy()
    done = np.abs(g0) <= 1e-15 * ls.scale
    y = np.where(done | ~ok, x0, np.where((a < x0) & (x0 < b), x0, 0.5 * (a + b)))
    done |= ~ok
    for _ in range(ROOT_MAXIT):
        if np.all(done):
            break
        gy, dy = g(y)
        hit = gy == 0.0
        to_a = (gy < 0) == (ga < 0)
        a = np.where(to_a & ~done, y, a)
        ga = np.where(to_a & ~done, gy, ga)
        b = np.where(~to_a & ~done, y, b)
        y_new = y - gy / np.where(dy == 0, np.inf, dy)
        bad = (dy == 0) | ~((a < y_new) & (y_new < b))
        y_new = np.where(bad, 0.5 * (a + b), y_new)
        conv = hit | (np.abs(y_new - y) <= ROOT_TOL * np.maximum(1.0, np.abs(y)))
        y = np.where(done | hit, y, y_new)
        done |= conv
    out = y
    for i in np.flatnonzero(~ok | ~done):
        out[i] = _solve_level(ls, float(x0[i]), float(target[i]), t, float(span[i]))
    return out


def _instant_cut(vals: np.ndarray) -> np.ndarray:
    lo = np.minimum(vals[:-1], vals[1:])
    hi = np.maximum(vals[:-1], vals[1:])
    return (lo <= 0) & (hi >= 0) & ~((vals[:-1] == 0) & (vals[1:] == 0))


def blending_weights(mesh: BackgroundMesh, q_s: int, cut: np.ndarray, rings: int) -> np.ndarray:
    """Nodal weight: 1 within ``rings`` of a cut element, Hermite decay over the next one."""
    n_el = mesh.n_elements
    w = np.zeros(n_el * q_s + 1)
    idx = np.flatnonzero(cut)
    if idx.size == 0:
        return w
    el = np.arange(n_el)
    dist = np.min(np.abs(el[:, None] - idx[None, :]), axis=1)
    xi = lagrange(q_s).nodes
    for e in el:
        nodes = e * q_s + np.arange(q_s + 1)
        if dist[e] <= rings:
            w[nodes] = 1.0
        elif dist[e] == rings + 1:
            vals = np.zeros(q_s + 1)
            if e > 0 and dist[e - 1] == rings:
                vals = np.maximum(vals, hermite_decay(xi))
            if e < n_el - 1 and dist[e + 1] == rings:
                vals = np.maximum(vals, hermite_decay(1.0 - xi))
            w[nodes] = np.maximum(w[nodes], vals)
    return w


def build_mapping(levelset: DiscreteLevelSet, topology: CutTopology, data: Optional[ProblemData] = None,
                  rings: int = 1, deform: bool = True) -> GeometryMapping:
    ls = levelset
    mesh = ls.mesh
    q_s, q_t = ls.q_s, ls.q_t
    n_nodes = mesh.n_elements * q_s + 1
    disp = np.zeros((n_nodes, q_t + 1))
    weights = np.zeros((n_nodes, q_t + 1))
    if deform and q_s > 1:
        xnodes = mesh.lagrange_nodes(q_s)
        xi = lagrange(q_s).nodes
        h = mesh.lengths
        for j, tj in enumerate(ls.time_nodes):
            vals = ls.lin[:, j]
            wj = blending_weights(mesh, q_s, _instant_cut(vals), rings)
            weights[:, j] = wj
            # level of phi^lin at every node, element by element
            target = np.empty(n_nodes)
            for e in range(mesh.n_elements):
                target[e * q_s + np.arange(q_s + 1)] = (1 - xi) * vals[e] + xi * vals[e + 1]
            target[::q_s] = vals
            idx = np.flatnonzero(wj > 0)
            if idx.size:
                el = np.minimum(idx // q_s, mesh.n_elements - 1)
                y = _solve_levels(ls, xnodes[idx], target[idx], float(tj), h[el])
                disp[idx, j] = wj[idx] * (y - xnodes[idx])
        # every element cut during the slab must be fully displaced at all time nodes
        for e in topology.cut:
            nodes = e * q_s + np.arange(q_s + 1)
            if np.any(weights[nodes] < 1.0):
                raise GeometryError(
                    f"slab {ls.slab}: cut element {e} leaves the deformation band; "
                    "increase the band rings or reduce the time step")
    disp.setflags(write=False)
    return GeometryMapping(ls.slab, ls.t0, ls.t1, q_s, q_t, mesh, disp, weights, ls.time_nodes)


def _map_rule(mapping: GeometryMapping, rule: PointRule, boundary: bool = False) -> PointRule:
    if rule.size == 0 or mapping.is_identity:
        return replace(rule, x=rule.xhat.copy(), jac=np.ones_like(rule.w),
                       theta_t=np.zeros_like(rule.w),
                       velocity=rule.xdot.copy() if boundary else None)
    x = mapping.theta(rule.elem, rule.xhat, rule.t)
    jac = mapping.dtheta_dx(rule.elem, rule.xhat, rule.t)
    tht = mapping.dtheta_dt(rule.elem, rule.xhat, rule.t)
    if np.any(jac <= 0):
        raise GeometryError(f"nonpositive mapping Jacobian on slab {mapping.slab}")
    if np.min(jac) < MIN_JACOBIAN:
        warnings.warn(f"mapping Jacobian {np.min(jac):.3g} below {MIN_JACOBIAN} on slab {mapping.slab}",
                      RuntimeWarning, stacklevel=3)
    vel = jac * rule.xdot + tht if boundary else None
    return replace(rule, x=x, jac=jac, theta_t=tht, velocity=vel)


def push_forward(mapping: GeometryMapping, rule: PointRule, boundary: bool = False) -> PointRule:
    """Mapped copy of a reference rule (x, Jacobian and mesh velocity filled in)."""
    return _map_rule(mapping, rule, boundary)


def physical_quadrature(mapping: GeometryMapping, quad: SpaceTimeQuadrature,
                        map_start: bool = True) -> SpaceTimeQuadrature:
    """Push the reference rules forward; weights are scaled by dTheta/dx when used."""
    return replace(
        quad,
        volume=_map_rule(mapping, quad.volume),
        boundary=_map_rule(mapping, quad.boundary, boundary=True),
        start=_map_rule(mapping, quad.start) if map_start else quad.start,
        end=_map_rule(mapping, quad.end),
    )


def dump_displacement_csv(mapping: GeometryMapping, path) -> None:
    xs = mapping.mesh.lagrange_nodes(mapping.q_s)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "x", "t", "displacement"])
        for i, x in enumerate(xs):
            for j, t in enumerate(mapping.time_nodes):
                wr.writerow([i, repr(float(x)), repr(float(t)), repr(float(mapping.disp[i, j]))])


# ---------------------------------------------------------------------------
# slab geometry bundle


@dataclass(eq=False)
class SlabGeometry:
    slab: int
    t0: float
    t1: float
    mesh: BackgroundMesh
    levelset: DiscreteLevelSet
    topology: CutTopology
    mapping: GeometryMapping
    quad: SpaceTimeQuadrature  # mapped rules

    @property
    def dt(self) -> float:
        return self.t1 - self.t0


def build_geometry(data: ProblemData, mesh: BackgroundMesh, slabs: TimePartition, q_s: int, q_t: int,
                   order: int, deform: bool = True, rings: int = 1) -> list[SlabGeometry]:
    """Level set, topology, mapping and mapped quadrature for every slab.

    The start slice of slab n is the end slice of slab n-1, so trace terms on
    both sides of t_n use literally the same points.
    """
    out: list[SlabGeometry] = []
    prev_end: Optional[PointRule] = None
    for ls in interpolate_levelset(data, mesh, slabs, q_s, q_t):
        top = classify(ls)
        mp = build_mapping(ls, top, data, rings=rings, deform=deform)
        quad = build_quadrature(top, ls, order, start=prev_end)
        quad = physical_quadrature(mp, quad, map_start=prev_end is None)
        out.append(SlabGeometry(ls.slab, ls.t0, ls.t1, mesh, ls, top, mp, quad))
        prev_end = quad.end
    return out


# ---------------------------------------------------------------------------
# lifting of the exact solution


def _exact_root(data: ProblemData, x0: float, t: float, span: float) -> float:
    def g(y):
        return float(data.phi(np.array(y), t)), float(data.phi_x(np.array(y), t))

    y = x0
    a, b = x0 - span, x0 + span
    ga, gb = g(a)[0], g(b)[0]
    bracketed = ga * gb < 0
    for _ in range(ROOT_MAXIT):
        gy, dy = g(y)
        if gy == 0.0:
            return y
        if bracketed:
            if (gy < 0) == (ga < 0):
                a, ga = y, gy
            else:
                b = y
        y_new = y - gy / dy if dy != 0 else 0.5 * (a + b)
        if bracketed and not (a < y_new < b):
            y_new = 0.5 * (a + b)
        if abs(y_new - y) <= ROOT_TOL * max(1.0, abs(y)):
            return y_new
        y = y_new
    raise GeometryError(f"exact boundary root did not converge near x={x0:.6g}, t={t:.6g}")


class ExactLifting:
    """Phi(x, t) moving each discrete boundary point onto the exact one.

    Phi(x, t) = x + sum_b chi(|x - X_b^h| / r) (X_b - X_b^h), with chi the C1
    Hermite cutoff, and r = min(2h, 0.45 * smallest gap between boundary points).
    """

    def __init__(self, data: ProblemData, geometry: SlabGeometry, radius_factor: float = 2.0):
        self.data = data
        self.geom = geometry
        self.h = geometry.mesh.h
        self.radius_factor = radius_factor
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, float]] = {}

    def boundary(self, t: float):
        """Discrete and exact boundary positions at time t, plus the cutoff radius."""
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        g = self.geom
        e, xh, _, _ = boundary_points(g.topology, g.levelset, t)
        Xh = g.mapping.theta(e, xh, np.full(e.size, t)) if e.size else np.zeros(0)
        a, b = g.mesh.a, g.mesh.b
        X = np.array([xv if (xv <= a or xv >= b) else _exact_root(self.data, float(xv), t, self.h)
                      for xv in Xh])
        r = self.radius_factor * self.h
        if Xh.size > 1:
            r = min(r, 0.45 * float(np.min(np.diff(np.sort(Xh)))))
        out = (Xh, X, r)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[t] = out
        return out

    def phi_map(self, x, t: float):
        """Phi and dPhi/dx at points x for a single time t."""
        x = np.asarray(x, dtype=float)
        Xh, X, r = self.boundary(t)
        y = x.copy()
        dy = np.ones_like(x)
        for xb, xe in zip(Xh, X):
            delta = xe - xb
            if delta == 0.0:
                continue
            s = np.abs(x - xb) / r
            y = y + hermite_decay(s) * delta
            dy = dy + hermite_decay_deriv(s) * np.sign(x - xb) / r * delta
        return y, dy

    def _by_time(self, x, t, fn):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        out = np.empty_like(x)
        for tv in np.unique(t):
            m = t == tv
            out[m] = fn(x[m], float(tv))
        return out

    def displacement(self, x, t) -> np.ndarray:
        return self._by_time(x, t, lambda xx, tv: self.phi_map(xx, tv)[0] - xx)

    def u(self, x, t) -> np.ndarray:
        ue = self.data.u_exact
        return self._by_time(x, t, lambda xx, tv: ue(self.phi_map(xx, tv)[0], tv))

    def u_x(self, x, t) -> np.ndarray:
        ux = self.data.u_exact_x

        def fn(xx, tv):
            y, dy = self.phi_map(xx, tv)
            if ux is not None:
                return ux(y, tv) * dy
            eps = 1e-6
            return (self.data.u_exact(y + eps, tv) - self.data.u_exact(y - eps, tv)) / (2 * eps) * dy

        return self._by_time(x, t, fn)

    def u_dt_mesh(self, elem, xhat, t, rel_step: float = 1e-6) -> np.ndarray:
        """Time derivative of u^l along fixed reference points, by central differences."""
        eps = rel_step * self.geom.dt
        mp = self.geom.mapping
        t = np.asarray(t, dtype=float)
        xp = mp.theta(elem, xhat, t + eps)
        xm = mp.theta(elem, xhat, t - eps)
        return (self.u(xp, t + eps) - self.u(xm, t - eps)) / (2 * eps)


def build_lifting(data: ProblemData, geometry: SlabGeometry) -> ExactLifting:
    if data.u_exact is None:
        raise ValueError("lifting needs an exact solution")
    return ExactLifting(data, geometry)
