"""Element classification per slab and quadrature on the piecewise-linear reference geometry.

Within a slab, phi^lin is affine in x on each element and a degree-q_t
polynomial in t at each vertex. The slab is split at the roots of the vertex
traces, so that on every sub-interval each element is uniformly inside,
outside or cut by a single point x_Gamma(t).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import DegenerateLevelSetError
from .levelset import DiscreteLevelSet
from .polynomials import gauss_legendre, points_for_order

INSIDE, CUTSTATE, OUTSIDE = 1, 0, -1
ROOT_IMAG_TOL = 1e-7
MERGE_TOL = 1e-12
CUT_TIME_FACTOR = 3


class Marker(IntEnum):
    EXTERIOR = 0
    CUT = 1
    INTERIOR = 2


@dataclass(frozen=True, eq=False)
class CutTopology:
    slab: int
    t0: float
    t1: float
    markers: np.ndarray
    breakpoints: np.ndarray
    status: np.ndarray  # (n_sub, n_elements) in {INSIDE, CUTSTATE, OUTSIDE}
    zero_vertices: np.ndarray  # vertices whose trace vanishes on the whole slab
    ghost_facets: np.ndarray
    mesh: object = field(default=None, repr=False)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.markers != Marker.EXTERIOR)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.markers == Marker.INTERIOR)

    @property
    def cut(self) -> np.ndarray:
        return np.flatnonzero(self.markers == Marker.CUT)

    @property
    def sub_intervals(self) -> list[tuple[float, float]]:
        e = [self.t0, *self.breakpoints.tolist(), self.t1]
        return list(zip(e[:-1], e[1:]))


@dataclass
class PointRule:
    """Quadrature points with optional mapped data.

    ``x``/``jac``/``theta_t`` are filled by the mapping module; until then they
    describe the identity map.
    """

    elem: np.ndarray
    xhat: np.ndarray
    t: np.ndarray
    w: np.ndarray
    normal: Optional[np.ndarray] = None
    xdot: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    jac: Optional[np.ndarray] = None
    theta_t: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None  # d/dt of the mapped boundary point

    def __post_init__(self):
        if self.x is None:
            self.x = self.xhat.copy()
        if self.jac is None:
            self.jac = np.ones_like(self.w)
        if self.theta_t is None:
            self.theta_t = np.zeros_like(self.w)
        if self.normal is not None and self.velocity is None and self.xdot is not None:
            self.velocity = self.xdot.copy()

    @property
    def size(self) -> int:
        return self.w.size

    @property
    def physical_weights(self) -> np.ndarray:
        return self.w * self.jac

    def measure(self) -> float:
        return float(np.sum(self.physical_weights))

    def subset(self, mask) -> "PointRule":
        kw = {}
        for name in ("elem", "xhat", "t", "w", "normal", "xdot", "x", "jac", "theta_t", "velocity"):
            val = getattr(self, name)
            kw[name] = None if val is None else val[mask]
        return PointRule(**kw)

    @staticmethod
    def empty(boundary: bool = False) -> "PointRule":
        z = np.zeros(0)
        return PointRule(np.zeros(0, dtype=int), z, z.copy(), z.copy(),
                         normal=z.copy() if boundary else None,
                         xdot=z.copy() if boundary else None)

    @staticmethod
    def concat(rules: list["PointRule"], boundary: bool = False) -> "PointRule":
        rules = [r for r in rules if r.size]
        if not rules:
            return PointRule.empty(boundary)
        kw = {}
        for name in ("elem", "xhat", "t", "w", "normal", "xdot", "x", "jac", "theta_t", "velocity"):
            vals = [getattr(r, name) for r in rules]
            kw[name] = None if any(v is None for v in vals) else np.concatenate(vals)
        return PointRule(**kw)


@dataclass(eq=False)
class SpaceTimeQuadrature:
    slab: int
    order: int
    volume: PointRule
    boundary: PointRule
    start: PointRule  # slice at t_{n-1}
    end: PointRule  # slice at t_n
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# classification


def _real_roots_in_unit(coeffs: np.ndarray, scale: float) -> list[float]:
    c = np.array(coeffs, dtype=float)
    c[np.abs(c) < 1e-15 * scale] = 0.0
    nz = np.flatnonzero(c)
    if nz.size == 0 or nz[-1] == 0:
        return []
    c = c[: nz[-1] + 1]
    roots = np.polynomial.polynomial.polyroots(c)
    out = []
    for r in roots:
        if abs(r.imag) <= ROOT_IMAG_TOL * (1.0 + abs(r.real)):
            x = float(r.real)
            if MERGE_TOL < x < 1.0 - MERGE_TOL:
                out.append(x)
    return out


def temporal_breakpoints(levelset: DiscreteLevelSet, mesh=None, slab=None) -> np.ndarray:
    """Sorted times inside the slab where some vertex trace of phi^lin changes sign."""
    ls = levelset
    scale = ls.scale
    taus: list[float] = []
    for v in range(ls.mesh.n_vertices):
        vals = ls.lin[v]
        if ls.vertex_trace_zero(v, scale):
            continue
        if ls.q_t <= 1 and (np.all(vals > 0) or np.all(vals < 0)):
            continue  # affine trace keeps its sign
        taus.extend(_real_roots_in_unit(ls.vertex_poly(v), scale))
    taus.sort()
    merged: list[float] = []
    for x in taus:
        if not merged or x - merged[-1] > MERGE_TOL:
            merged.append(x)
    return ls.t0 + ls.dt * np.array(merged)


def _element_status(signs: np.ndarray) -> np.ndarray:
    sl, sr = signs[..., :-1], signs[..., 1:]
    mx, mn = np.maximum(sl, sr), np.minimum(sl, sr)
    if np.any((sl == 0) & (sr == 0)):
        bad = np.argwhere((sl == 0) & (sr == 0))
        raise DegenerateLevelSetError(f"phi^lin vanishes identically on element(s) {bad[:, -1].tolist()}")
    st = np.full(sl.shape, CUTSTATE, dtype=int)
    st[(mx <= 0) & (mn < 0)] = INSIDE
    st[(mn >= 0) & (mx > 0)] = OUTSIDE
    return st


def _zero_vertices(ls: DiscreteLevelSet) -> np.ndarray:
    scale = ls.scale
    return np.array([ls.vertex_trace_zero(v, scale) for v in range(ls.mesh.n_vertices)], dtype=bool)


def _signs(values: np.ndarray, zero: np.ndarray) -> np.ndarray:
    s = np.sign(values).astype(int)
    s[..., zero] = 0
    return s


def classify(levelset: DiscreteLevelSet, mesh=None, slab=None) -> CutTopology:
    ls = levelset
    mesh = ls.mesh
    bps = temporal_breakpoints(ls)
    edges = np.concatenate(([ls.t0], bps, [ls.t1]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    zero = _zero_vertices(ls)
    status = _element_status(_signs(ls.vertex_values(mids), zero))
    markers = np.full(mesh.n_elements, Marker.CUT, dtype=int)
    markers[np.all(status == INSIDE, axis=0)] = Marker.INTERIOR
    markers[np.all(status == OUTSIDE, axis=0)] = Marker.EXTERIOR
    f = mesh.interior_facets
    left, right = markers[f - 1], markers[f]
    ghost = f[(left != Marker.EXTERIOR) & (right != Marker.EXTERIOR)
              & ((left == Marker.CUT) | (right == Marker.CUT))]
    for a in (markers, bps, status, zero, ghost):
        a.setflags(write=False)
    return CutTopology(ls.slab, ls.t0, ls.t1, markers, bps, status, zero, ghost, mesh)


# ---------------------------------------------------------------------------
# quadrature


def _inside_parts(ls: DiscreteLevelSet, vals: np.ndarray, status: np.ndarray):
    """Inside sub-interval [lo, hi] of every element at each time row of ``vals``.

    ``status`` has the shape of ``vals[:, :-1]``; outside elements get lo == hi.
    """
    v = ls.mesh.vertices
    h = ls.mesh.lengths
    pl, pr = vals[:, :-1], vals[:, 1:]
    lo = np.broadcast_to(v[:-1], pl.shape).copy()
    hi = np.broadcast_to(v[1:], pl.shape).copy()
    cut = status == CUTSTATE
    xg = None
    if np.any(cut):
        denom = pl - pr
        if np.any(np.abs(denom[cut]) < 1e-14 * ls.scale):
            raise DegenerateLevelSetError("phi^lin is spatially constant on a cut element")
        with np.errstate(divide="ignore", invalid="ignore"):
            xg = v[:-1] + h * pl / denom
        left_in = cut & (pl < 0)
        right_in = cut & ~(pl < 0)
        hi[left_in] = xg[left_in]
        lo[right_in] = xg[right_in]
    out = status == OUTSIDE
    hi[out] = lo[out]
    return lo, hi, xg


def _gauss_on(lo: np.ndarray, hi: np.ndarray, n: int):
    xg, wg = gauss_legendre(n)
    length = hi - lo
    pts = lo[..., None] + length[..., None] * xg
    wts = length[..., None] * wg
    return pts, wts


def _sub_interval_rule(ls, topology, k, ta, tb, nq):
    tg, wtg = gauss_legendre(nq)
    tq = ta + (tb - ta) * tg
    wt = (tb - ta) * wtg
    return tq, wt, topology.status[k]


def volume_quadrature(topology: CutTopology, levelset: DiscreteLevelSet, order: int) -> PointRule:
    """Tensor Gauss rule on the reference space-time domain of the slab.

    The moving interface makes the time integrand on cut elements rational,
    so those get ``CUT_TIME_FACTOR`` times as many time points.
    """
    ls = levelset
    nq = points_for_order(order)
    zero = topology.zero_vertices
    rules = []
    for k, (ta, tb) in enumerate(topology.sub_intervals):
        st = topology.status[k]
        for group, nt in ((INSIDE, nq), (CUTSTATE, CUT_TIME_FACTOR * nq)):
            elems = np.flatnonzero(st == group)
            if elems.size == 0:
                continue
            tq, wt, _ = _sub_interval_rule(ls, topology, k, ta, tb, nt)
            vals = ls.vertex_values(tq)
            vals[:, zero] = 0.0
            status = np.broadcast_to(st, (tq.size, st.size))
            lo, hi, _ = _inside_parts(ls, vals, status)
            pts, wts = _gauss_on(lo[:, elems], hi[:, elems], nq)  # (nt, ne, nx)
            shape = pts.shape
            rules.append(PointRule(
                elem=np.broadcast_to(elems[None, :, None], shape).ravel().copy(),
                xhat=pts.ravel(),
                t=np.broadcast_to(tq[:, None, None], shape).ravel().copy(),
                w=(wts * wt[:, None, None]).ravel(),
            ))
    rule = PointRule.concat(rules)
    keep = rule.w > 0
    return rule.subset(keep) if not np.all(keep) else rule


def _boundary_points_at(ls, vals, dvals, status, zero):
    """Boundary points for each time row; returns flat arrays plus the row index."""
    v = ls.mesh.vertices
    h = ls.mesh.lengths
    nv = v.size
    rows, elems, xs, normals, xdots = [], [], [], [], []
    pl, pr = vals[:, :-1], vals[:, 1:]
    cut = status == CUTSTATE
    if np.any(cut):
        r, e = np.nonzero(cut)
        a, b = pl[r, e], pr[r, e]
        da, db = dvals[r, e], dvals[r, e + 1]
        denom = a - b
        if np.any(np.abs(denom) < 1e-14 * ls.scale):
            raise DegenerateLevelSetError("phi^lin is spatially constant on a cut element")
        rows.append(r)
        elems.append(e)
        xs.append(v[e] + h[e] * a / denom)
        normals.append(np.sign(b - a))
        xdots.append(h[e] * (a * db - da * b) / denom**2)
    # fitted vertices and the ends of the background interval
    nt = vals.shape[0]
    ins_pad = np.zeros((nt, nv + 1), dtype=bool)
    ins_pad[:, 1:-1] = status == INSIDE
    left_in, right_in = ins_pad[:, :-1].copy(), ins_pad[:, 1:].copy()
    # a cut element whose inside part reaches the background end
    right_in[:, 0] |= cut[:, 0] & (vals[:, 0] < 0)
    left_in[:, -1] |= cut[:, -1] & (vals[:, -1] < 0)
    zero_or_edge = vals == 0.0
    zero_or_edge[:, 0] |= vals[:, 0] < 0
    zero_or_edge[:, -1] |= vals[:, -1] < 0
    fit = zero_or_edge & (left_in ^ right_in)
    if np.any(fit):
        r, vi = np.nonzero(fit)
        from_left = left_in[r, vi]
        rows.append(r)
        elems.append(np.where(from_left, vi - 1, vi))
        xs.append(v[vi])
        normals.append(np.where(from_left, 1.0, -1.0))
        xdots.append(np.zeros(r.size))
    if not rows:
        z = np.zeros(0)
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), z, z.copy(), z.copy()
    return (np.concatenate(rows), np.concatenate(elems).astype(int), np.concatenate(xs),
            np.concatenate(normals).astype(float), np.concatenate(xdots))


def boundary_quadrature(topology: CutTopology, levelset: DiscreteLevelSet, order: int) -> PointRule:
    """Gauss rule in time on the lateral boundary; in 1D each boundary point has unit measure."""
    ls = levelset
    nq = CUT_TIME_FACTOR * points_for_order(order)
    zero = topology.zero_vertices
    rules = []
    for k, (ta, tb) in enumerate(topology.sub_intervals):
        tq, wt, st = _sub_interval_rule(ls, topology, k, ta, tb, nq)
        vals = ls.vertex_values(tq)
        dvals = ls.vertex_dvalues(tq)
        vals[:, zero] = 0.0
        dvals[:, zero] = 0.0
        status = np.broadcast_to(st, (tq.size, st.size))
        r, e, x, nrm, xd = _boundary_points_at(ls, vals, dvals, status, zero)
        rules.append(PointRule(elem=e, xhat=x, t=tq[r], w=wt[r], normal=nrm, xdot=xd))
    return PointRule.concat(rules, boundary=True)


def boundary_points(topology: CutTopology, levelset: DiscreteLevelSet, t: float):
    """(elem, xhat, normal, xdot) of the reference boundary points at a single time."""
    ls = levelset
    zero = topology.zero_vertices
    tt = np.array([float(t)])
    vals = ls.vertex_values(tt)
    dvals = ls.vertex_dvalues(tt)
    vals[:, zero] = 0.0
    dvals[:, zero] = 0.0
    status = _element_status(_signs(vals, zero))
    _, e, x, nrm, xd = _boundary_points_at(ls, vals, dvals, status, zero)
    return e, x, nrm, xd


def slice_quadrature(topology: CutTopology, levelset: DiscreteLevelSet, t: float, order: int) -> PointRule:
    """Gauss rule on the reference domain at a fixed time t of the slab."""
    ls = levelset
    if not (ls.t0 - 1e-14 <= t <= ls.t1 + 1e-14):
        raise ValueError("slice time outside the slab")
    nq = points_for_order(order)
    zero = topology.zero_vertices
    tt = np.array([float(t)])
    vals = ls.vertex_values(tt)
    vals[:, zero] = 0.0
    status = _element_status(_signs(vals, zero))
    lo, hi, _ = _inside_parts(ls, vals, status)
    elems = np.flatnonzero(status[0] != OUTSIDE)
    pts, wts = _gauss_on(lo[0, elems], hi[0, elems], nq)
    rule = PointRule(
        elem=np.repeat(elems, nq),
        xhat=pts.ravel(),
        t=np.full(pts.size, float(t)),
        w=wts.ravel(),
    )
    keep = rule.w > 0
    return rule.subset(keep) if not np.all(keep) else rule


def element_quadrature(mesh, elements, t0: float, t1: float, order: int) -> PointRule:
    """Full tensor rule on T x [t0, t1] for the given elements (no cutting)."""
    nq = points_for_order(order)
    elements = np.asarray(elements, dtype=int)
    tg, wtg = gauss_legendre(nq)
    tq, wt = t0 + (t1 - t0) * tg, (t1 - t0) * wtg
    lo, hi = mesh.vertices[elements], mesh.vertices[elements + 1]
    pts, wts = _gauss_on(lo, hi, nq)  # (ne, nx)
    shape = (tq.size,) + pts.shape
    return PointRule(
        elem=np.broadcast_to(elements[None, :, None], shape).ravel().copy(),
        xhat=np.broadcast_to(pts[None], shape).ravel().copy(),
        t=np.broadcast_to(tq[:, None, None], shape).ravel().copy(),
        w=(wts[None] * wt[:, None, None]).ravel(),
    )


def default_order(k_s: int, k_t: int, q_s: int, q_t: int) -> int:
    return 2 * max(k_s, k_t, q_s, q_t) + 2


def build_quadrature(topology: CutTopology, levelset: DiscreteLevelSet, order: int,
                     start: Optional[PointRule] = None) -> SpaceTimeQuadrature:
    """All reference rules of a slab. ``start`` may reuse the previous slab's end slice."""
    if start is None:
        start = slice_quadrature(topology, levelset, levelset.t0, order)
    return SpaceTimeQuadrature(
        slab=topology.slab,
        order=order,
        volume=volume_quadrature(topology, levelset, order),
        boundary=boundary_quadrature(topology, levelset, order),
        start=start,
        end=slice_quadrature(topology, levelset, levelset.t1, order),
        breakpoints=topology.breakpoints,
    )


def dump_quadrature_csv(quad: SpaceTimeQuadrature, path) -> None:
    """Write quadrature points as CSV rows (x, t, w, region)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "t", "w", "region"])
        for name in ("volume", "boundary", "start", "end"):
            r = getattr(quad, name)
            for x, t, w in zip(r.x, r.t, r.physical_weights):
                wr.writerow([repr(float(x)), repr(float(t)), repr(float(w)), name])
