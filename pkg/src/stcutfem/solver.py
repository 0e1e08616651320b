"""Slab-by-slab time marching for the plain, mass-conserving, constrained and penalty variants."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .cutgeom import PointRule, default_order
from .errors import SingularSystemError
from .levelset import ProblemData
from .mapping import SlabGeometry, build_geometry
from .meshtime import BackgroundMesh, TimePartition, check_assumptions
from .spacesforms import SlabSpace, SlabSystem, assemble, build_space


class Variant(str, Enum):
    PLAIN = "plain"
    MC = "mc"
    CONSTRAINED = "constrained"
    PENALTY = "penalty"


@dataclass
class SolveConfig:
    variant: Variant = Variant.MC
    gamma_j: float = 1.0
    K: Optional[float] = None
    k_s: int = 1
    k_t: int = 1
    q_s: int = 1
    q_t: int = 1
    pivot_tol: float = 1e-13
    deform: bool = True
    quad_order: Optional[int] = None
    rings: int = 1

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.variant is Variant.PENALTY:
            if self.K is None or not self.K > 0:
                raise ValueError("the penalty variant needs K > 0")
        elif self.K is not None:
            raise ValueError("K is only used by the penalty variant")
        if self.k_s < 1 or self.k_t < 0 or self.q_s < 1 or self.q_t < 0:
            raise ValueError("need k_s, q_s >= 1 and k_t, q_t >= 0")
        if self.gamma_j < 0:
            raise ValueError("gamma_j must be nonnegative")

    @property
    def order(self) -> int:
        if self.quad_order is not None:
            return self.quad_order
        return default_order(self.k_s, self.k_t, self.q_s, self.q_t)

    def with_variant(self, variant, K: Optional[float] = None) -> "SolveConfig":
        kw = dict(self.__dict__)
        kw.update(variant=Variant(variant), K=K)
        return SolveConfig(**kw)


@dataclass(eq=False)
class SlabSolution:
    slab: int
    space: SlabSpace
    geom: SlabGeometry
    coeffs: np.ndarray
    lam: Optional[float] = None
    system: Optional[SlabSystem] = field(default=None, repr=False)

    def evaluate(self, elem, xhat, t):
        """Value of u_h at the reference point (physical point Theta(xhat, t))."""
        return self.space.evaluate(self.coeffs, elem, xhat, t)[0]

    def values(self, rule: PointRule) -> np.ndarray:
        if rule.size == 0:
            return np.zeros(0)
        return self.space.evaluate(self.coeffs, rule.elem, rule.xhat, rule.t)[0]

    def gradient(self, rule: PointRule) -> np.ndarray:
        """Physical d_x u_h at the points of a mapped rule."""
        _, dx, _ = self.space.evaluate(self.coeffs, rule.elem, rule.xhat, rule.t)
        return dx / rule.jac

    def mesh_time_derivative(self, rule: PointRule) -> np.ndarray:
        return self.space.evaluate(self.coeffs, rule.elem, rule.xhat, rule.t)[2]

    def trace_end(self) -> np.ndarray:
        return self.values(self.geom.quad.end)

    def trace_start(self) -> np.ndarray:
        return self.values(self.geom.quad.start)


@dataclass
class MeanTrack:
    times: np.ndarray
    measure: np.ndarray  # |Omega^h(t_n)|, n = 0..N
    ubar: np.ndarray  # int u_-^n over Omega^h(t_n); ubar[0] = int u0 over Omega^h(0)
    target: np.ndarray  # prescribed concentrations
    fbar: np.ndarray  # int over the slab of f_h, n = 1..N

    @property
    def drift(self) -> np.ndarray:
        return self.ubar[1:] - self.ubar[:-1] - self.fbar

    @property
    def total_defect(self) -> float:
        return float(self.ubar[-1] - self.ubar[0] - np.sum(self.fbar))

    @property
    def condition_note(self) -> str:
        return "defects are at round-off level times the slab condition numbers"

    def rows(self):
        yield ("n", "t_n", "measure", "ubar", "target", "drift")
        for n, t in enumerate(self.times):
            d = 0.0 if n == 0 else float(self.drift[n - 1])
            yield (n, float(t), float(self.measure[n]), float(self.ubar[n]), float(self.target[n]), d)


@dataclass(eq=False)
class SolveResult:
    solutions: list[SlabSolution]
    track: MeanTrack
    geometry: list[SlabGeometry]
    cfg: SolveConfig
    problem: ProblemData
    mesh: BackgroundMesh
    slabs: TimePartition

    def __iter__(self):
        return iter((self.solutions, self.track))


def _lu_solve(M: np.ndarray, rhs: np.ndarray, tol: float, slab: int, variant: Variant) -> np.ndarray:
    lu, piv = sla.lu_factor(M, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.size and (d.min() == 0.0 or d.min() < tol * d.max()):
        raise SingularSystemError(
            f"slab {slab}, variant {variant.value}: pivot {d.min():.3e} below "
            f"{tol:g} x {d.max():.3e}")
    return sla.lu_solve((lu, piv), rhs)


def prepare_geometry(problem: ProblemData, mesh: BackgroundMesh, slabs: TimePartition,
                     cfg: SolveConfig) -> list[SlabGeometry]:
    return build_geometry(problem, mesh, slabs, cfg.q_s, cfg.q_t, cfg.order,
                          deform=cfg.deform, rings=cfg.rings)


def solve(problem: ProblemData, mesh: BackgroundMesh, slabs: TimePartition, cfg: SolveConfig,
          geometry: Optional[Sequence[SlabGeometry]] = None, warn: bool = True) -> SolveResult:
    check_assumptions(mesh.h, slabs.dt, cfg.q_t, warn=warn)
    if geometry is None:
        geometry = prepare_geometry(problem, mesh, slabs, cfg)
    v = cfg.variant
    N = len(geometry)
    measure = np.zeros(N + 1)
    ubar = np.zeros(N + 1)
    target = np.zeros(N + 1)
    fbar = np.zeros(N)
    sols: list[SlabSolution] = []
    prev: Optional[SlabSolution] = None
    for n, g in enumerate(geometry):
        space = build_space(g.topology, cfg.k_s, cfg.k_t)
        sys = assemble(space, g, problem, prev, cfg.gamma_j, cfg.K, cfg.order)
        if n == 0:
            # partition of unity: the load entries sum to the integral of u0
            measure[0] = g.quad.start.measure()
            ubar[0] = target[0] = float(np.sum(sys.coupling))
        fbar[n] = float(np.sum(sys.load))
        rhs = sys.load + sys.coupling
        A = (sys.A_Bmc if v is Variant.MC else sys.A_Bh) + sys.J
        lam = None
        target[n + 1] = target[n] + fbar[n]
        if v in (Variant.CONSTRAINED, Variant.PENALTY):
            if not np.any(np.abs(sys.c) > 0):
                raise SingularSystemError(f"slab {n}: constraint row vanishes")
            m = space.dim
            M = np.zeros((m + 1, m + 1))
            M[:m, :m] = A
            M[:m, m] = sys.c
            M[m, :m] = sys.c
            if v is Variant.PENALTY:
                M[m, m] = -1.0 / cfg.K
            sol = _lu_solve(M, np.append(rhs, target[n + 1]), cfg.pivot_tol, n, v)
            u, lam = sol[:m], float(sol[m])
        else:
            u = _lu_solve(A, rhs, cfg.pivot_tol, n, v)
        cur = SlabSolution(n, space, g, u, lam, sys)
        measure[n + 1] = g.quad.end.measure()
        ubar[n + 1] = float(sys.c @ u)
        sols.append(cur)
        prev = cur
    if v in (Variant.PLAIN, Variant.MC):
        target = ubar[0] + np.concatenate(([0.0], np.cumsum(fbar)))
    track = MeanTrack(np.array([0.0, *[g.t1 for g in geometry]]), measure, ubar, target, fbar)
    return SolveResult(sols, track, list(geometry), cfg, problem, mesh, slabs)


def reconstruct_split(sols: Sequence[SlabSolution], track: MeanTrack):
    """Split u_h into the piecewise-linear spatial-mean part and a mean-free remainder.

    Returns ``(means, parts)``: ``means[n]`` is the mean value at t_n (n = 0
    from the initial data) and ``parts[n]`` the coefficients of u_h - ubar_h.
    For k_t = 0 the mean part is constant per slab (its end value).
    """
    means = track.ubar / track.measure
    parts = []
    for n, s in enumerate(sols):
        sp = s.space
        if sp.k_t == 0:
            bar_t = np.array([means[n + 1]])
        else:
            tau = (sp.time_nodes - sp.t0) / (sp.t1 - sp.t0)
            bar_t = (1 - tau) * means[n] + tau * means[n + 1]
        bar = np.tile(bar_t, sp.n_spatial)
        parts.append(s.coeffs - bar)
    return means, parts


@dataclass
class PenaltySweep:
    K: list[float]
    distances: list[float]
    lambda_defect: list[float]  # max_n |lam_n - K (c.u - target)|
    mean_defect: list[float]

    @property
    def decreasing(self) -> bool:
        d = self.distances
        return all(b < a for a, b in zip(d[:-1], d[1:]))


def penalty_sweep(problem: ProblemData, mesh: BackgroundMesh, slabs: TimePartition, cfg: SolveConfig,
                  K_list: Sequence[float], geometry=None, reference: Optional[SolveResult] = None) -> PenaltySweep:
    """Distance |||u^K - u^constrained||| for each penalty parameter."""
    from .norms import compute_norms, difference

    if geometry is None:
        geometry = prepare_geometry(problem, mesh, slabs, cfg)
    if reference is None:
        reference = solve(problem, mesh, slabs, cfg.with_variant(Variant.CONSTRAINED), geometry, warn=False)
    dist, lam_def, mean_def = [], [], []
    for K in K_list:
        res = solve(problem, mesh, slabs, cfg.with_variant(Variant.PENALTY, K), geometry, warn=False)
        rep = compute_norms(difference(res.solutions, reference.solutions), cfg.gamma_j)
        dist.append(float(np.sqrt(rep.triple2)))
        tr = res.track
        lam = np.array([s.lam for s in res.solutions])
        pred = K * (tr.ubar[1:] - tr.target[1:])
        lam_def.append(float(np.max(np.abs(lam - pred) / np.maximum(1.0, np.abs(lam)))))
        mean_def.append(float(np.max(np.abs(tr.ubar[1:] - tr.target[1:]))))
    return PenaltySweep(list(K_list), dist, lam_def, mean_def)
