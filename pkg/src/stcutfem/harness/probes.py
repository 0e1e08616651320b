"""Numerical probes of the discrete stability estimates.

Each ghost-penalty estimate ``LHS(u) <= C RHS(u)`` is probed through the
largest eigenvalue of the pencil (LHS, RHS) on one slab, maximised over the
slabs of a level.  Kernels of RHS (spatial constants for the gradient
estimates) are deflated; they are kernels of LHS as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from ..cutgeom import element_quadrature
from ..mapping import push_forward
from ..polynomials import lagrange
from ..solver import prepare_geometry
from ..spacesforms import boundary_matrix, mass_matrix, stiffness_matrix, time_derivative_mass
from .config import StudyConfig
from .report import BOUNDED_GROWTH, StudyResult, Verdict, growth_factors, probe_table
from .studies import _slab_systems

GP_PROBES = ("gp_whole_domain_l2", "gp_whole_domain_grad", "gp_temporal_traces",
             "gp_time_derivative_l2", "gp_time_derivative_grad", "gp_of_time_derivative")
INFSUP_DOF_LIMIT = 2000
INFSUP_BASE = {"ms0": 4, "ms1": 15, "ms2-quadratic-levelset": 15}
ALPHAS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass
class ProbeReport:
    name: str
    h: list[float] = field(default_factory=list)
    dt: list[float] = field(default_factory=list)
    dofs: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def add(self, h, dt, dofs, value):
        self.h.append(float(h))
        self.dt.append(float(dt))
        self.dofs.append(int(dofs))
        self.values.append(float(value))

    @property
    def growth(self) -> np.ndarray:
        return growth_factors(self.values)

    @property
    def max_growth(self) -> float:
        g = self.growth
        return float(np.max(g)) if g.size else 1.0

    @property
    def bounded(self) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(np.isfinite(v)) and np.all(v > 0) and self.max_growth <= BOUNDED_GROWTH)

    @property
    def verdict(self) -> str:
        return "bounded" if self.bounded else "growing"

    def rows(self):
        return probe_table(self.name, self.h, self.dt, self.dofs, self.values)


def extremal_ratio(A: np.ndarray, B: np.ndarray, rel_tol: float = 1e-10) -> float:
    """max u^T A u / u^T B u for symmetric PSD A, B, with the kernel of B deflated.

    Returns inf if A does not vanish on that kernel.
    """
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    lam, V = np.linalg.eigh(B)
    top = max(float(lam[-1]), 0.0)
    if top == 0.0:
        return np.inf
    keep = lam > rel_tol * top
    V0 = V[:, ~keep]
    if V0.size and np.linalg.norm(V0.T @ A @ V0) > 1e-8 * max(np.linalg.norm(A), 1e-300):
        return np.inf
    Z = V[:, keep] / np.sqrt(lam[keep])
    return float(np.linalg.eigvalsh(Z.T @ A @ Z)[-1])


def time_derivative_map(space) -> np.ndarray:
    """Coefficients of d_t uhat (exact: the temporal degree only drops)."""
    L = lagrange(space.k_t)
    Dt = L.deriv(L.nodes) / (space.t1 - space.t0)
    return np.kron(np.eye(space.n_spatial), Dt)


@dataclass(eq=False)
class SlabBlocks:
    space: object
    geom: object
    system: object
    M_E: np.ndarray
    M_I: np.ndarray
    S_E: np.ndarray
    S_I: np.ndarray
    Mt: np.ndarray  # (d_t u, d_t v) on Q^h
    D: np.ndarray
    trace_bd: np.ndarray  # int over the lateral boundary of u v

    @property
    def dt(self) -> float:
        return self.geom.dt


def _element_blocks(space, geom, elements, order):
    if len(elements) == 0:
        z = np.zeros((space.dim, space.dim))
        return z, z.copy()
    r = element_quadrature(geom.mesh, elements, geom.t0, geom.t1, order)
    r = push_forward(geom.mapping, r)
    return mass_matrix(space, r), stiffness_matrix(space, r)


def level_blocks(cfg: StudyConfig, mesh, slabs) -> list[SlabBlocks]:
    data = cfg.data
    sc = cfg.solve_config()
    geo = prepare_geometry(data, mesh, slabs, sc)
    spaces, systems = _slab_systems(data, geo, cfg.k_s, cfg.k_t, cfg.gamma_j, sc.order)
    out = []
    for sp, g, S in zip(spaces, geo, systems):
        M_E, S_E = _element_blocks(sp, g, g.topology.active, sc.order)
        M_I, S_I = _element_blocks(sp, g, g.topology.interior, sc.order)
        Mt = time_derivative_mass(sp, g.quad.volume)
        trace = boundary_matrix(sp, g.quad.boundary)
        out.append(SlabBlocks(sp, g, S, M_E, M_I, S_E, S_I, Mt, time_derivative_map(sp), trace))
    return out


def gp_constants(blocks: Sequence[SlabBlocks], gamma_j: float) -> dict[str, float]:
    """Extremal constants of the ghost-penalty estimates, maximised over slabs."""
    out = {k: 0.0 for k in GP_PROBES}
    for b in blocks:
        h = b.geom.mesh.h
        dt = b.dt
        J = b.system.J
        rhs0 = b.M_I + h**2 / gamma_j * J
        rhs1 = b.S_I + J / gamma_j
        D = b.D
        vals = {
            "gp_whole_domain_l2": extremal_ratio(b.M_E, rhs0),
            "gp_whole_domain_grad": extremal_ratio(b.S_E, rhs1),
            "gp_temporal_traces": dt * extremal_ratio(b.system.mass_start + b.system.mass_end, rhs0),
            "gp_time_derivative_l2": dt**2 * extremal_ratio(D.T @ b.M_E @ D, rhs0),
            "gp_time_derivative_grad": dt**2 * extremal_ratio(D.T @ b.S_E @ D, rhs1),
            "gp_of_time_derivative": dt**2 * extremal_ratio(
                D.T @ J @ D, J + gamma_j * (h + dt) * b.system.stiff),
        }
        for k, v in vals.items():
            out[k] = max(out[k], v)
    return out


# ---------------------------------------------------------------------------
# global operators over all slabs


@dataclass(eq=False)
class GlobalOperators:
    G: np.ndarray  # (B_h + J)(u, v) = v^T G u
    N: np.ndarray  # |||u|||^2
    NJ: np.ndarray  # |||u|||_j^2
    Z: np.ndarray  # orthonormal basis of the mean-free subspace
    Q: np.ndarray  # u -> Pi~(dt d_t^Theta u)
    trace_bd: np.ndarray
    offsets: np.ndarray

    @property
    def dim(self) -> int:
        return self.G.shape[0]


def global_operators(blocks: Sequence[SlabBlocks]) -> GlobalOperators:
    dims = [b.space.dim for b in blocks]
    off = np.concatenate(([0], np.cumsum(dims)))
    n = int(off[-1])
    G = np.zeros((n, n))
    N = np.zeros((n, n))
    Jg = np.zeros((n, n))
    Bd = np.zeros((n, n))
    Zs, Qs = [], []
    last = len(blocks) - 1
    for i, b in enumerate(blocks):
        S = b.system
        s = slice(off[i], off[i + 1])
        G[s, s] += S.A_Bh + S.J
        N[s, s] += S.stiff + b.dt * b.Mt + S.mass_start
        Jg[s, s] += S.J
        Bd[s, s] += b.trace_bd
        if i == last:
            N[s, s] += S.mass_end
        if i > 0:
            p = slice(off[i - 1], off[i])
            C = S.coupling_matrix
            G[s, p] -= C
            N[p, p] += blocks[i - 1].system.mass_end
            N[s, p] -= C
            N[p, s] -= C.T
        Zs.append(sla.null_space(S.c[None, :]))
        P = np.eye(b.space.dim) - np.outer(np.ones(b.space.dim), S.c) / np.sum(S.c)
        Qs.append(P @ (b.dt * b.D))
    return GlobalOperators(G, N, N + Jg, sla.block_diag(*Zs), sla.block_diag(*Qs), Bd, off)


def _whitened(A: np.ndarray, M: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(0.5 * (M + M.T))
    X = sla.solve_triangular(L, A, lower=True)
    return sla.solve_triangular(L, X.T, lower=True).T


def infsup_constant(ops: GlobalOperators, meanfree: bool = True) -> float:
    """min_u max_v (B_h+J)(u,v) / (|||u|||_j |||v|||_j) by singular values."""
    if meanfree:
        Z = ops.Z
        A, M = Z.T @ ops.G @ Z, Z.T @ ops.NJ @ Z
    else:
        A, M = ops.G, ops.NJ
    return float(sla.svdvals(_whitened(A, M))[-1])


def constructive_check(ops: GlobalOperators, rng, samples: int, alphas=ALPHAS):
    """min over random u in the mean-free space of the normalised pairing with
    v = alpha u + Pi~(dt d_t u), for each alpha; plus the sampled norm ratio."""
    nj = lambda x: float(np.sqrt(x @ ops.NJ @ x))
    worst = {a: np.inf for a in alphas}
    ratio = 0.0
    for _ in range(samples):
        u = ops.Z @ rng.standard_normal(ops.Z.shape[1])
        d = ops.Q @ u
        nu = nj(u)
        ratio = max(ratio, nj(d) / nu)
        for a in alphas:
            v = a * u + d
            worst[a] = min(worst[a], float(v @ ops.G @ u) / (nu * nj(v)))
    return worst, ratio


def special_function_bound(ops: GlobalOperators) -> float:
    """Exact max over W_h of |||Pi~(dt d_t u)|||_j / |||u|||_j."""
    return float(np.sqrt(extremal_ratio(ops.Q.T @ ops.NJ @ ops.Q, ops.NJ)))


def trace_constants(blocks: Sequence[SlabBlocks], ops: GlobalOperators, rng, samples: int):
    """Special trace inequality for mean-free u.

    Returns (slab_max, sampled): the exact constant over mean-free functions
    supported on one slab, maximised over slabs, and the largest ratio seen
    for random globally mean-free functions.
    """
    slab_max = 0.0
    for b in blocks:
        S = b.system
        Nloc = S.stiff + b.dt * b.Mt + S.mass_start + S.mass_end
        Zl = sla.null_space(S.c[None, :])
        slab_max = max(slab_max, extremal_ratio(Zl.T @ b.trace_bd @ Zl, Zl.T @ Nloc @ Zl))
    sampled = 0.0
    for _ in range(samples):
        u = ops.Z @ rng.standard_normal(ops.Z.shape[1])
        sampled = max(sampled, float(u @ ops.trace_bd @ u) / float(u @ ops.N @ u))
    return slab_max, sampled


# ---------------------------------------------------------------------------
# studies


def run_probe_gp(cfg: StudyConfig, levels: Optional[int] = None, gamma_sweep: bool = True) -> StudyResult:
    out = StudyResult("probe-gp")
    rng = np.random.default_rng(cfg.seed)
    reports = {k: ProbeReport(k) for k in GP_PROBES + ("trace_inequality", "trace_inequality_sampled")}
    first_blocks = None
    for lv in cfg.iter_levels(levels):
        blocks = level_blocks(cfg, lv.mesh, lv.slabs)
        first_blocks = first_blocks or blocks
        dofs = sum(b.space.dim for b in blocks)
        for k, v in gp_constants(blocks, cfg.gamma_j).items():
            reports[k].add(lv.h, lv.dt, dofs, v)
        ops = global_operators(blocks)
        tmax, tsample = trace_constants(blocks, ops, rng, cfg.samples)
        reports["trace_inequality"].add(lv.h, lv.dt, dofs, tmax)
        reports["trace_inequality_sampled"].add(lv.h, lv.dt, dofs, tsample)
    for name, rep in reports.items():
        out.probe_rows += rep.rows()
        out.verdicts.append(Verdict(f"{name} max growth", rep.max_growth, BOUNDED_GROWTH, "<=",
                                    note=rep.verdict))
        out.info[name] = {"values": rep.values, "verdict": rep.verdict}
    if gamma_sweep and cfg.gamma_list:
        # h^2/gamma_J j is gamma-independent, so the constants must not move
        lv = cfg.level(0)
        ref = gp_constants(first_blocks, cfg.gamma_j)
        spread = 0.0
        for g in cfg.gamma_list:
            blocks = level_blocks(cfg.replace(gamma_j=g), lv.mesh, lv.slabs)
            vals = gp_constants(blocks, g)
            for k in GP_PROBES:
                out.probe_rows.append((f"{k}:gamma_j={g:g}", 0, lv.h, lv.dt,
                                       sum(b.space.dim for b in blocks), vals[k], ""))
                spread = max(spread, abs(vals[k] / ref[k] - 1.0))
        out.verdicts.append(Verdict("gamma_J invariance of the GP constants", spread, 1e-8, "<="))
    return out


def run_probe_infsup(cfg: StudyConfig, levels: Optional[int] = None, base: Optional[int] = None) -> StudyResult:
    out = StudyResult("probe-infsup")
    rng = np.random.default_rng(cfg.seed)
    base = base or cfg.base_elements or INFSUP_BASE.get(cfg.problem)
    reps = {k: ProbeReport(k) for k in ("infsup_meanfree", "infsup_full", "constructive_best_alpha",
                                        "special_function_ratio", "special_function_sampled")}
    max_dofs = 0
    for lv in cfg.iter_levels(levels, base):
        blocks = level_blocks(cfg, lv.mesh, lv.slabs)
        ops = global_operators(blocks)
        max_dofs = max(max_dofs, ops.dim)
        if ops.dim > INFSUP_DOF_LIMIT:
            raise ValueError(f"level {lv.index}: {ops.dim} dofs exceed the probe limit {INFSUP_DOF_LIMIT}")
        reps["infsup_meanfree"].add(lv.h, lv.dt, ops.dim, infsup_constant(ops, True))
        reps["infsup_full"].add(lv.h, lv.dt, ops.dim, infsup_constant(ops, False))
        worst, ratio = constructive_check(ops, rng, cfg.samples)
        best = max(worst, key=worst.get)
        reps["constructive_best_alpha"].add(lv.h, lv.dt, ops.dim, worst[best])
        reps["special_function_ratio"].add(lv.h, lv.dt, ops.dim, special_function_bound(ops))
        reps["special_function_sampled"].add(lv.h, lv.dt, ops.dim, ratio)
        for a, w in worst.items():
            out.probe_rows.append((f"constructive:alpha={a:g}", lv.index, lv.h, lv.dt, ops.dim, w, ""))
        out.info[f"level{lv.index}"] = {"best_alpha": best, "dofs": ops.dim}
    for rep in reps.values():
        out.probe_rows += rep.rows()
        out.info[rep.name] = rep.values
    beta = np.asarray(reps["infsup_meanfree"].values)
    out.verdicts.append(Verdict("inf-sup constant on mean-free space (min over levels)", float(beta.min()),
                                0.0, ">"))
    out.verdicts.append(Verdict("inf-sup variation max/min across levels", float(beta.max() / beta.min()),
                                2.0, "<="))
    out.verdicts.append(Verdict("probe dofs", float(max_dofs), INFSUP_DOF_LIMIT, "<="))
    full = np.asarray(reps["infsup_full"].values)
    out.verdicts.append(Verdict("inf-sup constant on full space (min over levels)", float(full.min()), 0.0,
                                ">", asserted=False, note="reported only"))
    out.verdicts.append(Verdict("constructive pairing, best alpha (min over levels)",
                                float(np.min(reps["constructive_best_alpha"].values)), 0.0, ">"))
    for k in ("special_function_ratio", "special_function_sampled"):
        out.verdicts.append(Verdict(f"{k} max growth", reps[k].max_growth, BOUNDED_GROWTH, "<=",
                                    note=reps[k].verdict))
    return out
