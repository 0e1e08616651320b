"""Discrete norms, errors against the lifted exact solution, and EOC tables."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .levelset import ProblemData
from .mapping import ExactLifting, build_lifting
from .solver import SlabSolution
from .spacesforms import ghost_penalty_matrix


@dataclass
class NormReport:
    """Squared norm components; composites are derived properties."""

    grad2: float = 0.0  # ||grad u||^2 on Q^h
    dt2: float = 0.0  # dt ||d_t^Theta u||^2
    l2: float = 0.0  # ||u||^2 on Q^h
    jump2: float = 0.0  # sum ||[u]^n||^2 + ||u_+^0||^2 + ||u_-^N||^2
    star_jump2: float = 0.0  # sum_n ||u_-^n||^2
    gp2: float = 0.0  # J(u, u)
    final2: float = 0.0  # ||u_-^N||^2
    dt: float = 1.0

    @property
    def l2_scaled(self) -> float:
        return self.dt ** -0.5 * self.l2

    @property
    def norm2(self) -> float:
        return self.grad2 + self.jump2

    @property
    def norm_j2(self) -> float:
        return self.norm2 + self.gp2

    @property
    def triple2(self) -> float:
        return self.norm2 + self.dt2

    @property
    def triple_j2(self) -> float:
        return self.triple2 + self.gp2

    @property
    def star2(self) -> float:
        return self.l2_scaled + self.grad2 + self.star_jump2

    @property
    def star_j2(self) -> float:
        return self.star2 + self.gp2

    def components(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("dt")
        d["l2_scaled"] = self.l2_scaled
        return d

    def summary(self) -> dict[str, float]:
        """Unsquared values of the norms used in tables."""
        return {
            "triple": float(np.sqrt(self.triple2)),
            "triple_j": float(np.sqrt(self.triple_j2)),
            "energy": float(np.sqrt(self.norm2)),
            "star": float(np.sqrt(self.star2)),
            "final_l2": float(np.sqrt(self.final2)),
            "l2": float(np.sqrt(self.l2)),
            "grad": float(np.sqrt(self.grad2)),
            "dt_term": float(np.sqrt(self.dt2)),
            "jump": float(np.sqrt(self.jump2)),
            "gp": float(np.sqrt(self.gp2)),
        }

    def __add__(self, other: "NormReport") -> "NormReport":
        kw = {k: getattr(self, k) + getattr(other, k)
              for k in ("grad2", "dt2", "l2", "jump2", "star_jump2", "gp2", "final2")}
        return NormReport(dt=self.dt, **kw)


def difference(a: Sequence[SlabSolution], b: Sequence[SlabSolution]) -> list[SlabSolution]:
    """Slab-wise a - b for solutions on identical spaces (systems taken from ``a``)."""
    out = []
    for sa, sb in zip(a, b):
        if sa.space.dim != sb.space.dim:
            raise ValueError("solutions live on different spaces")
        out.append(SlabSolution(sa.slab, sa.space, sa.geom, sa.coeffs - sb.coeffs, None, sa.system))
    return out


def scaled(a: Sequence[SlabSolution], alpha: float) -> list[SlabSolution]:
    return [SlabSolution(s.slab, s.space, s.geom, alpha * s.coeffs, None, s.system) for s in a]


def _gp_value(s: SlabSolution, gamma_j: float) -> float:
    if gamma_j == 0:
        return 0.0
    sys = s.system
    if sys is not None and sys.gamma_j:
        J = sys.J * (gamma_j / sys.gamma_j)  # J is linear in gamma_J
    else:
        J = ghost_penalty_matrix(s.space, s.geom, gamma_j, s.geom.quad.order)
    return float(s.coeffs @ J @ s.coeffs)


def compute_norms(sols: Sequence[SlabSolution], gamma_j: float = 1.0) -> NormReport:
    """All norm components of a discrete function given slab by slab."""
    rep = NormReport(dt=sols[0].geom.dt)
    for n, s in enumerate(sols):
        vol = s.geom.quad.volume
        pw = vol.physical_weights
        u, dx, dt = s.space.evaluate(s.coeffs, vol.elem, vol.xhat, vol.t)
        rep.grad2 += float(np.sum(pw * (dx / vol.jac) ** 2))
        rep.dt2 += s.geom.dt * float(np.sum(pw * dt**2))
        rep.l2 += float(np.sum(pw * u**2))
        rep.gp2 += _gp_value(s, gamma_j)
        start = s.geom.quad.start
        up = s.values(start)
        if n == 0:
            rep.jump2 += float(np.sum(start.physical_weights * up**2))
        else:
            um = sols[n - 1].values(start)
            rep.jump2 += float(np.sum(start.physical_weights * (up - um) ** 2))
        end = s.geom.quad.end
        e2 = float(np.sum(end.physical_weights * s.values(end) ** 2))
        rep.star_jump2 += e2
        if n == len(sols) - 1:
            rep.jump2 += e2
            rep.final2 = e2
    return rep


def mesh_time_derivative(sol: SlabSolution, x, t) -> np.ndarray:
    """d_t^Theta u_h at physical points: d_t of the reference expansion at the preimage."""
    elem, xhat = sol.geom.mapping.preimage(x, t)
    t = np.broadcast_to(np.asarray(t, dtype=float), xhat.shape)
    return sol.space.evaluate(sol.coeffs, elem, xhat, t)[2]


def error_vs_exact(sols: Sequence[SlabSolution], data: ProblemData,
                   liftings: Optional[Sequence[ExactLifting]] = None, gamma_j: float = 1.0,
                   fd_step: float = 1e-6) -> NormReport:
    """Norm components of e = u^l - u_h with u^l = u o Phi.

    The lifted exact solution has no patch jumps of its own, so the ghost
    penalty part of the error is J(u_h, u_h).
    """
    if data.u_exact is None:
        raise ValueError("error evaluation needs an exact solution")
    if liftings is None:
        liftings = [build_lifting(data, s.geom) for s in sols]
    rep = NormReport(dt=sols[0].geom.dt)
    prev_end = None
    for n, (s, L) in enumerate(zip(sols, liftings)):
        vol = s.geom.quad.volume
        pw = vol.physical_weights
        u, dx, dt = s.space.evaluate(s.coeffs, vol.elem, vol.xhat, vol.t)
        eu = L.u(vol.x, vol.t) - u
        ex = L.u_x(vol.x, vol.t) - dx / vol.jac
        et = L.u_dt_mesh(vol.elem, vol.xhat, vol.t, fd_step) - dt
        rep.grad2 += float(np.sum(pw * ex**2))
        rep.dt2 += s.geom.dt * float(np.sum(pw * et**2))
        rep.l2 += float(np.sum(pw * eu**2))
        rep.gp2 += _gp_value(s, gamma_j)
        start = s.geom.quad.start
        e_plus = L.u(start.x, start.t) - s.values(start)
        if n == 0:
            rep.jump2 += float(np.sum(start.physical_weights * e_plus**2))
        else:
            rep.jump2 += float(np.sum(start.physical_weights * (e_plus - prev_end) ** 2))
        end = s.geom.quad.end
        prev_end = L.u(end.x, end.t) - s.values(end)
        e2 = float(np.sum(end.physical_weights * prev_end**2))
        rep.star_jump2 += e2
        if n == len(sols) - 1:
            rep.jump2 += e2
            rep.final2 = e2
    return rep


def eoc(errors: Sequence[float], sizes: Optional[Sequence[float]] = None) -> np.ndarray:
    """Experimental orders between consecutive levels (log2 of ratios for halved sizes)."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.log(e[:-1] / e[1:])
        if sizes is None:
            return ratios / np.log(2.0)
        s = np.asarray(sizes, dtype=float)
        return ratios / np.log(s[:-1] / s[1:])


def write_norm_table(path, levels: Sequence[dict]) -> None:
    """CSV (level, h, dt, component, value, eoc); ``levels`` hold h, dt and a value dict."""
    comps = list(levels[0]["values"])
    rates = {c: eoc([lv["values"][c] for lv in levels]) for c in comps}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["level", "h", "dt", "component", "value", "eoc"])
        for i, lv in enumerate(levels):
            for c in comps:
                r = "" if i == 0 else f"{rates[c][i - 1]:.4f}"
                wr.writerow([i, repr(lv["h"]), repr(lv["dt"]), c, repr(lv["values"][c]), r])
