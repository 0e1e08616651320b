"""Background mesh, facet connectivity and the uniform time partition."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .polynomials import lagrange

SHAPE_RATIO_LIMIT = 4.0


@dataclass(frozen=True, eq=False)
class BackgroundMesh:
    """A 1D mesh of the background interval.

    Facets are identified with vertex indices; interior facet ``f`` separates
    elements ``f - 1`` and ``f``.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a mesh needs at least two vertices")
        lengths = np.diff(v)
        if np.any(lengths <= 0):
            raise ValueError("vertices must be strictly increasing")
        if lengths.max() / lengths.min() > SHAPE_RATIO_LIMIT:
            raise ValueError("element lengths violate the shape-regularity ratio")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def a(self) -> float:
        return float(self.vertices[0])

    @property
    def b(self) -> float:
        return float(self.vertices[-1])

    @property
    def n_elements(self) -> int:
        return self.vertices.size - 1

    @property
    def n_vertices(self) -> int:
        return self.vertices.size

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.vertices)

    @property
    def h(self) -> float:
        return float(self.lengths.max())

    @property
    def elements(self) -> list[tuple[float, float]]:
        v = self.vertices
        return [(float(v[i]), float(v[i + 1])) for i in range(self.n_elements)]

    @property
    def interior_facets(self) -> np.ndarray:
        return np.arange(1, self.n_elements)

    def facet_elements(self, facet: int) -> tuple[int, int]:
        if not 1 <= facet <= self.n_elements - 1:
            raise IndexError(f"{facet} is not an interior facet")
        return facet - 1, facet

    def element_facets(self, elem: int) -> list[int]:
        return [f for f in (elem, elem + 1) if 1 <= f <= self.n_elements - 1]

    def lagrange_nodes(self, k: int) -> np.ndarray:
        """Coordinates of the continuous P^k nodes; element e owns nodes e*k .. e*k+k."""
        xi = lagrange(k).nodes
        v = self.vertices
        pts = v[:-1, None] + self.lengths[:, None] * xi[None, :]
        out = np.empty(self.n_elements * k + 1)
        for j in range(k):
            out[j:-1:k] = pts[:, j]
        out[-1] = v[-1]
        out[::k] = v
        return out

    def locate(self, x) -> np.ndarray:
        """Index of the element containing each point (clipped to the mesh)."""
        idx = np.searchsorted(self.vertices, np.asarray(x, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_elements - 1)


def build_mesh(a: float, b: float, n_elements: int) -> BackgroundMesh:
    if n_elements < 1:
        raise ValueError("n_elements must be at least 1")
    if not a < b:
        raise ValueError("need a < b")
    v = np.linspace(a, b, n_elements + 1)
    v[0], v[-1] = a, b
    return BackgroundMesh(v)


@dataclass(frozen=True)
class TimePartition:
    """Uniform slabs I_n = (t_{n-1}, t_n], indexed 0..N-1 in code."""

    T_end: float
    N: int
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one slab")
        if not self.T_end > 0:
            raise ValueError("T_end must be positive")
        t = np.linspace(0.0, self.T_end, self.N + 1)
        t[0], t[-1] = 0.0, self.T_end
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def dt(self) -> float:
        return self.T_end / self.N

    def slab(self, n: int) -> tuple[float, float]:
        """Endpoints (t_n, t_{n+1}) of the 0-based slab ``n``; the slab is half-open on the left."""
        return float(self.times[n]), float(self.times[n + 1])

    def __len__(self) -> int:
        return self.N

    def __iter__(self):
        return (self.slab(n) for n in range(self.N))


def build_time_partition(T_end: float, n_slabs: int) -> TimePartition:
    return TimePartition(float(T_end), int(n_slabs))


@dataclass(frozen=True)
class AssumptionReport:
    h: float
    dt: float
    q_t: int
    c_geom: float
    c_time: float
    mesh_vs_step: bool  # h^2 <= c_geom * dt
    step_vs_mesh: bool  # dt^(q_t+1) <= c_time * h^1.5

    @property
    def ok(self) -> bool:
        return self.mesh_vs_step and self.step_vs_mesh


def check_assumptions(h: float, dt: float, q_t: int, c_geom: float = 1.0,
                      c_time: float = 1.0, warn: bool = True) -> AssumptionReport:
    """Check the two step-size coupling conditions the analysis relies on."""
    rep = AssumptionReport(
        h=h, dt=dt, q_t=q_t, c_geom=c_geom, c_time=c_time,
        mesh_vs_step=h * h <= c_geom * dt,
        step_vs_mesh=dt ** (q_t + 1) <= c_time * h ** 1.5,
    )
    if warn and not rep.ok:
        warnings.warn(
            f"step-size assumptions violated (h={h:g}, dt={dt:g}, q_t={q_t}): "
            f"h^2 <= C_G dt is {rep.mesh_vs_step}, dt^(q_t+1) <= C h^1.5 is {rep.step_vs_mesh}",
            RuntimeWarning, stacklevel=2,
        )
    return rep
