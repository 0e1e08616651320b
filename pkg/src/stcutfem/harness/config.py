"""Study configuration, refinement levels and TOML loading."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from ..levelset import ProblemData, get_problem
from ..meshtime import BackgroundMesh, TimePartition, build_mesh, build_time_partition
from ..solver import SolveConfig, Variant

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

# coarsest mesh per problem; MS1 uses multiples of 30 so that the interface
# phase relative to the mesh repeats between levels
BASE_ELEMENTS = {"ms0": 8, "ms1": 30, "ms2-quadratic-levelset": 30}


@dataclass
class Level:
    index: int
    mesh: BackgroundMesh
    slabs: TimePartition

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def dt(self) -> float:
        return self.slabs.dt


@dataclass
class StudyConfig:
    problem: str = "ms1"
    variant: str = "mc"
    k_s: int = 1
    k_t: int = 1
    q_s: int = 1
    q_t: int = 1
    levels: int = 4
    base_elements: Optional[int] = None
    ratio: int = 2
    dt_over_h: float = 1.0
    gamma_j: float = 1.0
    gamma_list: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    K: Optional[float] = None
    K_list: list[float] = field(default_factory=lambda: [1e2, 1e4, 1e6, 1e8])
    quad_order: Optional[int] = None
    seed: int = 42
    samples: int = 20
    deform: bool = True
    rings: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        self.variant = Variant(self.variant).value
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.ratio < 2:
            raise ValueError("refinement ratio must be >= 2")
        if not self.dt_over_h > 0:
            raise ValueError("dt_over_h must be positive")
        get_problem(self.problem)  # fail early on unknown names

    @property
    def data(self) -> ProblemData:
        return get_problem(self.problem)

    def solve_config(self, variant: Optional[str] = None, K: Optional[float] = None) -> SolveConfig:
        v = Variant(variant or self.variant)
        if v is Variant.PENALTY and K is None:
            K = self.K if self.K is not None else 1e6
        return SolveConfig(variant=v, gamma_j=self.gamma_j, K=K if v is Variant.PENALTY else None,
                           k_s=self.k_s, k_t=self.k_t, q_s=self.q_s, q_t=self.q_t,
                           deform=self.deform, quad_order=self.quad_order, rings=self.rings)

    def level(self, i: int, base: Optional[int] = None) -> Level:
        data = self.data
        a, b = data.background
        n0 = base or self.base_elements or BASE_ELEMENTS.get(data.name, 16)
        n = n0 * self.ratio**i
        h = (b - a) / n
        N = max(1, round(data.T_end / (self.dt_over_h * h)))
        return Level(i, build_mesh(a, b, n), build_time_partition(data.T_end, N))

    def iter_levels(self, count: Optional[int] = None, base: Optional[int] = None):
        for i in range(self.levels if count is None else count):
            yield self.level(i, base)

    def replace(self, **kw) -> "StudyConfig":
        d = asdict(self)
        d.update(kw)
        return StudyConfig(**d)

    def echo(self) -> dict[str, Any]:
        return asdict(self)


_ALIASES = {"ks": "k_s", "kt": "k_t", "qs": "q_s", "qt": "q_t", "gamma-j": "gamma_j",
            "dt-over-h": "dt_over_h", "quad-order": "quad_order", "base-elements": "base_elements"}


def _normalise(raw: dict[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(StudyConfig)}
    out = {}
    for key, val in raw.items():
        k = _ALIASES.get(key, key.replace("-", "_"))
        if k not in names:
            raise ValueError(f"unknown configuration key {key!r}")
        out[k] = val
    return out


def load_toml(path) -> dict[str, Any]:
    """Read a study table; keys may sit at top level or under ``[study]``."""
    with open(Path(path), "rb") as fh:
        raw = tomllib.load(fh)
    if "study" in raw and isinstance(raw["study"], dict):
        raw = {**{k: v for k, v in raw.items() if k != "study"}, **raw["study"]}
    return _normalise(raw)


def make_config(toml_path=None, **overrides) -> StudyConfig:
    """Config from an optional TOML file, then non-None overrides on top."""
    base = load_toml(toml_path) if toml_path else {}
    base.update(_normalise({k: v for k, v in overrides.items() if v is not None}))
    return StudyConfig(**base)
