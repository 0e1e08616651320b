"""Verdicts, study results and the JSON/CSV writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

EOC_HEADER = ("study", "level", "h", "dt", "quantity", "value", "eoc")
MASS_HEADER = ("study", "level", "variant", "n", "t_n", "measure", "ubar", "target", "drift")
PROBE_HEADER = ("probe", "level", "h", "dt", "dofs", "value", "growth")

BOUNDED_GROWTH = 1.5


@dataclass
class Verdict:
    name: str
    value: float
    threshold: float
    relation: str  # ">=", "<=", ">" or "<"
    asserted: bool = True
    note: str = ""

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return False
        return bool({">=": v >= t, "<=": v <= t, ">": v > t, "<": v < t}[self.relation])

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if not self.asserted:
            tag = "info"
        return f"[{tag}] {self.name}: {self.value:.6g} {self.relation} {self.threshold:.6g}" + (
            f"  ({self.note})" if self.note else "")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "value": _clean(self.value), "threshold": self.threshold,
                "relation": self.relation, "asserted": self.asserted, "passed": self.passed,
                "note": self.note}


@dataclass
class StudyResult:
    study: str
    verdicts: list[Verdict] = field(default_factory=list)
    eoc_rows: list[tuple] = field(default_factory=list)
    mass_rows: list[tuple] = field(default_factory=list)
    probe_rows: list[tuple] = field(default_factory=list)
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v.passed for v in self.verdicts if v.asserted)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def merge(self, other: "StudyResult") -> "StudyResult":
        self.verdicts += other.verdicts
        self.eoc_rows += other.eoc_rows
        self.mass_rows += other.mass_rows
        self.probe_rows += other.probe_rows
        self.info[other.study] = other.info
        return self


def eoc_table(study: str, quantity: str, hs: Sequence[float], dts: Sequence[float],
              values: Sequence[float], sizes: Optional[Sequence[float]] = None):
    """Rows of one quantity plus the vector of EOCs (log2 ratios for halved sizes)."""
    from ..norms import eoc

    rates = eoc(values, sizes)
    rows = []
    for i, (h, dt, v) in enumerate(zip(hs, dts, values)):
        rows.append((study, i, h, dt, quantity, v, "" if i == 0 else rates[i - 1]))
    return rows, rates


def growth_factors(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v[1:] / v[:-1]


def probe_table(probe: str, hs, dts, dofs, values):
    g = growth_factors(values)
    return [(probe, i, hs[i], dts[i], dofs[i], values[i], "" if i == 0 else g[i - 1])
            for i in range(len(values))]


def _clean(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


def write_outputs(result: StudyResult, out_dir, config: dict[str, Any], command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "command": command,
        "config": _clean(config),
        "ok": result.ok,
        "verdicts": [v.to_dict() for v in result.verdicts],
        "info": _clean(result.info),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=False)
        fh.write("\n")
    _write_csv(out / "eoc.csv", EOC_HEADER, result.eoc_rows)
    _write_csv(out / "mass.csv", MASS_HEADER, result.mass_rows)
    _write_csv(out / "probes.csv", PROBE_HEADER, result.probe_rows)
    return out
