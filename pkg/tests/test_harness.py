import csv
import json

import numpy as np
import pytest
import scipy.linalg as sla

from stcutfem.harness import cli
from stcutfem.harness.config import StudyConfig, load_toml, make_config
from stcutfem.harness.probes import (extremal_ratio, global_operators, gp_constants, infsup_constant,
                                     level_blocks, time_derivative_map)
from stcutfem.harness.report import StudyResult, Verdict, eoc_table, write_outputs
from stcutfem.norms import compute_norms
from stcutfem.polynomials import lagrange
from stcutfem.solver import SlabSolution


def test_toml_and_overrides(tmp_path):
    p = tmp_path / "study.toml"
    p.write_text('[study]\nproblem = "ms0"\nks = 2\nlevels = 3\n"gamma-j" = 0.5\n')
    assert load_toml(p)["k_s"] == 2
    cfg = make_config(p, levels=2, seed=None)
    assert (cfg.problem, cfg.k_s, cfg.levels, cfg.gamma_j, cfg.seed) == ("ms0", 2, 2, 0.5, 42)


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("colour = 3\n")
    with pytest.raises(ValueError):
        load_toml(p)
    with pytest.raises(KeyError):
        StudyConfig(problem="unknown")


def test_levels_couple_dt_to_h():
    cfg = StudyConfig(dt_over_h=2.0)
    lv = cfg.level(1)
    assert lv.mesh.n_elements == 60
    assert lv.dt == pytest.approx(2 * lv.h)


def test_verdict_relations():
    assert Verdict("a", 1.0, 0.5, ">=").passed
    assert not Verdict("a", float("nan"), 0.5, ">=").passed
    r = StudyResult("x", [Verdict("a", 0.1, 0.5, ">="), Verdict("b", 0.1, 0.5, ">=", asserted=False)])
    assert not r.ok
    r.verdicts = r.verdicts[1:]
    assert r.ok
    assert r.verdicts[0].line().startswith("[info]")


def test_eoc_table_rows():
    rows, rates = eoc_table("s", "err", [0.1, 0.05], [0.1, 0.05], [1.0, 0.25])
    assert rates.tolist() == [2.0]
    assert rows[0][-1] == "" and rows[1][-1] == 2.0


def test_outputs_written(tmp_path):
    r = StudyResult("x", [Verdict("a", np.float64(2.0), 1.0, ">=")])
    write_outputs(r, tmp_path, {"seed": 1}, "demo")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["ok"] is True and summary["verdicts"][0]["passed"] is True
    for name in ("eoc.csv", "mass.csv", "probes.csv"):
        assert (tmp_path / name).exists()


def test_extremal_ratio_matches_eigh(rng):
    A = rng.standard_normal((6, 6))
    A = A @ A.T
    B = rng.standard_normal((6, 6))
    B = B @ B.T + np.eye(6)
    assert extremal_ratio(A, B) == pytest.approx(sla.eigh(A, B, eigvals_only=True)[-1], rel=1e-10)


def test_extremal_ratio_deflates_common_kernel():
    B = np.diag([1.0, 2.0, 0.0])
    assert extremal_ratio(np.diag([3.0, 2.0, 0.0]), B) == pytest.approx(3.0)
    assert extremal_ratio(np.diag([3.0, 2.0, 1.0]), B) == np.inf


def test_time_derivative_map_exact():
    cfg = StudyConfig(problem="ms0", k_s=1, k_t=2, levels=1)
    blocks = level_blocks(cfg, cfg.level(0).mesh, cfg.level(0).slabs)
    sp = blocks[0].space
    t = sp.time_nodes
    c = np.tile(t**2, sp.n_spatial)
    np.testing.assert_allclose(time_derivative_map(sp) @ c, np.tile(2 * t, sp.n_spatial), atol=1e-12)
    assert lagrange(2).nodes.size == 3


def test_uncut_domain_gp_ratio_is_one():
    cfg = StudyConfig(problem="ms0", levels=1)
    blocks = level_blocks(cfg, cfg.level(0).mesh, cfg.level(0).slabs)
    assert gp_constants(blocks, 1.0)["gp_whole_domain_l2"] <= 1 + 1e-12


def test_global_norm_matrix_matches_norm_report(rng):
    cfg = StudyConfig(levels=1, k_s=2, k_t=1, q_s=2, q_t=2)
    lv = cfg.level(0)
    blocks = level_blocks(cfg, lv.mesh, lv.slabs)
    ops = global_operators(blocks)
    u = rng.standard_normal(ops.dim)
    sols = [SlabSolution(b.geom.slab, b.space, b.geom, u[ops.offsets[i]:ops.offsets[i + 1]], None, b.system)
            for i, b in enumerate(blocks)]
    rep = compute_norms(sols, cfg.gamma_j)
    assert u @ ops.N @ u == pytest.approx(rep.triple2, rel=1e-11)
    assert u @ ops.NJ @ u == pytest.approx(rep.triple_j2, rel=1e-11)
    np.testing.assert_allclose(ops.Z.T @ ops.Z, np.eye(ops.Z.shape[1]), atol=1e-12)


def test_infsup_positive_on_fitted_static_single_slab():
    cfg = StudyConfig(problem="ms0", levels=3, dt_over_h=1e6)
    betas = []
    for lv in cfg.iter_levels():
        assert lv.slabs.N == 1
        ops = global_operators(level_blocks(cfg, lv.mesh, lv.slabs))
        betas.append(infsup_constant(ops))
    assert min(betas) > 0
    assert max(betas) / min(betas) <= 2


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_cli_converge_outputs(tmp_path, capsys):
    code = cli.main(["converge", "--problem", "ms0", "--levels", "3", "--out", str(tmp_path), "-q"])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["problem"] == "ms0" and summary["ok"]
    # verdicts are re-derivable from the tables
    rows = [r for r in _read_csv(tmp_path / "eoc.csv") if r["quantity"] == "final_l2"]
    v = next(x for x in summary["verdicts"] if x["name"].startswith("final-time L2"))
    assert float(rows[-1]["eoc"]) == pytest.approx(v["value"])
    assert float(rows[-1]["eoc"]) >= 1.8
    assert "converge: OK" in capsys.readouterr().out


def test_cli_reruns_are_identical(tmp_path):
    args = ["probe-identity", "--samples", "2", "--seed", "7", "-q"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "probes.csv").read_text() == (tmp_path / "b" / "probes.csv").read_text()


def test_cli_exit_code_follows_verdicts(tmp_path, monkeypatch):
    failing = lambda cfg: StudyResult("solve", [Verdict("x", 0.0, 1.0, ">=")])
    monkeypatch.setitem(cli.COMMANDS, "solve", (failing, ""))
    assert cli.main(["solve", "--out", str(tmp_path), "-q"]) == 1
    informative = lambda cfg: StudyResult("solve", [Verdict("x", 0.0, 1.0, ">=", asserted=False)])
    monkeypatch.setitem(cli.COMMANDS, "solve", (informative, ""))
    assert cli.main(["solve", "--out", str(tmp_path), "-q"]) == 0


def test_cli_flags_and_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('problem = "ms1"\nlevels = 2\n')
    code = cli.main(["geom-check", str(p), "--qs", "2", "--qt", "2", "--no-deform", "--out", str(tmp_path), "-q"])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["q_s"] == 2 and summary["config"]["deform"] is False
    assert code in (0, 1)


def test_cli_bad_config(tmp_path, capsys):
    assert cli.main(["solve", str(tmp_path / "missing.toml")]) == 2
