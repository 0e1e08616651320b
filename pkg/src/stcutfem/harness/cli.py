"""Command line entry point: ``stcutfem <command> [config.toml] [flags]``."""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from typing import Callable, Optional, Sequence

from ..errors import StCutFemError
from .config import make_config
from .probes import run_probe_gp, run_probe_infsup
from .report import write_outputs
from .studies import (run_conservation, run_convergence, run_geometry_check, run_identity,
                      run_interpolation, run_solve)

COMMANDS: dict[str, tuple[Callable, str]] = {
    "solve": (run_solve, "solve one level and report the mean tracking"),
    "converge": (run_convergence, "error norms and EOCs over the refinement levels"),
    "probe-gp": (run_probe_gp, "extremal constants of the ghost-penalty and trace estimates"),
    "probe-infsup": (run_probe_infsup, "discrete inf-sup constant and the constructive test function"),
    "geom-check": (run_geometry_check, "interface residual, measure and velocity errors of the geometry"),
    "probe-identity": (run_identity, "symmetric-sum and boundary identities on random functions"),
    "conserve": (run_conservation, "mean tables for the four treatments of the total concentration"),
    "interpolate": (run_interpolation, "nodal interpolation rates in h and in dt"),
}


def _add_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="TOML file with study settings")
    p.add_argument("--config", dest="config_opt", metavar="TOML", help="same as the positional argument")
    p.add_argument("--problem")
    p.add_argument("--variant", choices=["plain", "mc", "constrained", "penalty"])
    p.add_argument("--ks", type=int)
    p.add_argument("--kt", type=int)
    p.add_argument("--qs", type=int)
    p.add_argument("--qt", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--base-elements", type=int)
    p.add_argument("--ratio", type=int)
    p.add_argument("--gamma-j", type=float)
    p.add_argument("--gamma-list", type=float, nargs="+")
    p.add_argument("--K", type=float, help="penalty parameter for the penalty variant")
    p.add_argument("--K-list", type=float, nargs="+")
    p.add_argument("--dt-over-h", type=float)
    p.add_argument("--quad-order", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--deform", dest="deform", action="store_true", default=None)
    p.add_argument("--no-deform", dest="deform", action="store_false")
    p.add_argument("--out", help="output directory (default: results/)")
    p.add_argument("-q", "--quiet", action="store_true", help="print only the final status line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stcutfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        _add_flags(sub.add_parser(name, help=help_text, description=help_text))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.config and args.config_opt:
        print("error: give the TOML file once", file=sys.stderr)
        return 2
    overrides = {
        "problem": args.problem, "variant": args.variant, "ks": args.ks, "kt": args.kt, "qs": args.qs,
        "qt": args.qt, "levels": args.levels, "base_elements": args.base_elements, "ratio": args.ratio,
        "gamma_j": args.gamma_j, "gamma_list": args.gamma_list, "K": args.K, "K_list": args.K_list,
        "dt_over_h": args.dt_over_h, "quad_order": args.quad_order, "seed": args.seed,
        "samples": args.samples, "deform": args.deform, "out": args.out,
    }
    try:
        cfg = make_config(args.config or args.config_opt, **overrides)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    run, _ = COMMANDS[args.command]
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            result = run(cfg)
    except StCutFemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    result.info["runtime_s"] = time.perf_counter() - start

    out = write_outputs(result, cfg.out or "results", cfg.echo(), args.command)
    if not args.quiet:
        for v in result.verdicts:
            print(v.line())
    status = "OK" if result.ok else "FAILED"
    print(f"{args.command}: {status} ({result.info['runtime_s']:.1f} s), tables in {out}/")
    return 0 if result.ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
