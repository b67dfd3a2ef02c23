"""Command-line entry point: ``freezing-burgers {run,converge,cfl-demo,dae-order}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, FreezingError
from .experiments import cfl_violation_demo, convergence_study, load_config, run_experiment
from .verification import DEFAULT_H, EXAMPLES, order_study

log = logging.getLogger("freezing_burgers")

# subcommand defaults, overridden by the config file and then by flags
DEFAULTS = {
    "run": {},
    "converge": {"nu": 1.0, "bounds": (-10.0, 10.0), "tau_end": 1.0},
    "cfl-demo": {"nu": 0.0, "dx": 0.1, "cfl": 1.2, "tau_end": 1.0},
}


def _common(sub):
    sub.add_argument("--config", type=Path, help="key=value configuration file")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--nu", type=float, help="viscosity")
    sub.add_argument("--dim", type=int, choices=(1, 2), help="space dimension")
    sub.add_argument("--nx", type=int, nargs="+", help="interior cells per axis (two more are added)")
    sub.add_argument("--cfl", type=float, help="CFL number")
    sub.add_argument("--theta", type=float, help="minmod parameter in [1, 2]")
    sub.add_argument("--phase", choices=("orth", "fixed"), help="phase condition")
    sub.add_argument("--tau-end", type=float, help="final co-moving time")
    sub.add_argument("--p", type=float, help="flux exponent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freezing-burgers", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    subs = parser.add_subparsers(dest="command", required=True)
    _common(subs.add_parser("run", help="long freezing run with CSV output"))
    _common(subs.add_parser("converge", help="spatial convergence study"))
    _common(subs.add_parser("cfl-demo", help="oscillations under a violated CFL condition"))
    dae = subs.add_parser("dae-order", help="temporal order study on manufactured DAEs")
    dae.add_argument("--out", help="output directory")
    dae.add_argument("--example", choices=sorted(EXAMPLES), action="append",
                     help="example to run (repeatable; default all)")
    dae.add_argument("--horizon", type=float, default=1.0)
    return parser


def _config(args):
    overrides = {
        "out": args.out, "nu": args.nu, "dim": args.dim, "cfl": args.cfl, "theta": args.theta,
        "phase": args.phase, "tau_end": args.tau_end, "p": args.p,
        "nx": tuple(args.nx) if args.nx else None,
    }
    return load_config(args.config, DEFAULTS[args.command], **overrides)


def _write_rows(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_run(args) -> int:
    config = _config(args)
    outcome = run_experiment(config)
    if outcome.status:
        print(f"run failed: {outcome.error}", file=sys.stderr)
        return outcome.status
    s = outcome.result.state
    print(f"steps={outcome.result.n_steps} reason={outcome.result.reason} tau={s.tau:.6g} t={s.t:.6g} "
          f"alpha={s.alpha:.6g} b={list(map(float, s.b))} mu={list(map(float, s.mu))}")
    print(f"output written to {config.out}")
    return 0


def cmd_converge(args) -> int:
    config = _config(args)
    report = convergence_study(config, tau_end=config.tau_end)
    out = Path(config.out)
    _write_rows(out / "convergence.csv", report.table())
    (out / "convergence.json").write_text(json.dumps(
        {"phase": report.phase, "slopes": report.slopes, "reference": report.reference}, indent=2) + "\n")
    for key, slope in report.slopes.items():
        print(f"{key:5s} slope {slope:6.3f}")
    print(f"table written to {out / 'convergence.csv'}")
    return 0


def cmd_cfl_demo(args) -> int:
    config = _config(args)
    grid = config.grid()
    report = cfl_violation_demo(cfl=config.cfl, nu=config.nu, dx=grid.dx[0], tau_end=config.tau_end,
                                bounds=config.bounds[:2], theta=config.theta)
    out = Path(config.out)
    rows = [["tau", "oscillations", "max_norm", "physical_max_norm"]]
    rows += [[f"{t:.17g}", str(c), f"{m:.17g}", f"{u:.17g}"]
             for t, c, m, u in zip(report.tau, report.oscillations, report.max_norm, report.physical_max_norm)]
    _write_rows(out / "cfl_history.csv", rows)
    status = f"aborted ({report.reason})" if report.aborted else "completed"
    print(f"cfl={report.cfl:g}: {status} at tau={report.tau[-1]:.4g}; sign changes {report.initial_count} -> "
          f"{report.final_count} (peak {report.peak_count}); max|v| peak {max(report.max_norm):.4g}")
    return 0


def cmd_dae_order(args) -> int:
    names = args.example or sorted(EXAMPLES)
    out = Path(args.out or "out")
    for name in names:
        study = order_study(EXAMPLES[name](), DEFAULT_H, args.horizon)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"dae_order_{name}.csv").write_text(study.table())
        slopes = " ".join(f"{k}={v:.3f}" for k, v in study.slopes.items())
        print(f"{name}: {slopes}")
    return 0


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "cfl-demo": cmd_cfl_demo, "dae-order": cmd_dae_order}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FreezingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
