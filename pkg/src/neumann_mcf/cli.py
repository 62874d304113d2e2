"""Command line interface.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from . import pipeline as P
from .config import OUTPUT_ROOT_ENV, ChecksConfig, ConfigError, ExperimentConfig, InitialConfig, parse_config
from .evolve import SolverConfig, load_trajectory, run
from .grid import GridSpec

logger = logging.getLogger("neumann_mcf")


def _pair(text: str) -> tuple[float, float]:
    parts = text.replace(" ", "").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected X,Y (got {text!r})")
    return float(parts[0]), float(parts[1])


def _floats(text: str) -> list[float]:
    return [float(p) for p in text.replace(",", " ").split()]


def _checks(args) -> ChecksConfig:
    return parse_config(args.config).checks if getattr(args, "config", None) else ChecksConfig()


def _path(p: str) -> Path:
    return ExperimentConfig.model_validate({"output": {"directory": p}}).output_dir()


def _finish(reports, title: str) -> int:
    for r in reports:
        print(r.line() + ("" if r.gating else " [not gating]"))
    ok = P.all_passed(reports)
    print(f"{title}: {'PASS' if ok else 'FAIL'}")
    return P.EXIT_PASS if ok else P.EXIT_FAIL


def cmd_make_initial(args) -> int:
    base = parse_config(args.config) if args.config else ExperimentConfig()
    d = base.domain
    grid = GridSpec(args.lx or d.period_x, args.ly or d.height_y, args.nx or d.nx, args.ny or d.ny)
    ini = base.initial.model_dump()
    if args.center is not None:
        ini["center_x"], ini["center_y"] = args.center
    if args.radius is not None:
        ini["radius"] = args.radius
    if args.delta is not None:
        ini["delta"] = args.delta
    st = P.make_initial(InitialConfig(**ini), grid, base.checks, _path(args.out))
    print("\n".join(st.text))
    return P.EXIT_PASS if P.all_passed(st.reports) else P.EXIT_FAIL


def cmd_evolve(args) -> int:
    g = P.load_snapshot_field(args.inp)
    cfg = SolverConfig(args.epsilon, args.t_end, args.snapshot_every, args.cfl, args.stats_every, args.scheme)
    out = _path(args.out_dir)
    traj = run(g, cfg, out)
    P.emit_plot_data(traj, "timeseries", out / "plot" / "timeseries.csv")
    last = traj.records[-1]
    print(f"wrote {len(traj)} snapshots to {out}; t={last.t:.6g} energy={last.energy:.6g} l1_H={last.l1_H:.6g}")
    return P.EXIT_PASS


def cmd_diagnose(args) -> int:
    traj = load_trajectory(args.traj)
    sweep = [load_trajectory(p) for p in args.epsilon_sweep or []]
    center = args.center or (traj.grid.period_x / 2, 0.0)
    reps = P.diagnose(traj, _checks(args), center, sweep)
    out = Path(args.out) if args.out else Path(args.traj) / "identities.csv"
    P._report_file(out, reps)
    return _finish(reps, f"diagnose {args.traj}")


def cmd_levelsets(args) -> int:
    traj = load_trajectory(args.traj)
    checks = _checks(args)
    if args.stride is not None:
        checks = checks.model_copy(update={"varifold_stride": args.stride})
    gammas = _floats(args.gammas) if args.gammas else None
    center = args.center or (traj.grid.period_x / 2, 0.0)
    out = Path(args.out) if args.out else Path(args.traj) / "curves"
    ls = P.levelsets(traj, checks, gammas, center, out)
    return _finish(ls.checks, f"levelsets {args.traj}")


def cmd_report(args) -> int:
    code, path = P.write_summary(args.traj)
    print(path.read_text(), end="")
    return code


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.output:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"directory": args.output})})
    man = P.run_experiment(cfg)
    for s in man.stages:
        eps = "" if s.epsilon is None else f" eps={s.epsilon:g}"
        status = "error: " + s.error if s.error else {True: "pass", False: "fail", None: "done"}[s.passed]
        print(f"{s.name}{eps}: {status} ({s.seconds:.1f} s)")
    print(f"manifest: {Path(man.output_dir) / 'manifest.json'}  exit={man.exit_code}")
    return man.exit_code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neumann-mcf", description=__doc__.splitlines()[0] if __doc__ else None,
                                 epilog=f"Relative output paths resolve under ${OUTPUT_ROOT_ENV} when it is set.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-initial", help="build and check the initial datum")
    p.add_argument("--center", type=_pair)
    p.add_argument("--radius", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--lx", type=float)
    p.add_argument("--ly", type=float)
    p.add_argument("--config", help="INI file supplying domain, initial and check settings")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_initial)

    p = sub.add_parser("evolve", help="evolve a snapshot and write the trajectory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--snapshot-every", type=float, required=True)
    p.add_argument("--cfl", type=float, default=0.2)
    p.add_argument("--stats-every", type=int, default=1)
    p.add_argument("--scheme", choices=("flux", "sigma"), default="flux")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("diagnose", help="field-level identity checks; writes identities.csv")
    p.add_argument("--traj", required=True)
    p.add_argument("--epsilon-sweep", nargs="*", metavar="DIR", help="trajectories at other eps")
    p.add_argument("--center", type=_pair)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("levelsets", help="extract level curves and run the varifold checks")
    p.add_argument("--traj", required=True)
    p.add_argument("--gammas", help="uniform list of levels, e.g. '-0.9 -0.8 ... 0.9'")
    p.add_argument("--stride", type=int, help="use every k-th snapshot")
    p.add_argument("--center", type=_pair)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_levelsets)

    p = sub.add_parser("report", help="aggregate all check files below a directory")
    p.add_argument("--traj", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("config")
    p.add_argument("--output", help="override [output] directory")
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return P.EXIT_ERROR if exc.code else P.EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return P.EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return P.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
