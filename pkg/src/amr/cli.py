"""Command-line entry point: ``amr estimate | simulate | permute | oracle``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import design as dsg
from . import io
from .errors import DataError, NumericError, TooLarge
from .estimators import estimate_hajek, estimate_ht
from .permutation import Statistic, permutation_test
from .simulation import SyntheticScene, run_experiment, true_amr
from .smoothing import SmoothSpec, smooth_amr
from .spatial import DistanceGrid, circle_averages, default_kappa
from .variance import NeighborhoodSpec, hac_curve, neighborhoods_for_grid

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bandwidth(text: str):
    if text == "cv":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be a number or 'cv', got {text!r}") from None


def _add_grid(p):
    p.add_argument("--dmin", type=float, default=0.0)
    p.add_argument("--dmax", type=float, required=True)
    p.add_argument("--dstep", type=float, required=True)
    p.add_argument("--kappa", type=int, default=None, help="coarsening digits (default: from cell size)")


def _add_output(p):
    p.add_argument("--out", type=Path, default=None, help="result file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None,
                   help="output format (default: from the --out suffix, else csv)")


def _add_scene(p):
    p.add_argument("--scene", choices=("additive", "interactive", "null"), default="additive")
    p.add_argument("--scene-file", type=Path, default=None, help="JSON scene written by --save-scene")
    p.add_argument("--n", type=int, default=64, help="number of intervention points (a square)")
    p.add_argument("--grid", type=int, default=None, help="raster side in cells (default 10*sqrt(n))")
    p.add_argument("--save-scene", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="AMR curve from a raster and intervention points")
    est.add_argument("--raster", type=Path, required=True)
    est.add_argument("--points", type=Path, required=True)
    _add_grid(est)
    est.add_argument("--estimator", choices=("hajek", "ht"), default="hajek")
    est.add_argument("--design", default=None, help="bernoulli:P or complete:N1")
    est.add_argument("--seed", type=int, default=None)
    hb = est.add_mutually_exclusive_group()
    hb.add_argument("--hband", type=float, default=None, help="constant interference bound h")
    hb.add_argument("--hband-table", type=Path, default=None, help="CSV of d,h rows")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--edof", action=argparse.BooleanOptionalAction, default=True)
    est.add_argument("--crit", choices=("normal", "t"), default="normal")
    est.add_argument("--smooth", action="store_true")
    est.add_argument("--bandwidth", type=_bandwidth, default="cv")
    est.add_argument("--bw-grid", type=_floats, default=())
    est.add_argument("--folds", type=int, default=5)
    _add_output(est)

    sim = sub.add_parser("simulate", help="Monte Carlo experiment on a synthetic scene")
    _add_scene(sim)
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--estimator", choices=("hajek", "ht"), default="hajek")
    sim.add_argument("--level", type=float, default=0.95)
    sim.add_argument("--hband", type=float, default=None, help="override the scene's own h(d)")
    sim.add_argument("--replicates-out", type=Path, default=None, help="per-replicate long CSV")
    _add_output(sim)

    per = sub.add_parser("permute", help="sharp-null permutation test")
    per.add_argument("--raster", type=Path, required=True)
    per.add_argument("--points", type=Path, required=True)
    _add_grid(per)
    per.add_argument("--design", default=None,
                     help="redraw design (default: complete with the observed N1)")
    per.add_argument("--stat", required=True, help="at:D or mean:A:B")
    per.add_argument("--reps", type=int, default=2000)
    per.add_argument("--seed", type=int, required=True)
    per.add_argument("--tail", choices=("two", "upper", "lower"), default="two")
    per.add_argument("--draws-out", type=Path, default=None, help="CSV of the null draws")
    _add_output(per)

    ora = sub.add_parser("oracle", help="print the true AMR curve of a synthetic scene")
    _add_scene(ora)
    ora.add_argument("--mode", choices=("analytic_additive", "enumerate", "monte_carlo"), default=None)
    ora.add_argument("--draws", type=int, default=100_000)
    ora.add_argument("--seed", type=int, default=None)
    _add_output(ora)
    return parser


# -- helpers ---------------------------------------------------------------

def _format(args) -> str:
    if args.format:
        return args.format
    if args.out is not None and args.out.suffix.lower() == ".json":
        return "json"
    return "csv"


def _distance_grid(args, cell_size: float) -> DistanceGrid:
    kappa = default_kappa(cell_size) if args.kappa is None else args.kappa
    return DistanceGrid.from_range(args.dmin, args.dmax, args.dstep, kappa)


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "argv"}


def _emit(args, result, extra_outputs=()):
    fmt = _format(args)
    if args.out is None:
        tmp = _stdout_render(result, fmt)
        sys.stdout.write(tmp)
        manifest = {"command": args.command, "argv": args.argv, "config": _config(args),
                    "seed": getattr(args, "seed", None), "version": io.software_version()}
        sys.stderr.write("manifest: " + json.dumps(manifest, default=str) + "\n")
        return
    io.emit_results(result, fmt, args.out)
    io.write_manifest(io.manifest_path(args.out), args.command, _config(args),
                      getattr(args, "seed", None), [args.out, *extra_outputs], argv=args.argv)


def _stdout_render(result, fmt) -> str:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / f"out.{fmt}"
        io.emit_results(result, fmt, path)
        return path.read_text()


def _scene(args) -> SyntheticScene:
    if args.scene_file is not None:
        try:
            data = json.loads(args.scene_file.read_text())
        except OSError as exc:
            raise DataError(f"cannot read scene {args.scene_file}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.scene_file}: bad scene JSON ({exc.msg})") from exc
        scene = SyntheticScene.from_dict(data)
    else:
        scene = SyntheticScene.named(args.scene, n_points=args.n, grid_size=args.grid,
                                     seed=getattr(args, "seed", None) or 0)
    if args.save_scene is not None:
        io._write_json(args.save_scene, scene.to_dict())
    return scene


def _hband_spec(args) -> NeighborhoodSpec | None:
    if args.hband is not None:
        return NeighborhoodSpec.constant(args.hband)
    if getattr(args, "hband_table", None) is not None:
        return NeighborhoodSpec.from_table(io.load_hband_table(args.hband_table))
    return None


def _observed_assignment(args, pts):
    """Observed ``z`` from the points file, or a draw from ``--design``."""
    design = dsg.AssignmentDesign.parse(args.design, args.seed or 0) if args.design else None
    if pts.assignment is not None:
        return pts.assignment, design
    if design is None:
        raise UsageError("points file has no z column; give --design (with --seed) to draw an assignment")
    if args.seed is None:
        raise UsageError("--seed is required to draw an assignment from --design")
    return dsg.draw_assignment(design, pts.n, 0).z, design


# -- subcommands -----------------------------------------------------------

def cmd_estimate(args):
    if args.smooth and args.estimator == "ht":
        raise UsageError("--smooth applies to the Hajek estimator only")
    if args.bandwidth == "cv" and args.smooth and args.folds < 2:
        raise UsageError("--folds must be at least 2")
    grid = io.load_raster(args.raster)
    pts = io.load_points(args.points)
    dg = _distance_grid(args, grid.cell_size)
    z, design = _observed_assignment(args, pts)
    table = circle_averages(grid, pts, dg)
    hband = _hband_spec(args)
    if hband is not None and design is not None and design.kind == "complete":
        warnings.warn("HAC inference under complete randomization is a reasonable, if typically "
                      "conservative, approximation to the Bernoulli theory", stacklevel=1)
    if args.estimator == "ht":
        if design is None:
            raise UsageError("the HT estimator needs the design probability; give --design")
        if hband is not None:
            warnings.warn("spatial-HAC standard errors are defined for the Hajek estimator; "
                          "HT output carries point estimates only", stacklevel=1)
        curve = estimate_ht(table, z, design.marginal_p(pts.n))
    elif args.smooth:
        spec = SmoothSpec(bandwidth=args.bandwidth, cv_folds=args.folds,
                          candidate_bandwidths=args.bw_grid, cv_seed=args.seed or 0)
        curve = smooth_amr(table, z, dg, spec, pts=pts, hband=hband, level=args.level)
    elif hband is not None:
        nbs = neighborhoods_for_grid(pts, dg.distances, hband)
        curve = hac_curve(table, z, nbs, level=args.level, adjust=args.edof, crit=args.crit)
    else:
        curve = estimate_hajek(table, z)
    _emit(args, curve)


def cmd_simulate(args):
    if args.reps < 1:
        raise UsageError("--reps must be positive")
    scene = _scene(args)
    h_spec = NeighborhoodSpec.constant(args.hband) if args.hband is not None else None
    report = run_experiment(scene, args.reps, estimator=args.estimator, h_spec=h_spec,
                            level=args.level, seed=args.seed)
    extra = []
    if args.replicates_out is not None:
        io._write_csv(args.replicates_out, io.replicate_rows(report))
        extra.append(args.replicates_out)
    if report.failed.any():
        warnings.warn(f"{int(report.failed.sum())} replicate(s) failed and were excluded", stacklevel=1)
    _emit(args, report, extra)


def cmd_permute(args):
    grid = io.load_raster(args.raster)
    pts = io.load_points(args.points)
    if pts.assignment is None:
        raise UsageError("permutation tests need the observed assignment as a z column")
    dg = _distance_grid(args, grid.cell_size)
    z = pts.assignment
    if args.design is not None:
        design = dsg.AssignmentDesign.parse(args.design, args.seed)
    else:
        design = dsg.AssignmentDesign.complete(int(z.sum()), args.seed)
    table = circle_averages(grid, pts, dg)
    stat = Statistic.parse(args.stat, dg.distances)
    res = permutation_test(table, z, design, stat, P=args.reps, tail=args.tail)
    extra = []
    if args.draws_out is not None:
        io.emit_results(res, "csv", args.draws_out)
        extra.append(args.draws_out)
    if args.format is None and args.out is None:
        args.format = "json"
    _emit(args, res, extra)


def cmd_oracle(args):
    scene = _scene(args)
    mode = args.mode or ("analytic_additive" if scene.is_additive else "enumerate")
    if mode == "monte_carlo" and args.seed is None:
        raise UsageError("--seed is required for the monte_carlo oracle")
    truth = true_amr(scene, mode, draws=args.draws, seed=args.seed or 0)
    rows = [["d", "amr", "se"]]
    for k, d in enumerate(truth.distances):
        se = "" if truth.se is None else repr(float(truth.se[k]))
        rows.append([repr(float(d)), repr(float(truth.values[k])), se])
    if args.out is None:
        sys.stdout.write("\n".join(",".join(r) for r in rows) + "\n")
        return
    io._write_csv(args.out, rows)
    io.write_manifest(io.manifest_path(args.out), "oracle", _config(args), args.seed, [args.out],
                      argv=args.argv)


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "permute": cmd_permute, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            COMMANDS[args.command](args)
    except (UsageError, TooLarge) as exc:
        print(f"amr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"amr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"amr {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
