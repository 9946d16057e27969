"""``beamlink`` command-line tool.

One binary, subcommand style.  Configuration precedence is CLI ``--set``
overrides > config file > built-in defaults; every subcommand honors
``--seed`` and identical invocations produce byte-identical artifacts.

Artifact layout under ``--outdir`` (default ``./out``):

    calibration.json            from ``calibrate``
    runs/<name>/log.csv         per-experiment table
    runs/<name>/summary.json    per-experiment scalars
    runs/<name>/plot.dat        with ``--emit-plots`` (gnuplot-ready)

Exit codes:

    0  success
    1  usage error, bad config key/value, impossible request
    2  input could not be read or parsed (session, trace, calibration)
    3  pose recovery failed (scan surfaces, axes, beam bundle)
    4  drive mapping fit failed
    5  an output artifact could not be written
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import calibration as cal
from . import fsk
from .config import DEFAULT_SEED, SimConfig, load_config, schema_keys
from .errors import (BeamlinkError, BehindDeviceError, DegenerateInputError,
                     IllConditionedError, NoIntersectionError,
                     NonOrthogonalAxesError, ParallelBundleError,
                     ParallelRaysError, RankDeficientError, TooFewGroupsError,
                     UnderdeterminedError)
from .optics import SimScene, make_rig, render_stereo_pair, write_pgm
from .runtime import scenarios
from .tracking import detect_blobs, histogram256, otsu_threshold, write_mask_pgm

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_POSE = 3
EXIT_MAPPING = 4
EXIT_OUTPUT = 5

POSE_ERRORS = (TooFewGroupsError, UnderdeterminedError,
               NonOrthogonalAxesError, NoIntersectionError,
               IllConditionedError, ParallelBundleError,
               DegenerateInputError, ParallelRaysError)
MAPPING_ERRORS = (RankDeficientError, BehindDeviceError)

DEFAULT_SNR_GRID_DB = [-6.0, -5.0, -4.0, -3.0, -2.0, -1.0, 0.0,
                       1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
DEFAULT_BITS_PER_POINT = 10_000


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for input
    parse failures, so route usage problems to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(code: int, message: str) -> int:
    print(f"beamlink: {message}", file=sys.stderr)
    return code


def _schema_epilog() -> str:
    lines = ["config override keys (--set KEY=VALUE):"]
    for key, typ, default in schema_keys(SimConfig()):
        lines.append(f"  {key:42s} {typ.__name__}, default {default!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML or JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="dotted config override, repeatable")
    common.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--outdir", default="out", metavar="DIR",
                        help="artifact directory (default ./out)")
    common.add_argument("--emit-plots", action="store_true",
                        help="also write gnuplot-ready .dat files")

    p = _Parser(prog="beamlink",
                description="Laser steering, FSK link and robot simulator.",
                epilog=_schema_epilog(),
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    c = sub.add_parser("calibrate", parents=[common],
                       help="run the scan-and-fit pipeline, write calibration.json")
    c.add_argument("--session", metavar="PATH",
                   help="recorded session (JSONL); default synthesizes one")
    c.add_argument("--noise-px", type=float, default=None,
                   help="centroid noise for synthesized sessions")
    c.add_argument("--save-session", metavar="PATH",
                   help="also write the session that was used")

    for name, txt in (("grid-test", "irradiance uniformity over the workspace"),
                      ("velocity-sweep", "delivered power vs target speed"),
                      ("simulate", "closed-loop scenario run")):
        s = sub.add_parser(name, parents=[common], help=txt)
        s.add_argument("--calibration", metavar="PATH",
                       help="calibration.json (default <outdir>/calibration.json)")
        if name == "simulate":
            s.add_argument("--scenario", default="static",
                           choices=("static", "path", "obstacle"))
            s.add_argument("--trace", metavar="PATH_OR_NAME",
                           help="command trace JSON, or a built-in name "
                                "(forward / avoid_left / avoid_right)")
            s.add_argument("--duration", type=float, default=None,
                           help="seconds (default per scenario)")

    b = sub.add_parser("ber-sweep", parents=[common],
                       help="Monte-Carlo bit error rate vs SNR")
    b.add_argument("--snr-db", default=None, metavar="LIST",
                   help="comma-separated SNR points "
                        "(default -6..6 in 1 dB steps)")
    b.add_argument("--bits", type=int, default=DEFAULT_BITS_PER_POINT,
                   help=f"bits per point (default {DEFAULT_BITS_PER_POINT})")

    v = sub.add_parser("serve", parents=[common],
                       help="run the WebSocket service")
    v.add_argument("--calibration", metavar="PATH",
                   help="calibration.json (default: synthesize noiseless)")

    r = sub.add_parser("render-debug", parents=[common],
                       help="dump a stereo frame, masks and blob report")
    r.add_argument("--robot-xy", default="0.05,-0.04", metavar="X,Y",
                   help="tag position on the floor (m)")

    return p


# --- artifact helpers --------------------------------------------------------


def _run_dir(outdir: Path, name: str) -> Path:
    d = Path(outdir) / "runs" / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_summary(run_dir: Path, summary: dict) -> None:
    (run_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _emit_plot(run_dir: Path) -> None:
    """Mirror log.csv as whitespace-separated plot.dat with a # header."""
    rows = (run_dir / "log.csv").read_text().splitlines()
    out = ["# " + " ".join(rows[0].split(","))]
    out += [" ".join(r.split(",")) for r in rows[1:]]
    (run_dir / "plot.dat").write_text("\n".join(out) + "\n")


def _load_calibration(args, outdir: Path):
    path = Path(args.calibration or (outdir / "calibration.json"))
    if not path.is_file():
        raise FileNotFoundError(
            f"no calibration at {path} (run `beamlink calibrate` first)")
    return cal.load_calibration(path)


# --- subcommands --------------------------------------------------------------


def cmd_calibrate(args, cfg: SimConfig, outdir: Path) -> int:
    if args.session:
        try:
            session = cal.load_session(args.session)
        except (OSError, ValueError, KeyError) as e:
            return _fail(EXIT_INPUT, f"cannot load session: {e}")
    else:
        session = cal.synthesize_session(cfg, noise_px=args.noise_px)

    try:
        result = cal.calibrate(session, cfg.tol)
    except POSE_ERRORS as e:
        return _fail(EXIT_POSE, f"pose recovery failed: {e}")
    except MAPPING_ERRORS as e:
        return _fail(EXIT_MAPPING, f"mapping fit failed: {e}")

    try:
        outdir.mkdir(parents=True, exist_ok=True)
        cal.save_calibration(result, outdir / "calibration.json")
        if args.save_session:
            cal.save_session(session, args.save_session)
    except OSError as e:
        return _fail(EXIT_OUTPUT, f"cannot write artifacts: {e}")

    print(f"wrote {outdir / 'calibration.json'}")
    for k in sorted(result.diagnostics):
        print(f"  {k:24s} {result.diagnostics[k]:.6g}")
    return 0


def cmd_grid_test(args, cfg: SimConfig, outdir: Path) -> int:
    calib = _load_calibration(args, outdir)
    result = scenarios.grid_test(cfg, calib)
    run = _run_dir(outdir, "grid-test")
    result.to_csv(run / "log.csv")
    _write_summary(run, result.summary())
    if args.emit_plots:
        _emit_plot(run)
    print(f"{len(result.rows)} points, mean {result.mean:.4g} mW/cm^2, "
          f"rel std {100 * result.rel_std:.3g}%")
    return 0


def cmd_velocity_sweep(args, cfg: SimConfig, outdir: Path) -> int:
    calib = _load_calibration(args, outdir)
    result = scenarios.velocity_sweep(cfg, calib)
    run = _run_dir(outdir, "velocity-sweep")
    result.to_csv(run / "log.csv")
    _write_summary(run, result.summary())
    if args.emit_plots:
        _emit_plot(run)
    for s, d in zip(result.speeds_cm_s, result.drop_percent()):
        print(f"  {s:5.2f} cm/s  drop {d:6.3f}%")
    return 0


def cmd_ber_sweep(args, cfg: SimConfig, outdir: Path) -> int:
    if args.snr_db is not None:
        try:
            grid = [float(x) for x in args.snr_db.split(",") if x.strip()]
        except ValueError:
            return _fail(EXIT_USAGE, f"bad --snr-db list: {args.snr_db!r}")
    else:
        grid = DEFAULT_SNR_GRID_DB
    alphabet = fsk.SymbolAlphabet.lr(cfg.channel)
    result = fsk.ber_sweep(alphabet, grid, args.bits, cfg.seed, cfg.channel)
    run = _run_dir(outdir, "ber-sweep")
    result.write_csv(run / "log.csv")
    crossing = result.crossing_db(fsk.PRE_FEC_BER)
    _write_summary(run, {
        "bits_per_point": args.bits,
        "fit_mid_db": result.fit_mid_db,
        "fit_scale_db": result.fit_scale_db,
        "pre_fec_crossing_db": None if math.isnan(crossing) else crossing,
    })
    if args.emit_plots:
        _emit_plot(run)
    for snr, point in result.points:
        print(f"  {snr:6.2f} dB  ber {point.ber:.3e}  "
              f"({point.bit_errors}/{point.bits_sent})")
    return 0


def cmd_simulate(args, cfg: SimConfig, outdir: Path) -> int:
    calib = _load_calibration(args, outdir)
    trace = None
    if args.trace:
        if Path(args.trace).is_file():
            try:
                trace = scenarios.load_trace(args.trace)
            except (OSError, ValueError, KeyError) as e:
                return _fail(EXIT_INPUT, f"cannot load trace: {e}")
        elif args.trace in scenarios.AVOID_TRACES:
            trace = scenarios.AVOID_TRACES[args.trace]
        else:
            return _fail(EXIT_USAGE, f"unknown trace {args.trace!r}")

    if args.scenario == "static":
        log, direct = scenarios.static_hold(
            cfg, calib, duration_s=args.duration or 2.0, seed=cfg.seed)
        irr = [v for v in log.column("irradiance_mw_cm2") if v == v]
        summary = {"direct_irradiance_mw_cm2": direct,
                   "median_irradiance_mw_cm2": sorted(irr)[len(irr) // 2]}
    elif args.scenario == "path":
        res = scenarios.path_follow(cfg, calib, seed=cfg.seed, trace=trace,
                                    duration_s=args.duration or 60.0)
        log, summary = res.log, res.summary
    else:
        res = scenarios.obstacle_avoid(cfg, calib, trace=trace or "forward",
                                       seed=cfg.seed,
                                       duration_s=args.duration or 40.0)
        log, summary = res.log, res.summary

    run = _run_dir(outdir, args.scenario)
    log.to_csv(run / "log.csv")
    _write_summary(run, summary)
    if args.emit_plots:
        _emit_plot(run)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_serve(args, cfg: SimConfig, outdir: Path) -> int:
    from .runtime import service

    calib = None
    if args.calibration:
        calib = cal.load_calibration(args.calibration)
    print(f"serving on http://{cfg.service.host}:{cfg.service.port}")
    service.serve(cfg, calib)
    return 0


def cmd_render_debug(args, cfg: SimConfig, outdir: Path) -> int:
    try:
        x, y = (float(v) for v in args.robot_xy.split(","))
    except ValueError:
        return _fail(EXIT_USAGE, f"bad --robot-xy: {args.robot_xy!r}")
    rig = make_rig(cfg.rig, decimation=cfg.loop.render_decimation)
    scene = SimScene(cfg.scene, robot_xy=(x, y))
    left, right = render_stereo_pair(scene, rig, cfg.rig, seed=cfg.seed)
    run = _run_dir(outdir, "render-debug")
    report = {}
    for name, img in (("left", left), ("right", right)):
        write_pgm(run / f"{name}.pgm", img)
        thr = otsu_threshold(histogram256(img))
        write_mask_pgm(run / f"{name}_mask.pgm", img, thr)
        blobs = detect_blobs(img, thr, cfg.tracker)
        report[name] = {
            "threshold": thr,
            "blobs": [{"centroid": list(b.centroid), "area": b.area,
                       "peak": int(b.peak)} for b in blobs],
        }
    _write_summary(run, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


HANDLERS = {
    "calibrate": cmd_calibrate,
    "grid-test": cmd_grid_test,
    "velocity-sweep": cmd_velocity_sweep,
    "ber-sweep": cmd_ber_sweep,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "render-debug": cmd_render_debug,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help (0) or usage error (1)
        return int(e.code or 0)

    try:
        cfg = load_config(args.config, args.set)
    except (OSError, KeyError, ValueError) as e:
        return _fail(EXIT_USAGE, f"bad config: {e}")
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = Path(args.outdir)

    try:
        return HANDLERS[args.command](args, cfg, outdir)
    except FileNotFoundError as e:
        return _fail(EXIT_INPUT, str(e))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        return _fail(EXIT_INPUT, f"cannot parse input: {e}")
    except POSE_ERRORS as e:
        return _fail(EXIT_POSE, f"pose recovery failed: {e}")
    except MAPPING_ERRORS as e:
        return _fail(EXIT_MAPPING, f"mapping fit failed: {e}")
    except OSError as e:
        return _fail(EXIT_OUTPUT, f"cannot write artifacts: {e}")
    except BeamlinkError as e:
        return _fail(EXIT_USAGE, f"request cannot be satisfied: {e}")


if __name__ == "__main__":
    raise SystemExit(main())
