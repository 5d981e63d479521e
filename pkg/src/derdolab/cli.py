"""Command-line entry point: ``derdolab <subcommand> [flags]``.

Every subcommand prints one ``key=value`` line on stdout and writes its
heavy output to files. Exit status is 0 on success, 2 on a usage error and
1 when a pipeline stage fails (the stage is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .codec import Bitstream, decode_sequence, time_decode
from .derdo import (
    ROUGH_COMPENSATION,
    TAU_EXPONENT,
    RhoEpsilon,
    fit_rho_epsilon,
    multi_qp_optimize,
    read_triples,
    single_qp_optimize,
    write_triples,
)
from .energy_model import (
    HLParams,
    SpecificEnergies,
    calibrate_energies,
    estimate_energy_bf,
    estimate_energy_hl,
    fit_hl_params,
    intra_fraction,
)
from .evaluation import bd_metric, emit_report, read_curves, sweep
from .frame_io import load_yuv, save_yuv, sequence_psnr

STATS_KEYS = ("rate_bytes", "psnr_yuv_db", "energy_joules", "qp_histogram")
HL_OBS_HEADER = ["rate_bytes", "frames", "pixels_per_frame", "p_intra", "energy_joules"]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


class _Stage:
    """``with _Stage("decode"): ...`` tags any exception with the stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, KeyboardInterrupt)):
            raise StageError(self.name, exc) from exc
        return False


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _emit(**fields) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()))


# --- shared flag groups ---------------------------------------------------

def _add_video_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="raw planar YUV 4:2:0 8-bit file")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--frames", type=int, required=True, help="number of frames to read")


def _add_coding_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--energies", help="specific energies CSV (default: the shipped synthetic set)")
    p.add_argument("--calibrated", action="store_true",
                   help="label energies from --energies as proxy-calibrated rather than modeled")
    p.add_argument("--rho", type=float, help="rho factor (default 1.5)")
    p.add_argument("--epsilon", type=float, help="epsilon factor (default from the HL constants)")
    p.add_argument("--fit-file", help="CSV 'rho,epsilon' from fit-rho-eps; excludes --rho/--epsilon")
    p.add_argument("--rough-compensation", type=float, default=ROUGH_COMPENSATION,
                   help="energy weight factor of the rough SAD cost (default sqrt(5e6))")
    p.add_argument("--tau-exponent", type=float, default=TAU_EXPONENT, help="default 3")
    p.add_argument("--intra-period", type=int, default=32, help="default 32")
    p.add_argument("--search-range", type=int, default=8, help="integer-pel motion range, default 8")


def _energies(args) -> SpecificEnergies:
    if args.energies is None:
        return SpecificEnergies.default()
    return SpecificEnergies.load(args.energies, "calibrated" if args.calibrated else "file")


def _rho_epsilon(args, parser) -> RhoEpsilon:
    if args.fit_file is not None:
        if args.rho is not None or args.epsilon is not None:
            parser.error("--fit-file cannot be combined with --rho/--epsilon")
        return RhoEpsilon.load(args.fit_file)
    default = RhoEpsilon()
    return RhoEpsilon(default.rho if args.rho is None else args.rho,
                      default.epsilon if args.epsilon is None else args.epsilon)


def _coding_config(args) -> dict:
    return {
        "intra_period": args.intra_period,
        "motion_search_range": args.search_range,
        "rough_compensation": args.rough_compensation,
        "tau_exponent": args.tau_exponent,
    }


def _load_frames(args):
    frames = load_yuv(args.input, args.width, args.height, args.frames)
    if len(frames) < args.frames:
        raise ValueError(f"{args.input} holds only {len(frames)} of {args.frames} frames")
    return frames


# --- subcommands -----------------------------------------------------------

def cmd_encode(args, parser) -> None:
    re = _rho_epsilon(args, parser)
    with _Stage("load"):
        energies = _energies(args)
        frames = _load_frames(args)
    with _Stage("encode"):
        extra = {}
        if args.dqp:
            m = multi_qp_optimize(frames, args.qp, args.tau, re, energies, delta_qp=args.dqp,
                                  **_coding_config(args))
            res = m.result
            extra = {"qp_star": m.triple.qp_star, "converged": m.converged, "iterations": m.iterations}
        else:
            res = single_qp_optimize(frames, args.qp, args.tau, re, energies, **_coding_config(args))
    energy = estimate_energy_bf(res.features, energies)
    stats = {
        "rate_bytes": res.rate_bytes,
        "psnr_yuv_db": res.quality.psnr_yuv,
        "energy_joules": energy,
        "qp_histogram": {str(k): v for k, v in sorted(res.qp_histogram.items())},
    }
    with _Stage("write"):
        Path(args.output).write_bytes(res.to_bytes())
        if args.stats:
            Path(args.stats).write_text(json.dumps(stats, indent=2) + "\n")
        if args.recon:
            save_yuv(res.reconstruction, args.recon)
    _emit(rate_bytes=res.rate_bytes, psnr_yuv_db=res.quality.psnr_yuv, energy_joules=energy, **extra)


def cmd_decode(args, parser) -> None:
    with _Stage("load"):
        data = Path(args.input).read_bytes()
    with _Stage("decode"):
        dec = decode_sequence(data)
    with _Stage("write"):
        save_yuv(dec.frames, args.output)
    fields = {"frames": len(dec.frames), "width": dec.frames[0].display_width,
              "height": dec.frames[0].display_height}
    if args.reference:
        with _Stage("compare"):
            ref = load_yuv(args.reference, fields["width"], fields["height"], len(dec.frames))
            fields["psnr_yuv_db"] = sequence_psnr(ref, dec.frames).psnr_yuv
    if args.features:
        with _Stage("write"):
            with open(args.features, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature", "count"])
                for name, n in dec.features.as_dict().items():
                    w.writerow([name, n])
    _emit(**fields)


def cmd_estimate_energy(args, parser) -> None:
    with _Stage("load"):
        bs = Bitstream.from_bytes(Path(args.input).read_bytes())
    hdr = bs.header
    if args.model == "hl":
        if args.hl_params is None:
            parser.error("--model hl needs --hl-params")
        with _Stage("estimate"):
            params = HLParams.load(args.hl_params)
            p_i = intra_fraction(hdr.frame_count, hdr.intra_period)
            energy = estimate_energy_hl(bs.size_bytes, hdr.frame_count, hdr.width * hdr.height, p_i, params)
        _emit(energy_joules=energy, model="hl", p_intra=p_i)
        return
    with _Stage("load"):
        energies = _energies(args)
    with _Stage("decode"):
        dec = decode_sequence(bs)
    _emit(energy_joules=estimate_energy_bf(dec.features, energies), model="bf",
          rate_bytes=bs.size_bytes)


def cmd_calibrate(args, parser) -> None:
    paths = [Path(p) for p in args.bitstreams]
    with _Stage("load"):
        streams = [Bitstream.from_bytes(p.read_bytes()) for p in paths]
    with _Stage("calibrate"):
        result = calibrate_energies(streams, time_decode, runs=args.runs, watts=args.watts,
                                    names=[p.name for p in paths])
    with _Stage("write"):
        result.energies.save(args.output)
        if args.log:
            result.write_log(args.log)
    _emit(bitstreams=len(streams), mean_relative_error=result.mean_relative_error,
          energy_kind="proxy-calibrated")


def cmd_fit_hl(args, parser) -> None:
    with _Stage("load"):
        with open(args.observations, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != HL_OBS_HEADER:
                raise ValueError(f"{args.observations}: expected header {','.join(HL_OBS_HEADER)}")
            obs = [tuple(float(v) for v in row) for row in reader if row]
    with _Stage("fit"):
        params, residual = fit_hl_params(obs)
    with _Stage("write"):
        params.save(args.output)
    _emit(c1=params.c1, c2=params.c2, c3=params.c3, c4=params.c4, residual=residual)


def cmd_fit_rho_eps(args, parser) -> None:
    with _Stage("load"):
        triples = [t for path in args.triples for t in read_triples(path)]
    with _Stage("fit"):
        fit = fit_rho_epsilon(triples)
    with _Stage("write"):
        fit.params.save(args.output)
    _emit(rho=float(fit.params.rho), epsilon=float(fit.params.epsilon),
          mean_abs_error=fit.mean_abs_error, max_abs_error=fit.max_abs_error,
          triples=len(triples), converged=fit.converged)


def cmd_bd(args, parser) -> None:
    with _Stage("load"):
        ref = read_curves(args.ref)
        test = read_curves(args.test)
    if args.ref_tau is not None:
        ref = [p for p in ref if p.tau == args.ref_tau]
    if args.test_tau is not None:
        test = [p for p in test if p.tau == args.test_tau]
    with _Stage("bd"):
        res = bd_metric(ref, test, args.axis)
    key = "bdr_percent" if args.axis == "rate" else "bdde_percent"
    _emit(**{key: res.value})


def cmd_sweep(args, parser) -> None:
    re = _rho_epsilon(args, parser)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.triples and args.pipeline != "multi":
        parser.error("--triples needs --pipeline multi")
    with _Stage("load"):
        energies = _energies(args)
        frames = _load_frames(args)
    with _Stage("sweep"):
        result = sweep(frames, args.qps, args.taus, args.pipeline, energies, re, jobs=args.jobs,
                       config=_coding_config(args))
    with _Stage("write"):
        written = emit_report(result.points, args.curves, result.diagram(), args.diagram)
        if args.triples:
            write_triples(result.triples, args.triples)
    fields = {"cells": len(result.points), "svg": str(written[-1])}
    for tau, bdr, bdde in result.diagram():
        fields[f"bdr_{tau:g}"] = bdr
        fields[f"bdde_{tau:g}"] = bdde
    _emit(**fields)


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derdolab",
        description="Decoding-energy-rate-distortion optimization over a toy block codec.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("encode", help="encode a YUV file")
    _add_video_flags(p)
    _add_coding_flags(p)
    p.add_argument("--qp", type=int, default=32, help="base QP, default 32")
    p.add_argument("--tau", type=float, default=0.0, help="rate-energy trade-off in [0, 1], default 0")
    p.add_argument("--dqp", type=int, choices=(0, 5), default=0,
                   help="0: single-QP encode; 5: multi-QP search over QP +- 5 (default 0)")
    p.add_argument("--output", required=True, help="bitstream file")
    p.add_argument("--stats", help="stats JSON with keys " + ", ".join(STATS_KEYS))
    p.add_argument("--recon", help="optional reconstructed YUV")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to YUV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="reconstructed YUV file")
    p.add_argument("--reference", help="original YUV for a PSNR report")
    p.add_argument("--features", help="optional CSV 'feature,count' of decoder feature tallies")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("estimate-energy", help="model the decoding energy of a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--model", choices=("bf", "hl"), default="bf",
                   help="bf: feature counts x specific energies (default); hl: high-level model")
    p.add_argument("--energies", help="specific energies CSV for --model bf")
    p.add_argument("--calibrated", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--hl-params", help="CSV 'c1,c2,c3,c4' for --model hl")
    p.set_defaults(func=cmd_estimate_energy)

    p = sub.add_parser("calibrate", help="fit specific energies to timed decodes")
    p.add_argument("--bitstreams", nargs="+", required=True, help="training bitstreams")
    p.add_argument("--runs", type=int, default=5, help="timed decodes per bitstream, default 5")
    p.add_argument("--watts", type=float, default=1.0, help="power constant, default 1.0 W")
    p.add_argument("--output", required=True, help="specific energies CSV")
    p.add_argument("--log", help="calibration log CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-hl", help="fit the high-level energy model")
    p.add_argument("--observations", required=True, help="CSV " + ",".join(HL_OBS_HEADER))
    p.add_argument("--output", required=True, help="CSV 'c1,c2,c3,c4'")
    p.set_defaults(func=cmd_fit_hl)

    p = sub.add_parser("fit-rho-eps", help="fit rho and epsilon to (lambda_r, lambda_e, QP*) triples")
    p.add_argument("--triples", nargs="+", required=True, help="CSV 'lambda_r,lambda_e,qp_star'")
    p.add_argument("--output", required=True, help="CSV 'rho,epsilon'")
    p.set_defaults(func=cmd_fit_rho_eps)

    p = sub.add_parser("bd", help="Bjontegaard delta between two curve tables")
    p.add_argument("--ref", required=True, help="reference curves CSV")
    p.add_argument("--test", required=True, help="test curves CSV")
    p.add_argument("--axis", choices=("rate", "energy"), default="rate")
    p.add_argument("--ref-tau", type=float, help="use only rows with this tau from --ref")
    p.add_argument("--test-tau", type=float, help="use only rows with this tau from --test")
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("sweep", help="encode a QP x tau grid and build the rate-energy diagram")
    _add_video_flags(p)
    _add_coding_flags(p)
    p.add_argument("--qps", type=int, nargs="+", default=[22, 27, 32, 37])
    p.add_argument("--taus", type=float, nargs="+", default=[0.0, 0.2, 0.5])
    p.add_argument("--pipeline", choices=("single", "multi"), default="single")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells, default 1")
    p.add_argument("--curves", required=True, help="curves CSV (an SVG is written next to it)")
    p.add_argument("--diagram", help="rate-energy diagram CSV")
    p.add_argument("--triples", help="QP triples CSV (multi pipeline only)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args, parser)
    except StageError as exc:
        print(f"derdolab {args.command}: stage {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"derdolab {args.command}: stage setup: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
