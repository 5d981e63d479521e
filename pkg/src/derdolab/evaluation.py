"""Curves, Bjontegaard-delta metrics for rate and decoding energy, sweeps and reports."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec.decoder import decode_sequence
from .derdo.lagrange import QPTriple, RhoEpsilon
from .derdo.optimize import multi_qp_optimize, single_qp_optimize
from .energy_model import SpecificEnergies, estimate_energy_bf
from .frame_io import Frame, sequence_psnr

AXES = ("rate", "energy")
PIPELINES = ("single", "multi")
CURVES_HEADER = ["qp", "tau", "rate_bytes", "psnr_yuv_db", "energy_joules", "energy_kind"]
DIAGRAM_HEADER = ["tau", "bdr_percent", "bdde_percent"]
INTEGRATION_POINTS = 1000


class IntegrityError(RuntimeError):
    """Decoder output disagrees with the encoder."""


@dataclass(frozen=True)
class CurvePoint:
    qp: int
    tau: float
    rate_bytes: int
    psnr_yuv: float
    energy_joules: float
    energy_kind: str = "modeled"

    def axis_value(self, axis: str) -> float:
        if axis == "rate":
            return float(self.rate_bytes)
        if axis == "energy":
            return float(self.energy_joules)
        raise ValueError(f"axis must be one of {AXES}")


@dataclass(frozen=True)
class BDResult:
    value: float  # percent
    axis: str
    anchor_tau: float | None = None
    test_tau: float | None = None


def energy_kind(energies: SpecificEnergies) -> str:
    return "proxy-calibrated" if energies.provenance == "calibrated" else "modeled"


def _curve(points: Sequence[CurvePoint], axis: str, name: str):
    if len(points) < 4:
        raise ValueError(f"{name} curve needs at least 4 points, got {len(points)}")
    x = np.array([p.axis_value(axis) for p in points])
    psnr = np.array([p.psnr_yuv for p in points])
    if not np.all(np.isfinite(psnr)):
        raise ValueError(f"{name} curve contains non-finite PSNR")
    if np.any(x <= 0):
        raise ValueError(f"{name} curve has non-positive {axis} values")
    order = np.argsort(psnr, kind="stable")
    x, psnr = x[order], psnr[order]
    if np.any(np.diff(psnr) <= 0) or np.any(np.diff(x) <= 0):
        raise ValueError(f"{name} curve is not strictly monotone ({axis} vs PSNR)")
    return psnr, np.log10(x)


def bd_metric(reference: Sequence[CurvePoint], test: Sequence[CurvePoint], axis: str = "rate") -> BDResult:
    """Mean axis difference of ``test`` over ``reference`` at equal PSNR, in percent.

    Each curve's log10(axis) is interpolated over PSNR with a monotone
    piecewise-cubic Hermite interpolant, the gap is averaged over the
    overlapping PSNR interval (composite trapezoid rule), and the mean log
    gap g is reported as 100 * (10^g - 1).
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    pr, lr = _curve(reference, axis, "reference")
    pt, lt = _curve(test, axis, "test")
    lo, hi = max(pr[0], pt[0]), min(pr[-1], pt[-1])
    if not lo < hi:
        raise ValueError("curves have no overlapping PSNR interval")
    grid = np.linspace(lo, hi, INTEGRATION_POINTS)
    gap = PchipInterpolator(pt, lt)(grid) - PchipInterpolator(pr, lr)(grid)
    mean_gap = np.trapezoid(gap, grid) / (hi - lo)
    anchor = {p.tau for p in reference}
    tested = {p.tau for p in test}
    return BDResult(
        float(100.0 * (10.0 ** mean_gap - 1.0)),
        axis,
        anchor.pop() if len(anchor) == 1 else None,
        tested.pop() if len(tested) == 1 else None,
    )


@dataclass(frozen=True, eq=False)
class SweepResult:
    points: list[CurvePoint]
    bd: dict[float, tuple[BDResult, BDResult]] = field(default_factory=dict)
    pipeline: str = "single"
    triples: list[QPTriple] = field(default_factory=list)  # multi-QP sweeps only

    def curve(self, tau: float) -> list[CurvePoint]:
        return sorted((p for p in self.points if p.tau == tau), key=lambda p: p.qp)

    def diagram(self) -> list[tuple[float, float, float]]:
        """(tau, BDR %, BDDE %) rows of the rate-energy diagram."""
        return [(tau, r.value, e.value) for tau, (r, e) in sorted(self.bd.items())]


def _verify_and_measure(frames, res, energies, qp, tau) -> CurvePoint:
    dec = decode_sequence(res.bitstream.to_bytes())
    for i, (a, b) in enumerate(zip(res.reconstruction, dec.frames)):
        if not all(np.array_equal(pa, pb) for pa, pb in zip(a.planes, b.planes)):
            raise IntegrityError(f"qp={qp} tau={tau}: decoder reconstruction differs in frame {i}")
    if dec.features != res.features:
        raise IntegrityError(f"qp={qp} tau={tau}: feature tallies differ {res.features.diff(dec.features)}")
    quality = sequence_psnr(frames, dec.frames)
    return CurvePoint(qp, tau, res.rate_bytes, quality.psnr_yuv,
                      estimate_energy_bf(dec.features, energies), energy_kind(energies))


def _run(frames, qp, tau, pipeline, energies, re, config):
    config = dict(config or {})
    triple = None
    if pipeline == "single":
        res = single_qp_optimize(frames, qp, tau, re, energies, **config)
    elif pipeline == "multi":
        m = multi_qp_optimize(frames, qp, tau, re, energies, **config)
        res, triple = m.result, m.triple
    else:
        raise ValueError(f"pipeline must be one of {PIPELINES}")
    return _verify_and_measure(frames, res, energies, qp, tau), triple


def run_cell(frames: Sequence[Frame], qp: int, tau: float, pipeline: str, energies: SpecificEnergies,
             re: RhoEpsilon, config: dict | None = None) -> CurvePoint:
    """Encode one (qp, tau) cell, decode it and measure it from the decoder's side."""
    return _run(frames, qp, tau, pipeline, energies, re, config)[0]


def _cell_job(args):
    return _run(*args)


def sweep(frames: Sequence[Frame], qps: Sequence[int], taus: Sequence[float], pipeline: str,
          energies: SpecificEnergies, re: RhoEpsilon, jobs: int = 1,
          config: dict | None = None) -> SweepResult:
    """Encode every (qp, tau) pair and compute BDR/BDDE of each tau against tau = 0.

    BD values need at least 4 QPs; with fewer, only the curve table is
    produced. Any decoder/encoder disagreement aborts the sweep.
    """
    if pipeline not in PIPELINES:
        raise ValueError(f"pipeline must be one of {PIPELINES}")
    if not qps or not taus:
        raise ValueError("need at least one QP and one tau")
    cells = [(list(frames), int(qp), float(tau), pipeline, energies, re, config)
             for tau in taus for qp in qps]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_job, cells))
    else:
        outcomes = [_cell_job(c) for c in cells]
    points = [p for p, _ in outcomes]
    triples = [t for _, t in outcomes if t is not None]
    result = SweepResult(points, {}, pipeline)
    bd = {}
    if len(set(qps)) >= 4:
        if 0.0 not in {float(t) for t in taus}:
            raise ValueError("BD metrics are anchored at tau = 0, which is missing from the sweep")
        anchor = result.curve(0.0)
        for tau in sorted({float(t) for t in taus}):
            test = result.curve(tau)
            bd[tau] = (bd_metric(anchor, test, "rate"), bd_metric(anchor, test, "energy"))
    return SweepResult(points, bd, pipeline, triples)


def write_curves(points: Iterable[CurvePoint], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for p in points:
            w.writerow([p.qp, repr(float(p.tau)), p.rate_bytes, repr(float(p.psnr_yuv)),
                        repr(float(p.energy_joules)), p.energy_kind])


def read_curves(path: str | os.PathLike) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != CURVES_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVES_HEADER)}")
        return [CurvePoint(int(r[0]), float(r[1]), int(r[2]), float(r[3]), float(r[4]), r[5])
                for r in reader if r]


def write_diagram(rows: Iterable[tuple[float, float, float]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGRAM_HEADER)
        for tau, bdr, bdde in rows:
            w.writerow([repr(float(tau)), repr(float(bdr)), repr(float(bdde))])


def _plot(points: Sequence[CurvePoint], diagram, path: Path) -> None:
    import matplotlib
    from matplotlib.figure import Figure

    kind = points[0].energy_kind if points else "modeled"
    with matplotlib.rc_context({"svg.hashsalt": "derdolab", "svg.fonttype": "path"}):
        fig = Figure(figsize=(12, 4))
        ax_rd, ax_de, ax_re = fig.subplots(1, 3)
        for tau in sorted({p.tau for p in points}):
            curve = sorted((p for p in points if p.tau == tau), key=lambda p: p.qp)
            label = f"tau={tau:g}"
            ax_rd.plot([p.rate_bytes for p in curve], [p.psnr_yuv for p in curve], "o-", label=label)
            ax_de.plot([p.energy_joules for p in curve], [p.psnr_yuv for p in curve], "o-", label=label)
        ax_rd.set_xlabel("rate [bytes]")
        ax_de.set_xlabel(f"decoding energy [J, {kind}]")
        for ax in (ax_rd, ax_de):
            ax.set_xscale("log")
            ax.set_ylabel("YUV-PSNR [dB]")
            ax.legend(fontsize="small")
        if diagram:
            ax_re.plot([r[1] for r in diagram], [r[2] for r in diagram], "s-")
            for tau, bdr, bdde in diagram:
                ax_re.annotate(f"{tau:g}", (bdr, bdde), fontsize="small")
        ax_re.set_xlabel("BDR [%]")
        ax_re.set_ylabel("BDDE [%]")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})


def emit_report(points: Sequence[CurvePoint], curves_path: str | os.PathLike,
                diagram: Sequence[tuple[float, float, float]] = (),
                diagram_path: str | os.PathLike | None = None) -> list[Path]:
    """Write the curve table, the rate-energy diagram and an SVG next to the curves CSV."""
    if not points:
        raise ValueError("empty curve table")
    curves_path = Path(curves_path)
    written = [curves_path]
    write_curves(points, curves_path)
    if diagram_path is not None:
        write_diagram(diagram, diagram_path)
        written.append(Path(diagram_path))
    svg = curves_path.with_suffix(".svg")
    _plot(points, list(diagram), svg)
    written.append(svg)
    return written


def bd_summary(result: SweepResult) -> str:
    parts = []
    for tau, bdr, bdde in result.diagram():
        parts.append(f"tau={tau:g}:BDR={bdr:.3f}%,BDDE={bdde:.3f}%")
    return " ".join(parts) if parts else "(fewer than 4 QPs: no BD values)"
