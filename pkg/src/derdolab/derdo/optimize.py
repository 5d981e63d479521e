"""Encoder-driving algorithms: multi-QP search for QP* and the one-shot single-QP encode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..codec.encoder import EncodeResult, EncoderConfig, encode_sequence
from ..energy_model import SpecificEnergies
from ..frame_io import Frame
from .lagrange import LagrangePair, QPTriple, RhoEpsilon, lambdas_from_qp_tau, qp_to_qstep

DELTA_QP = 5
MAX_ITERATIONS = 10


def histogram_peak(histogram: Mapping[int, int], default: int) -> int:
    """Most frequent QP; equal maxima resolve to the lower QP, empty to ``default``."""
    if not histogram or max(histogram.values()) == 0:
        return default
    top = max(histogram.values())
    return min(qp for qp, n in histogram.items() if n == top)


@dataclass(frozen=True, eq=False)
class MultiQPResult:
    result: EncodeResult
    triple: QPTriple
    histogram: dict[int, int]
    converged: bool
    iterations: int
    trajectory: list[tuple[float, float, int]] = field(default_factory=list)

    @property
    def bitstream(self):
        return self.result.bitstream


def multi_qp_optimize(frames: Sequence[Frame], qp_base: int, tau: float, re: RhoEpsilon,
                      energies: SpecificEnergies, delta_qp: int = DELTA_QP,
                      max_iterations: int = MAX_ITERATIONS, **config) -> MultiQPResult:
    """Find the QP the encoder prefers for the (qp_base, tau) multipliers.

    Every CTU picks its QP from [qp_base - delta_qp, qp_base + delta_qp]. If
    the histogram peak QP* lands on the lower border both multipliers are
    doubled, on the upper border both are halved, and the sequence is
    re-encoded, until QP* is interior or ``max_iterations`` encodes were
    spent. In the latter case the last encode is returned, flagged as not
    converged.
    """
    if delta_qp < 1:
        raise ValueError("multi-QP optimization needs delta_qp >= 1")
    cfg = EncoderConfig(qp_base=qp_base, delta_qp_range=delta_qp, tau=tau, rho=re.rho,
                        epsilon=re.epsilon, **config)
    pair = lambdas_from_qp_tau(qp_base, tau, re, cfg.tau_exponent)
    trajectory = []
    for it in range(1, max_iterations + 1):
        res = encode_sequence(frames, cfg, energies, lambdas=pair)
        qp_star = histogram_peak(res.qp_histogram, qp_base)
        trajectory.append((pair.lambda_r, pair.lambda_e, qp_star))
        if qp_star == qp_base - delta_qp:
            next_pair = pair.scaled(2.0)
        elif qp_star == qp_base + delta_qp:
            next_pair = pair.scaled(0.5)
        else:
            return MultiQPResult(res, QPTriple(pair.lambda_r, pair.lambda_e, qp_star),
                                 res.qp_histogram, True, it, trajectory)
        if it < max_iterations:
            pair = next_pair
    return MultiQPResult(res, QPTriple(pair.lambda_r, pair.lambda_e, qp_star),
                         res.qp_histogram, False, max_iterations, trajectory)


def single_qp_optimize(frames: Sequence[Frame], qp_base: int, tau: float, re: RhoEpsilon,
                       energies: SpecificEnergies, **config) -> EncodeResult:
    """One encode at a fixed QP with multipliers from the fitted (rho, epsilon)."""
    cfg = EncoderConfig(qp_base=qp_base, delta_qp_range=0, tau=tau, rho=re.rho,
                        epsilon=re.epsilon, **config)
    return encode_sequence(frames, cfg, energies)


def rdo_encode(frames: Sequence[Frame], qp_base: int, re: RhoEpsilon,
               energies: SpecificEnergies, **config) -> EncodeResult:
    """Plain rate-distortion optimized encode: lambda_r = q^2/rho, no energy term."""
    cfg = EncoderConfig(qp_base=qp_base, delta_qp_range=0, tau=0.0, rho=re.rho,
                        epsilon=re.epsilon, **config)
    pair = LagrangePair(qp_to_qstep(qp_base) ** 2 / re.rho, 0.0)
    return encode_sequence(frames, cfg, energies, lambdas=pair)
