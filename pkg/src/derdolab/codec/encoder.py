"""Sequence encoder: mode search with DERD costs and bitstream emission."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..derdo.lagrange import (
    DEFAULT_EPSILON,
    DEFAULT_RHO,
    QP_MAX,
    QP_MIN,
    ROUGH_COMPENSATION,
    TAU_EXPONENT,
    LagrangePair,
    RhoEpsilon,
    lambdas_from_qp_tau,
    qp_to_qstep,
)
from ..energy_model import FeatureCounts, SpecificEnergies, estimate_energy_bf
from ..features import F_FRAME_INTER, F_FRAME_INTRA, F_OFFSET, MAX_DEPTH, MODE_DC, MODE_INTER, MODE_SKIP, N_FEATURES
from ..frame_io import CTU_SIZE, Frame, QualityReport, sequence_psnr
from . import kernels as K
from .bitstream import Bitstream, BitWriter, StreamHeader

MAX_SEARCH_RANGE = 32


@dataclass(frozen=True)
class EncoderConfig:
    qp_base: int = 32
    delta_qp_range: int = 0
    tau: float = 0.0
    intra_period: int = 32
    motion_search_range: int = 8
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    tau_exponent: float = TAU_EXPONENT
    rough_compensation: float = ROUGH_COMPENSATION
    intra_preselect: int = 3
    ctu_size: int = CTU_SIZE
    max_split_depth: int = MAX_DEPTH

    def __post_init__(self):
        if self.ctu_size != CTU_SIZE or self.max_split_depth != MAX_DEPTH:
            raise ValueError(f"only {CTU_SIZE}x{CTU_SIZE} CTUs with split depth {MAX_DEPTH} are supported")
        if int(self.qp_base) != self.qp_base or int(self.delta_qp_range) != self.delta_qp_range:
            raise ValueError("qp_base and delta_qp_range must be integers")
        if self.delta_qp_range < 0:
            raise ValueError("delta_qp_range must be non-negative")
        if self.qp_base - self.delta_qp_range < QP_MIN or self.qp_base + self.delta_qp_range > QP_MAX:
            raise ValueError(
                f"QP range {self.qp_base}+-{self.delta_qp_range} leaves [{QP_MIN}, {QP_MAX}]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 1 <= self.intra_period <= 255:
            raise ValueError("intra_period must be in [1, 255]")
        if not 1 <= self.motion_search_range <= MAX_SEARCH_RANGE:
            raise ValueError(f"motion_search_range must be in [1, {MAX_SEARCH_RANGE}]")
        if not 1 <= self.intra_preselect <= 3:
            raise ValueError("intra_preselect must be 1, 2 or 3")
        if self.rough_compensation < 0:
            raise ValueError("rough_compensation must be non-negative")
        RhoEpsilon(self.rho, self.epsilon)

    @property
    def rho_epsilon(self) -> RhoEpsilon:
        return RhoEpsilon(self.rho, self.epsilon)

    def lambdas(self) -> LagrangePair:
        return lambdas_from_qp_tau(self.qp_base, self.tau, self.rho_epsilon, self.tau_exponent)

    def qp_order(self) -> list[int]:
        """CTU QPs in preference order: base first, then lower before higher."""
        order = [self.qp_base]
        for d in range(1, self.delta_qp_range + 1):
            order += [self.qp_base - d, self.qp_base + d]
        return order


@dataclass(frozen=True)
class ModeCandidate:
    """One evaluated coding option of a leaf block."""

    mode: int
    mv: tuple[int, int] = (0, 0)
    distortion: float = 0.0
    bits: int = 0
    block_energy: float = 0.0
    cost: float = math.nan


@dataclass(frozen=True)
class FrameStats:
    index: int
    intra: bool
    bits: int
    ssd: int
    estimated_energy: float
    mean_qp: float


@dataclass(frozen=True, eq=False)
class EncodeResult:
    bitstream: Bitstream
    reconstruction: list[Frame]
    frame_stats: list[FrameStats]
    features: FeatureCounts
    qp_histogram: dict[int, int]
    lambdas: LagrangePair
    config: EncoderConfig
    quality: QualityReport
    estimated_energy: float
    leaves: list[np.ndarray] = field(repr=False)
    ctu_qps: list[np.ndarray] = field(repr=False)

    @property
    def rate_bytes(self) -> int:
        return self.bitstream.size_bytes

    def to_bytes(self) -> bytes:
        return self.bitstream.to_bytes()


def cost_params(pair: LagrangePair, rough_compensation: float, kappa: float | None = None) -> np.ndarray:
    p = np.zeros(K.N_PARAMS)
    p[K.P_LAMBDA_R] = pair.lambda_r
    p[K.P_LAMBDA_E] = pair.lambda_e
    p[K.P_SQRT_LR] = math.sqrt(pair.lambda_r)
    p[K.P_SQRT_LE] = math.sqrt(pair.lambda_e)
    p[K.P_ROUGH] = rough_compensation
    p[K.P_KAPPA] = -1.0 if kappa is None else kappa
    return p


def _write_block(writer: BitWriter, block: np.ndarray, order: np.ndarray) -> None:
    flat = block.ravel()[order]
    nz = np.flatnonzero(flat)
    writer.write_ue(len(nz))
    prev = -1
    for p in nz:
        writer.write_ue(int(p) - prev - 1)
        writer.write_se(int(flat[p]))
        prev = int(p)


def _write_ctu(writer, x0, y0, leaves, lev, intra, orders):
    by_pos = {(int(r[K.LEAF_X]), int(r[K.LEAF_Y])): r for r in leaves}

    def node(x, y, depth):
        leaf = by_pos.get((x, y))
        is_leaf = leaf is not None and leaf[K.LEAF_DEPTH] == depth
        if depth < MAX_DEPTH:
            writer.write_bit(0 if is_leaf else 1)
            if not is_leaf:
                half = CTU_SIZE >> (depth + 1)
                for k in range(4):
                    node(x + (k & 1) * half, y + (k >> 1) * half, depth + 1)
                return
        mode = int(leaf[K.LEAF_MODE])
        writer.write_ue(mode - MODE_DC if intra else mode)
        if mode == MODE_INTER:
            writer.write_se(int(leaf[K.LEAF_MVX]))
            writer.write_se(int(leaf[K.LEAF_MVY]))
        if mode != MODE_SKIP:
            cbf = int(leaf[K.LEAF_CBF])
            writer.write_bit(cbf)
            if cbf:
                n = CTU_SIZE >> depth
                _write_block(writer, lev[0][y:y + n, x:x + n], orders[n])
                if depth < MAX_DEPTH:
                    m = n >> 1
                    cx, cy = x >> 1, y >> 1
                    _write_block(writer, lev[1][cy:cy + m, cx:cx + m], orders[m])
                    _write_block(writer, lev[2][cy:cy + m, cx:cx + m], orders[m])

    node(x0, y0, 0)


def _check_frames(frames: Sequence[Frame]) -> None:
    if not frames:
        raise ValueError("no frames to encode")
    if len(frames) > 0xFFFF:
        raise ValueError("too many frames for the stream header")
    f0 = frames[0]
    for f in frames:
        if f.y.shape != f0.y.shape or (f.display_width, f.display_height) != (f0.display_width, f0.display_height):
            raise ValueError("frame dimension mismatch within the sequence")
    if f0.display_width > 0xFFFF or f0.display_height > 0xFFFF:
        raise ValueError("frame too large for the stream header")


def encode_sequence(frames: Sequence[Frame], config: EncoderConfig, energies: SpecificEnergies,
                    lambdas: LagrangePair | None = None, energy_kappa: float | None = None) -> EncodeResult:
    """Encode ``frames``, choosing every mode by the precise DERD cost.

    ``lambdas`` overrides the multipliers derived from (qp_base, tau).
    ``energy_kappa`` replaces the feature model by E = kappa * bits for
    every coding decision (leaf, split flag and QP delta); it exists to
    check that DERD decisions then coincide with plain RDO.
    """
    _check_frames(frames)
    if not isinstance(energies, SpecificEnergies):
        raise TypeError("energies must be SpecificEnergies")
    if energy_kappa is not None and energy_kappa < 0:
        raise ValueError("energy_kappa must be non-negative")
    pair = lambdas if lambdas is not None else config.lambdas()
    params = cost_params(pair, config.rough_compensation, energy_kappa)
    e_vec = np.ascontiguousarray(energies.values, dtype=np.float64)
    qp_order = np.array(config.qp_order(), dtype=np.int64)
    qsteps = np.array([qp_to_qstep(int(q)) for q in qp_order])
    delta_enabled = config.delta_qp_range > 0

    f0 = frames[0]
    H, W = f0.y.shape
    nx, ny = W // CTU_SIZE, H // CTU_SIZE
    nctu = nx * ny
    header = StreamHeader(f0.display_width, f0.display_height, len(frames), CTU_SIZE,
                          config.qp_base, config.intra_period, delta_enabled)
    writer = BitWriter()
    orders = {n: K.ZIGZAG_BANK[K.size_index(n), : n * n] for n in (4, 8, 16)}

    feats = np.zeros(N_FEATURES, dtype=np.int64)
    feats[F_OFFSET] = 1
    hist: dict[int, int] = {}
    recon: list[Frame] = []
    stats: list[FrameStats] = []
    all_leaves: list[np.ndarray] = []
    all_qps: list[np.ndarray] = []
    prev = None
    mv_shapes = [(H // 16, W // 16, 2), (H // 8, W // 8, 2), (H // 4, W // 4, 2)]
    for i, frame in enumerate(frames):
        intra = i % config.intra_period == 0
        org = frame.planes
        rec = (np.zeros((H, W), np.uint8), np.zeros((H // 2, W // 2), np.uint8),
               np.zeros((H // 2, W // 2), np.uint8))
        mvf = tuple(np.zeros(s, np.int64) for s in mv_shapes)
        if intra:
            ref = rec
        else:
            ref = prev
            K.motion_search(org[0], ref[0], config.motion_search_range, e_vec, params, *mvf)
        out_qp = np.zeros(nctu, np.int64)
        out_leaves = np.zeros((nctu, K.MAX_LEAVES, K.LEAF_FIELDS), np.int64)
        out_nleaf = np.zeros(nctu, np.int64)
        lev = (np.zeros((H, W), np.int64), np.zeros((H // 2, W // 2), np.int64),
               np.zeros((H // 2, W // 2), np.int64))
        out_bits = np.zeros(nctu, np.int64)
        out_cost = np.zeros(nctu)
        out_ssd = np.zeros(nctu, np.int64)
        out_energy = np.zeros(nctu)
        K.encode_frame(intra, qp_order, qsteps, config.qp_base, delta_enabled, org, rec, ref, mvf,
                       e_vec, params, K.DCT_BANK, K.ZIGZAG_BANK, config.intra_preselect,
                       out_qp, out_leaves, out_nleaf, lev[0], lev[1], lev[2],
                       out_bits, out_cost, out_ssd, out_energy)

        start = writer.bit_count
        writer.write_bit(1 if intra else 0)
        for t in range(nctu):
            before = writer.bit_count
            leaves_t = out_leaves[t, : out_nleaf[t]]
            if delta_enabled:
                writer.write_se(int(out_qp[t]) - config.qp_base)
            _write_ctu(writer, (t % nx) * CTU_SIZE, (t // nx) * CTU_SIZE, leaves_t, lev, intra, orders)
            if writer.bit_count - before != out_bits[t]:
                raise RuntimeError(f"bit accounting mismatch in frame {i}, CTU {t}")
            if np.any(leaves_t[:, K.LEAF_CBF]):
                q = int(out_qp[t])
                hist[q] = hist.get(q, 0) + 1
        writer.align()

        mask = np.arange(K.MAX_LEAVES)[None, :] < out_nleaf[:, None]
        frame_leaves = out_leaves[mask]
        K.tally_leaves(frame_leaves, len(frame_leaves), lev[0], lev[1], lev[2], feats)
        feats[F_FRAME_INTRA if intra else F_FRAME_INTER] += 1

        frame_energy = float(np.sum(out_energy))
        if energy_kappa is None:
            frame_energy += float(e_vec[F_FRAME_INTRA if intra else F_FRAME_INTER])
        stats.append(FrameStats(i, intra, writer.bit_count - start, int(np.sum(out_ssd)),
                                frame_energy, float(np.mean(out_qp))))
        all_leaves.append(frame_leaves)
        all_qps.append(out_qp.reshape(ny, nx))
        recon.append(Frame(rec[0].copy(), rec[1].copy(), rec[2].copy(),
                           f0.display_width, f0.display_height))
        prev = rec

    bitstream = Bitstream(header, writer.getvalue())
    counts = FeatureCounts(feats)
    return EncodeResult(
        bitstream=bitstream,
        reconstruction=recon,
        frame_stats=stats,
        features=counts,
        qp_histogram=dict(sorted(hist.items())),
        lambdas=pair,
        config=config,
        quality=sequence_psnr(frames, recon),
        estimated_energy=estimate_energy_bf(counts, energies),
        leaves=all_leaves,
        ctu_qps=all_qps,
    )
