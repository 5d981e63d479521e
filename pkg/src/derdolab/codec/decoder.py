"""Standalone decoder; tallies bit-stream features while it decodes."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..energy_model import FeatureCounts
from ..features import (
    F_COEFFS,
    F_FRACPEL,
    F_FRAME_INTER,
    F_FRAME_INTRA,
    F_OFFSET,
    F_TRANS,
    F_VAL,
    MAX_DEPTH,
    MODE_DC,
    MODE_INTER,
    MODE_SKIP,
    MODE_V,
    N_FEATURES,
    block_feature,
)
from ..frame_io import CTU_SIZE, Frame
from ..derdo.lagrange import QP_MAX, QP_MIN, qp_to_qstep
from . import kernels as K
from .bitstream import Bitstream, BitReader, DecodeError

MAX_MV = 1024  # half-pel units


@dataclass(frozen=True, eq=False)
class DecodeResult:
    frames: list[Frame]
    features: FeatureCounts
    leaves: list[np.ndarray] = field(repr=False)
    ctu_qps: list[np.ndarray] = field(repr=False)


class _FrameDecoder:
    def __init__(self, reader: BitReader, feats: list, intra: bool, rec, ref):
        self.r = reader
        self.feats = feats
        self.intra = intra
        self.rec = rec
        self.ref = ref
        self.leaves: list[tuple] = []
        self.orders = {n: K.ZIGZAG_BANK[K.size_index(n), : n * n] for n in (4, 8, 16)}
        self.dummy = np.zeros((16, 16), np.int64)

    def block(self, n: int) -> np.ndarray:
        r = self.r
        size = n * n
        nnz = r.read_ue()
        if nnz == 0 or nnz > size:
            if nnz > size:
                raise DecodeError(f"{nnz} nonzero levels in a {n}x{n} block")
            return np.zeros((n, n), np.int64)
        out = np.zeros(size, np.int64)
        order = self.orders[n]
        pos = -1
        nval = 0
        for _ in range(nnz):
            pos += r.read_ue() + 1
            if pos >= size:
                raise DecodeError("coefficient position beyond the block")
            lv = r.read_se()
            if lv == 0:
                raise DecodeError("zero level coded as nonzero")
            out[order[pos]] = lv
            nval += abs(lv).bit_length()
        self.feats[F_COEFFS] += nnz
        self.feats[F_VAL] += nval
        return out.reshape(n, n)

    def leaf(self, x: int, y: int, depth: int, qstep: float):
        r = self.r
        code = r.read_ue()
        mode = code + MODE_DC if self.intra else code
        if mode > MODE_V:
            raise DecodeError(f"mode code {code} out of range")
        mvx = mvy = 0
        if mode == MODE_INTER:
            mvx = r.read_se()
            mvy = r.read_se()
            if abs(mvx) > MAX_MV or abs(mvy) > MAX_MV:
                raise DecodeError(f"motion vector ({mvx}, {mvy}) out of range")
            if (mvx & 1) or (mvy & 1):
                self.feats[F_FRACPEL] += 1
        cbf = 0
        ly = lu = lv = self.dummy
        if mode != MODE_SKIP:
            cbf = r.read_bit()
            if cbf:
                n = CTU_SIZE >> depth
                ly = self.block(n)
                if depth < MAX_DEPTH:
                    lu = self.block(n >> 1)
                    lv = self.block(n >> 1)
                self.feats[F_TRANS + depth] += 1
        self.feats[block_feature(mode, depth)] += 1
        K.decode_leaf(self.rec, self.ref, x, y, depth, mode, mvx, mvy, cbf, ly, lu, lv, qstep, K.DCT_BANK)
        self.leaves.append((x, y, depth, mode, mvx, mvy, cbf))

    def node(self, x: int, y: int, depth: int, qstep: float):
        if depth < MAX_DEPTH and self.r.read_bit():
            half = CTU_SIZE >> (depth + 1)
            for k in range(4):
                self.node(x + (k & 1) * half, y + (k >> 1) * half, depth + 1, qstep)
        else:
            self.leaf(x, y, depth, qstep)


def decode_sequence(bitstream: Bitstream | bytes) -> DecodeResult:
    """Decode a bitstream into frames and the feature counts of the decode."""
    if not isinstance(bitstream, Bitstream):
        bitstream = Bitstream.from_bytes(bytes(bitstream))
    hdr = bitstream.header
    W = (hdr.width + CTU_SIZE - 1) // CTU_SIZE * CTU_SIZE
    H = (hdr.height + CTU_SIZE - 1) // CTU_SIZE * CTU_SIZE
    nx, ny = W // CTU_SIZE, H // CTU_SIZE
    if hdr.width % 2 or hdr.height % 2:
        raise DecodeError("odd frame dimensions in header")
    reader = BitReader(bitstream.payload)
    feats = [0] * N_FEATURES
    feats[F_OFFSET] = 1
    frames: list[Frame] = []
    leaves: list[np.ndarray] = []
    qps: list[np.ndarray] = []
    prev = None
    for i in range(hdr.frame_count):
        intra = bool(reader.read_bit())
        if not intra and prev is None:
            raise DecodeError(f"frame {i} is inter-coded but has no reference")
        feats[F_FRAME_INTRA if intra else F_FRAME_INTER] += 1
        rec = (np.zeros((H, W), np.uint8), np.zeros((H // 2, W // 2), np.uint8),
               np.zeros((H // 2, W // 2), np.uint8))
        fd = _FrameDecoder(reader, feats, intra, rec, rec if intra else prev)
        ctu_qp = np.empty(nx * ny, np.int64)
        for t in range(nx * ny):
            qp = hdr.qp_base + (reader.read_se() if hdr.delta_qp_enabled else 0)
            if not QP_MIN <= qp <= QP_MAX:
                raise DecodeError(f"CTU QP {qp} out of range")
            ctu_qp[t] = qp
            fd.node((t % nx) * CTU_SIZE, (t // nx) * CTU_SIZE, 0, qp_to_qstep(qp))
        reader.align()
        frames.append(Frame(rec[0].copy(), rec[1].copy(), rec[2].copy(), hdr.width, hdr.height))
        leaves.append(np.array(fd.leaves, dtype=np.int64).reshape(-1, K.LEAF_FIELDS))
        qps.append(ctu_qp.reshape(ny, nx))
        prev = rec
    if reader.remaining:
        raise DecodeError(f"{reader.remaining // 8} trailing bytes after the last frame")
    return DecodeResult(frames, FeatureCounts(np.array(feats, dtype=np.int64)), leaves, qps)


def time_decode(bitstream: Bitstream | bytes, runs: int = 5) -> tuple[FeatureCounts, list[float]]:
    """Decode ``runs`` times; returns the feature counts and per-run CPU seconds.

    This is the timing harness behind energy calibration. Runs are strictly
    sequential on the calling thread.
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    if not isinstance(bitstream, Bitstream):
        bitstream = Bitstream.from_bytes(bytes(bitstream))
    decode_sequence(bitstream)  # warm-up (compilation, caches)
    times = []
    counts = None
    for _ in range(runs):
        t0 = time.process_time()
        res = decode_sequence(bitstream)
        times.append(time.process_time() - t0)
        counts = res.features
    return counts, times
