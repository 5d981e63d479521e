"""Compiled inner loops shared by the encoder and the decoder.

Reconstruction (prediction, dequantization, inverse transform) is done by
the same functions on both sides, with explicit loops rather than BLAS, so
that the decoder reproduces the encoder's reference frames bit for bit.

Leaf records are int64 rows ``(x, y, depth, mode, mvx, mvy, cbf)`` in
luma sample coordinates; motion vectors are in half-pel units.
"""

import math

import numpy as np
from numba import njit

from ..features import (
    F_COEFFS,
    F_FRACPEL,
    F_INTER_BLK,
    F_INTRA_BLK,
    F_SKIP_BLK,
    F_TRANS,
    F_VAL,
    MODE_DC,
    MODE_H,
    MODE_INTER,
    MODE_SKIP,
)

# cost parameter vector layout
P_LAMBDA_R = 0
P_LAMBDA_E = 1
P_SQRT_LR = 2
P_SQRT_LE = 3
P_ROUGH = 4
P_KAPPA = 5  # >= 0: block energy = kappa * bits; < 0: feature model
N_PARAMS = 6

LEAF_X = 0
LEAF_Y = 1
LEAF_DEPTH = 2
LEAF_MODE = 3
LEAF_MVX = 4
LEAF_MVY = 5
LEAF_CBF = 6
LEAF_FIELDS = 7
MAX_LEAVES = 16

INTER_MODE_BITS = 3  # ue(MODE_INTER)


def dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    return c


def zigzag_order(n: int) -> np.ndarray:
    """Flat (row-major) indices of an n x n block in zig-zag order.

    The scan steps down first, (0, 0) -> (1, 0) -> (0, 1), which is the
    transpose of the JPEG scan.
    """
    cells = sorted(
        ((r, c) for r in range(n) for c in range(n)),
        key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 else rc[0]),
    )
    return np.array([r * n + c for r, c in cells], dtype=np.int64)


def _banks():
    mats = np.zeros((3, 16, 16))
    zz = np.zeros((3, 256), dtype=np.int64)
    for idx, n in enumerate((4, 8, 16)):
        mats[idx, :n, :n] = dct_matrix(n)
        zz[idx, : n * n] = zigzag_order(n)
    return mats, zz


DCT_BANK, ZIGZAG_BANK = _banks()


def size_index(n: int) -> int:
    return n >> 3  # 4 -> 0, 8 -> 1, 16 -> 2


@njit(cache=True)
def bit_length(v):
    n = 0
    while v > 0:
        v >>= 1
        n += 1
    return n


@njit(cache=True)
def ue_bits(u):
    return 2 * bit_length(u + 1) - 1


@njit(cache=True)
def se_bits(v):
    if v > 0:
        return ue_bits(2 * v - 1)
    return ue_bits(-2 * v)


@njit(cache=True)
def mode_bits(mode, intra_frame):
    if intra_frame:
        return ue_bits(mode - MODE_DC)
    return ue_bits(mode)


@njit(cache=True)
def block_feature_id(mode, depth):
    if mode == MODE_SKIP:
        return F_SKIP_BLK + depth
    if mode == MODE_INTER:
        return F_INTER_BLK + depth
    return F_INTRA_BLK + depth


@njit(cache=True)
def forward_dct(block, n, mats, out):
    c = mats[n >> 3]
    tmp = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += c[i, k] * block[k, j]
            tmp[i, j] = s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += tmp[i, k] * c[j, k]
            out[i, j] = s


@njit(cache=True)
def inverse_dct(coef, n, mats, out):
    c = mats[n >> 3]
    tmp = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += c[k, i] * coef[k, j]
            tmp[i, j] = s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += tmp[i, k] * c[k, j]
            out[i, j] = s


@njit(cache=True)
def quantize(coef, n, qstep, levels):
    """Mid-tread, round half away from zero. Returns the nonzero count."""
    nnz = 0
    for i in range(n):
        for j in range(n):
            c = coef[i, j]
            lv = int(math.floor(abs(c) / qstep + 0.5))
            if c < 0:
                lv = -lv
            levels[i, j] = lv
            if lv != 0:
                nnz += 1
    return nnz


@njit(cache=True)
def coeff_syntax(levels, n, zz):
    """Exact bit count of one transform block's coefficient syntax.

    Returns (bits, nonzero count, summed bit lengths of |level|).
    """
    order = zz[n >> 3]
    nnz = 0
    nval = 0
    body = 0
    prev = -1
    for p in range(n * n):
        idx = order[p]
        lv = levels[idx // n, idx % n]
        if lv != 0:
            body += ue_bits(p - prev - 1) + se_bits(lv)
            prev = p
            nnz += 1
            nval += bit_length(abs(lv))
    return ue_bits(nnz) + body, nnz, nval


@njit(cache=True)
def reconstruct(pred, levels, n, qstep, mats, out):
    deq = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            deq[i, j] = levels[i, j] * qstep
    res = np.empty((n, n))
    inverse_dct(deq, n, mats, res)
    for i in range(n):
        for j in range(n):
            v = pred[i, j] + int(math.floor(res[i, j] + 0.5))
            if v < 0:
                v = 0
            elif v > 255:
                v = 255
            out[i, j] = v


@njit(cache=True)
def intra_predict(plane, x, y, n, mode, out):
    top = y > 0
    left = x > 0
    if mode == MODE_DC:
        s = 0
        cnt = 0
        if top:
            for i in range(n):
                s += np.int64(plane[y - 1, x + i])
            cnt += n
        if left:
            for j in range(n):
                s += np.int64(plane[y + j, x - 1])
            cnt += n
        dc = (s + cnt // 2) // cnt if cnt > 0 else 128
        for j in range(n):
            for i in range(n):
                out[j, i] = dc
    elif mode == MODE_H:
        for j in range(n):
            v = np.int64(plane[y + j, x - 1]) if left else 128
            for i in range(n):
                out[j, i] = v
    else:
        for i in range(n):
            v = np.int64(plane[y - 1, x + i]) if top else 128
            for j in range(n):
                out[j, i] = v


@njit(cache=True)
def inter_predict(ref, x, y, n, mvx, mvy, out):
    """Half-pel motion compensation with edge clamping.

    Half positions average 2 (or 4 on the diagonal) neighbours, rounding
    half up.
    """
    h, w = ref.shape
    ix = mvx >> 1
    iy = mvy >> 1
    fx = mvx & 1
    fy = mvy & 1
    for j in range(n):
        y0 = min(max(y + j + iy, 0), h - 1)
        y1 = min(max(y + j + iy + 1, 0), h - 1)
        for i in range(n):
            x0 = min(max(x + i + ix, 0), w - 1)
            x1 = min(max(x + i + ix + 1, 0), w - 1)
            a = np.int64(ref[y0, x0])
            if fx and fy:
                out[j, i] = (a + np.int64(ref[y0, x1]) + np.int64(ref[y1, x0]) + np.int64(ref[y1, x1]) + 2) >> 2
            elif fx:
                out[j, i] = (a + np.int64(ref[y0, x1]) + 1) >> 1
            elif fy:
                out[j, i] = (a + np.int64(ref[y1, x0]) + 1) >> 1
            else:
                out[j, i] = a


@njit(cache=True)
def predict_leaf(rec, ref, x, y, n, mode, mvx, mvy, pred_y, pred_u, pred_v):
    m = n >> 1
    cx = x >> 1
    cy = y >> 1
    if mode == MODE_SKIP:
        inter_predict(ref[0], x, y, n, 0, 0, pred_y)
        inter_predict(ref[1], cx, cy, m, 0, 0, pred_u)
        inter_predict(ref[2], cx, cy, m, 0, 0, pred_v)
    elif mode == MODE_INTER:
        inter_predict(ref[0], x, y, n, mvx, mvy, pred_y)
        inter_predict(ref[1], cx, cy, m, mvx >> 1, mvy >> 1, pred_u)
        inter_predict(ref[2], cx, cy, m, mvx >> 1, mvy >> 1, pred_v)
    else:
        intra_predict(rec[0], x, y, n, mode, pred_y)
        intra_predict(rec[1], cx, cy, m, mode, pred_u)
        intra_predict(rec[2], cx, cy, m, mode, pred_v)


@njit(cache=True)
def decode_leaf(rec, ref, x, y, depth, mode, mvx, mvy, cbf, lev_y, lev_u, lev_v, qstep, mats):
    """Decoder-side reconstruction of one leaf straight into ``rec``."""
    n = 16 >> depth
    m = n >> 1
    pred_y = np.empty((n, n), np.int32)
    pred_u = np.empty((m, m), np.int32)
    pred_v = np.empty((m, m), np.int32)
    predict_leaf(rec, ref, x, y, n, mode, mvx, mvy, pred_y, pred_u, pred_v)
    if cbf:
        reconstruct(pred_y, lev_y, n, qstep, mats, pred_y)
        if m >= 4:
            reconstruct(pred_u, lev_u, m, qstep, mats, pred_u)
            reconstruct(pred_v, lev_v, m, qstep, mats, pred_v)
    _put(rec[0], x, y, pred_y, n)
    _put(rec[1], x >> 1, y >> 1, pred_u, m)
    _put(rec[2], x >> 1, y >> 1, pred_v, m)


@njit(cache=True)
def _put(plane, x, y, blk, n):
    for j in range(n):
        for i in range(n):
            plane[y + j, x + i] = blk[j, i]


@njit(cache=True)
def _put_levels(dst, x, y, blk, n):
    for j in range(n):
        for i in range(n):
            dst[y + j, x + i] = blk[j, i]


@njit(cache=True)
def _zero_levels(dst, x, y, n):
    for j in range(n):
        for i in range(n):
            dst[y + j, x + i] = 0


@njit(cache=True)
def _ssd(org, x, y, blk, n):
    s = 0
    for j in range(n):
        for i in range(n):
            d = np.int64(org[y + j, x + i]) - np.int64(blk[j, i])
            s += d * d
    return s


@njit(cache=True)
def _sad(org, x, y, blk, n):
    s = 0
    for j in range(n):
        for i in range(n):
            s += abs(np.int64(org[y + j, x + i]) - np.int64(blk[j, i]))
    return s


@njit(cache=True)
def _residual_levels(org, x, y, pred, n, qstep, mats, levels):
    res = np.empty((n, n))
    for j in range(n):
        for i in range(n):
            res[j, i] = np.int64(org[y + j, x + i]) - np.int64(pred[j, i])
    coef = np.empty((n, n))
    forward_dct(res, n, mats, coef)
    return quantize(coef, n, qstep, levels)


@njit(cache=True)
def leaf_energy(energies, params, mode, depth, cbf, nnz, nval, frac, bits):
    kappa = params[P_KAPPA]
    if kappa >= 0.0:
        return kappa * bits
    e = energies[block_feature_id(mode, depth)]
    if cbf:
        e += energies[F_TRANS + depth] + nnz * energies[F_COEFFS] + nval * energies[F_VAL]
    e += frac * energies[F_FRACPEL]
    return e


@njit(cache=True)
def overhead_cost(params, nbits):
    """(cost, energy) of syntax bits outside any leaf (split flags, QP deltas)."""
    kappa = params[P_KAPPA]
    e = kappa * nbits if kappa >= 0.0 else 0.0
    return params[P_LAMBDA_R] * nbits + params[P_LAMBDA_E] * e, e


@njit(cache=True)
def rough_cost(sad, bits, energy, params):
    return sad + params[P_SQRT_LR] * bits + params[P_ROUGH] * params[P_SQRT_LE] * energy


@njit(cache=True)
def _copy_block(src, dst, n):
    for j in range(n):
        for i in range(n):
            dst[j, i] = src[j, i]


@njit(cache=True)
def _clear(dst, n):
    for j in range(n):
        for i in range(n):
            dst[j, i] = 0


@njit(cache=True)
def eval_leaf(depth, x, y, qstep, intra_frame, org, rec, ref, mvf, energies, params,
              mats, zz, preselect, best_y, best_u, best_v, blev_y, blev_u, blev_v):
    """Evaluate every legal candidate of one leaf; keep the cheapest.

    Candidates are visited in mode-id order (SKIP, INTER, DC, H, V) and,
    for non-SKIP modes, with the quantized residual first and with the
    residual dropped second; a later candidate must be strictly cheaper.
    Returns (cost, bits, ssd, energy, mode, mvx, mvy, cbf).
    """
    n = 16 >> depth
    m = n >> 1
    cx = x >> 1
    cy = y >> 1
    chroma_residual = m >= 4
    lr = params[P_LAMBDA_R]
    le = params[P_LAMBDA_E]

    pred_y = np.empty((n, n), np.int32)
    pred_u = np.empty((m, m), np.int32)
    pred_v = np.empty((m, m), np.int32)
    rec_y = np.empty((n, n), np.int32)
    rec_u = np.empty((m, m), np.int32)
    rec_v = np.empty((m, m), np.int32)
    lev_y = np.zeros((n, n), np.int64)
    lev_u = np.zeros((m, m), np.int64)
    lev_v = np.zeros((m, m), np.int64)

    # rough preselection of intra modes (SAD on luma prediction)
    rough = np.empty(3)
    for k in range(3):
        mode = MODE_DC + k
        intra_predict(rec[0], x, y, n, mode, pred_y)
        bits = mode_bits(mode, intra_frame)
        e = leaf_energy(energies, params, mode, depth, False, 0, 0, 0, bits)
        rough[k] = rough_cost(_sad(org[0], x, y, pred_y, n), bits, e, params)
    chosen = np.zeros(3, np.bool_)
    for _ in range(min(preselect, 3)):
        bk = -1
        for k in range(3):
            if not chosen[k] and (bk < 0 or rough[k] < rough[bk]):
                bk = k
        chosen[bk] = True

    modes = np.empty(5, np.int64)
    ncand = 0
    if not intra_frame:
        modes[0] = MODE_SKIP
        modes[1] = MODE_INTER
        ncand = 2
    for k in range(3):
        if chosen[k]:
            modes[ncand] = MODE_DC + k
            ncand += 1

    best_cost = np.inf
    best_bits = 0
    best_ssd = 0
    best_e = 0.0
    best_mode = -1
    best_mvx = 0
    best_mvy = 0
    best_cbf = 0

    for c in range(ncand):
        mode = modes[c]
        mvx = 0
        mvy = 0
        if mode == MODE_INTER:
            mvx = mvf[depth][y // n, x // n, 0]
            mvy = mvf[depth][y // n, x // n, 1]
        predict_leaf(rec, ref, x, y, n, mode, mvx, mvy, pred_y, pred_u, pred_v)
        frac = 1 if mode == MODE_INTER and ((mvx & 1) or (mvy & 1)) else 0
        head = mode_bits(mode, intra_frame)
        if mode == MODE_INTER:
            head += se_bits(mvx) + se_bits(mvy)
        d_pred = _ssd(org[0], x, y, pred_y, n) + _ssd(org[1], cx, cy, pred_u, m) \
            + _ssd(org[2], cx, cy, pred_v, m)

        if mode != MODE_SKIP:
            head += 1  # coded-block flag
            nnz = _residual_levels(org[0], x, y, pred_y, n, qstep, mats, lev_y)
            if chroma_residual:
                nnz += _residual_levels(org[1], cx, cy, pred_u, m, qstep, mats, lev_u)
                nnz += _residual_levels(org[2], cx, cy, pred_v, m, qstep, mats, lev_v)
            if nnz > 0:
                bits = head
                nval = 0
                b, _, v = coeff_syntax(lev_y, n, zz)
                bits += b
                nval += v
                reconstruct(pred_y, lev_y, n, qstep, mats, rec_y)
                if chroma_residual:
                    b, _, v = coeff_syntax(lev_u, m, zz)
                    bits += b
                    nval += v
                    b, _, v = coeff_syntax(lev_v, m, zz)
                    bits += b
                    nval += v
                    reconstruct(pred_u, lev_u, m, qstep, mats, rec_u)
                    reconstruct(pred_v, lev_v, m, qstep, mats, rec_v)
                else:
                    _copy_block(pred_u, rec_u, m)
                    _copy_block(pred_v, rec_v, m)
                d = _ssd(org[0], x, y, rec_y, n) + _ssd(org[1], cx, cy, rec_u, m) \
                    + _ssd(org[2], cx, cy, rec_v, m)
                e = leaf_energy(energies, params, mode, depth, True, nnz, nval, frac, bits)
                cost = d + lr * bits + le * e
                if cost < best_cost:
                    best_cost = cost
                    best_bits = bits
                    best_ssd = d
                    best_e = e
                    best_mode = mode
                    best_mvx = mvx
                    best_mvy = mvy
                    best_cbf = 1
                    _copy_block(rec_y, best_y, n)
                    _copy_block(rec_u, best_u, m)
                    _copy_block(rec_v, best_v, m)
                    _copy_block(lev_y, blev_y, n)
                    if chroma_residual:
                        _copy_block(lev_u, blev_u, m)
                        _copy_block(lev_v, blev_v, m)
                    else:
                        _clear(blev_u, m)
                        _clear(blev_v, m)

        bits = head
        e = leaf_energy(energies, params, mode, depth, False, 0, 0, frac, bits)
        cost = d_pred + lr * bits + le * e
        if cost < best_cost:
            best_cost = cost
            best_bits = bits
            best_ssd = d_pred
            best_e = e
            best_mode = mode
            best_mvx = mvx
            best_mvy = mvy
            best_cbf = 0
            _copy_block(pred_y, best_y, n)
            _copy_block(pred_u, best_u, m)
            _copy_block(pred_v, best_v, m)
            _clear(blev_y, n)
            _clear(blev_u, m)
            _clear(blev_v, m)

    return best_cost, best_bits, best_ssd, best_e, best_mode, best_mvx, best_mvy, best_cbf


@njit(cache=True)
def _set_leaf(leaves, i, x, y, depth, mode, mvx, mvy, cbf):
    leaves[i, LEAF_X] = x
    leaves[i, LEAF_Y] = y
    leaves[i, LEAF_DEPTH] = depth
    leaves[i, LEAF_MODE] = mode
    leaves[i, LEAF_MVX] = mvx
    leaves[i, LEAF_MVY] = mvy
    leaves[i, LEAF_CBF] = cbf


@njit(cache=True)
def _node8(x, y, x0, y0, qstep, intra_frame, org, rec, ref, mvf, energies, params, mats, zz,
           preselect, leaves, nleaf, lev_y, lev_u, lev_v):
    wy = np.empty((8, 8), np.int32)
    wu = np.empty((4, 4), np.int32)
    wv = np.empty((4, 4), np.int32)
    wly = np.zeros((8, 8), np.int64)
    wlu = np.zeros((4, 4), np.int64)
    wlv = np.zeros((4, 4), np.int64)
    cw, bw, dw, ew, mw, vxw, vyw, fw = eval_leaf(
        1, x, y, qstep, intra_frame, org, rec, ref, mvf, energies, params, mats, zz,
        preselect, wy, wu, wv, wly, wlu, wlv)

    start = nleaf
    cs = 0.0
    bs = 0
    ds = 0
    es = 0.0
    sy_ = np.empty((4, 4), np.int32)
    su = np.empty((2, 2), np.int32)
    sv = np.empty((2, 2), np.int32)
    sly = np.zeros((4, 4), np.int64)
    slu = np.zeros((2, 2), np.int64)
    slv = np.zeros((2, 2), np.int64)
    for k in range(4):
        sx = x + (k & 1) * 4
        sy = y + (k >> 1) * 4
        c, b, d, e, mo, vx, vy, f = eval_leaf(
            2, sx, sy, qstep, intra_frame, org, rec, ref, mvf, energies, params, mats, zz,
            preselect, sy_, su, sv, sly, slu, slv)
        _put(rec[0], sx, sy, sy_, 4)
        _put(rec[1], sx >> 1, sy >> 1, su, 2)
        _put(rec[2], sx >> 1, sy >> 1, sv, 2)
        _put_levels(lev_y, sx - x0, sy - y0, sly, 4)
        _zero_levels(lev_u, (sx - x0) >> 1, (sy - y0) >> 1, 2)
        _zero_levels(lev_v, (sx - x0) >> 1, (sy - y0) >> 1, 2)
        _set_leaf(leaves, nleaf, sx, sy, 2, mo, vx, vy, f)
        nleaf += 1
        cs += c
        bs += b
        ds += d
        es += e

    fc, fe = overhead_cost(params, 1)
    if cw + fc <= cs + fc:
        nleaf = start
        _set_leaf(leaves, nleaf, x, y, 1, mw, vxw, vyw, fw)
        nleaf += 1
        _put(rec[0], x, y, wy, 8)
        _put(rec[1], x >> 1, y >> 1, wu, 4)
        _put(rec[2], x >> 1, y >> 1, wv, 4)
        _put_levels(lev_y, x - x0, y - y0, wly, 8)
        _put_levels(lev_u, (x - x0) >> 1, (y - y0) >> 1, wlu, 4)
        _put_levels(lev_v, (x - x0) >> 1, (y - y0) >> 1, wlv, 4)
        return cw + fc, bw + 1, dw, ew + fe, nleaf
    return cs + fc, bs + 1, ds, es + fe, nleaf


@njit(cache=True)
def search_ctu(x0, y0, qp_delta, delta_enabled, qstep, intra_frame, org, rec, ref, mvf,
               energies, params, mats, zz, preselect, leaves, lev_y, lev_u, lev_v):
    """Full quadtree mode search of one CTU at one QP.

    Writes the chosen reconstruction into ``rec`` and the leaves/levels into
    the CTU-local outputs. Returns (cost, bits, ssd, energy, leaf count).
    """
    wy = np.empty((16, 16), np.int32)
    wu = np.empty((8, 8), np.int32)
    wv = np.empty((8, 8), np.int32)
    wly = np.zeros((16, 16), np.int64)
    wlu = np.zeros((8, 8), np.int64)
    wlv = np.zeros((8, 8), np.int64)
    cw, bw, dw, ew, mw, vxw, vyw, fw = eval_leaf(
        0, x0, y0, qstep, intra_frame, org, rec, ref, mvf, energies, params, mats, zz,
        preselect, wy, wu, wv, wly, wlu, wlv)

    nleaf = 0
    cs = 0.0
    bs = 0
    ds = 0
    es = 0.0
    for k in range(4):
        c, b, d, e, nleaf = _node8(
            x0 + (k & 1) * 8, y0 + (k >> 1) * 8, x0, y0, qstep, intra_frame, org, rec, ref,
            mvf, energies, params, mats, zz, preselect, leaves, nleaf, lev_y, lev_u, lev_v)
        cs += c
        bs += b
        ds += d
        es += e

    fc, fe = overhead_cost(params, 1)
    if cw + fc <= cs + fc:
        nleaf = 0
        _set_leaf(leaves, 0, x0, y0, 0, mw, vxw, vyw, fw)
        nleaf = 1
        _put(rec[0], x0, y0, wy, 16)
        _put(rec[1], x0 >> 1, y0 >> 1, wu, 8)
        _put(rec[2], x0 >> 1, y0 >> 1, wv, 8)
        _put_levels(lev_y, 0, 0, wly, 16)
        _put_levels(lev_u, 0, 0, wlu, 8)
        _put_levels(lev_v, 0, 0, wlv, 8)
        cost, bits, ssd, energy = cw + fc, bw + 1, dw, ew + fe
    else:
        cost, bits, ssd, energy = cs + fc, bs + 1, ds, es + fe

    if delta_enabled:
        db = se_bits(qp_delta)
        dc, de = overhead_cost(params, db)
        cost += dc
        bits += db
        energy += de
    return cost, bits, ssd, energy, nleaf


@njit(cache=True)
def encode_frame(intra_frame, qp_order, qsteps, qp_base, delta_enabled, org, rec, ref, mvf,
                 energies, params, mats, zz, preselect, out_qp, out_leaves, out_nleaf,
                 out_lev_y, out_lev_u, out_lev_v, out_bits, out_cost, out_ssd, out_energy):
    """Code every CTU of a frame, trying each QP of ``qp_order`` per CTU.

    ``qp_order`` lists QPs by preference (base first, then growing |delta|,
    lower QP first), so cost ties keep the earlier QP.
    """
    h, w = org[0].shape
    nx = w // 16
    ny = h // 16
    leaves = np.zeros((MAX_LEAVES, LEAF_FIELDS), np.int64)
    ly = np.zeros((16, 16), np.int64)
    lu = np.zeros((8, 8), np.int64)
    lv = np.zeros((8, 8), np.int64)
    by = np.empty((16, 16), np.uint8)
    bu = np.empty((8, 8), np.uint8)
    bv = np.empty((8, 8), np.uint8)
    for ty in range(ny):
        for tx in range(nx):
            x0 = tx * 16
            y0 = ty * 16
            t = ty * nx + tx
            best = np.inf
            for k in range(qp_order.shape[0]):
                qp = qp_order[k]
                c, b, d, e, nl = search_ctu(
                    x0, y0, qp - qp_base, delta_enabled, qsteps[k], intra_frame, org, rec, ref,
                    mvf, energies, params, mats, zz, preselect, leaves, ly, lu, lv)
                if c < best:
                    best = c
                    out_qp[t] = qp
                    out_bits[t] = b
                    out_cost[t] = c
                    out_ssd[t] = d
                    out_energy[t] = e
                    out_nleaf[t] = nl
                    for i in range(nl):
                        for f in range(LEAF_FIELDS):
                            out_leaves[t, i, f] = leaves[i, f]
                    _put_levels(out_lev_y, x0, y0, ly, 16)
                    _put_levels(out_lev_u, x0 >> 1, y0 >> 1, lu, 8)
                    _put_levels(out_lev_v, x0 >> 1, y0 >> 1, lv, 8)
                    for j in range(16):
                        for i in range(16):
                            by[j, i] = rec[0][y0 + j, x0 + i]
                    for j in range(8):
                        for i in range(8):
                            bu[j, i] = rec[1][(y0 >> 1) + j, (x0 >> 1) + i]
                            bv[j, i] = rec[2][(y0 >> 1) + j, (x0 >> 1) + i]
            _put(rec[0], x0, y0, by, 16)
            _put(rec[1], x0 >> 1, y0 >> 1, bu, 8)
            _put(rec[2], x0 >> 1, y0 >> 1, bv, 8)


@njit(cache=True)
def tally_leaves(leaves, nleaf, lev_y, lev_u, lev_v, feats):
    """Add the block-level features of ``nleaf`` leaves (frame-level levels)."""
    for i in range(nleaf):
        x = leaves[i, LEAF_X]
        y = leaves[i, LEAF_Y]
        depth = leaves[i, LEAF_DEPTH]
        mode = leaves[i, LEAF_MODE]
        feats[block_feature_id(mode, depth)] += 1
        if mode == MODE_INTER and ((leaves[i, LEAF_MVX] & 1) or (leaves[i, LEAF_MVY] & 1)):
            feats[F_FRACPEL] += 1
        if leaves[i, LEAF_CBF]:
            feats[F_TRANS + depth] += 1
            n = 16 >> depth
            for j in range(n):
                for k in range(n):
                    lv = lev_y[y + j, x + k]
                    if lv != 0:
                        feats[F_COEFFS] += 1
                        feats[F_VAL] += bit_length(abs(lv))
            if depth < 2:
                m = n >> 1
                for j in range(m):
                    for k in range(m):
                        for lv in (lev_u[(y >> 1) + j, (x >> 1) + k], lev_v[(y >> 1) + j, (x >> 1) + k]):
                            if lv != 0:
                                feats[F_COEFFS] += 1
                                feats[F_VAL] += bit_length(abs(lv))


@njit(cache=True)
def _rough_inter(sad, mvx, mvy, depth, energies, params):
    bits = INTER_MODE_BITS + se_bits(mvx) + se_bits(mvy)
    frac = 1 if (mvx & 1) or (mvy & 1) else 0
    e = leaf_energy(energies, params, MODE_INTER, depth, False, 0, 0, frac, bits)
    return rough_cost(sad, bits, e, params)


@njit(cache=True)
def _select_mvs(sad, depth, n, org_y, ref_y, search_range, energies, params, out):
    r = search_range
    span = 2 * r + 1
    nby, nbx = out.shape[0], out.shape[1]
    pred = np.empty((n, n), np.int32)
    for by in range(nby):
        for bx in range(nbx):
            best = np.inf
            best_l1 = 1 << 30
            bmx = 0
            bmy = 0
            for oy in range(span):
                for ox in range(span):
                    mvx = 2 * (ox - r)
                    mvy = 2 * (oy - r)
                    c = _rough_inter(sad[by, bx, oy, ox], mvx, mvy, depth, energies, params)
                    l1 = abs(mvx) + abs(mvy)
                    if c < best or (c == best and l1 < best_l1):
                        best = c
                        best_l1 = l1
                        bmx = mvx
                        bmy = mvy
            cx = bmx
            cy = bmy
            for k in range(9):
                if k == 4:
                    continue
                mvx = cx + (k % 3) - 1
                mvy = cy + (k // 3) - 1
                inter_predict(ref_y, bx * n, by * n, n, mvx, mvy, pred)
                c = _rough_inter(_sad(org_y, bx * n, by * n, pred, n), mvx, mvy, depth,
                                 energies, params)
                l1 = abs(mvx) + abs(mvy)
                if c < best or (c == best and l1 < best_l1):
                    best = c
                    best_l1 = l1
                    bmx = mvx
                    bmy = mvy
            out[by, bx, 0] = bmx
            out[by, bx, 1] = bmy


@njit(cache=True)
def motion_search(org_y, ref_y, search_range, energies, params, mv16, mv8, mv4):
    """Full integer search (+-search_range) then 8-neighbour half-pel refinement,
    for every 16x16, 8x8 and 4x4 block, all costed with the rough cost."""
    h, w = org_y.shape
    r = search_range
    span = 2 * r + 1
    ny4 = h // 4
    nx4 = w // 4
    sad4 = np.empty((ny4, nx4, span, span), np.int64)
    for by in range(ny4):
        for bx in range(nx4):
            for oy in range(span):
                dy = oy - r
                for ox in range(span):
                    dx = ox - r
                    s = 0
                    for j in range(4):
                        py = by * 4 + j
                        yy = min(max(py + dy, 0), h - 1)
                        for i in range(4):
                            px = bx * 4 + i
                            xx = min(max(px + dx, 0), w - 1)
                            s += abs(np.int64(org_y[py, px]) - np.int64(ref_y[yy, xx]))
                    sad4[by, bx, oy, ox] = s
    _select_mvs(sad4, 2, 4, org_y, ref_y, r, energies, params, mv4)
    sad8 = np.empty((ny4 // 2, nx4 // 2, span, span), np.int64)
    for by in range(ny4 // 2):
        for bx in range(nx4 // 2):
            for oy in range(span):
                for ox in range(span):
                    sad8[by, bx, oy, ox] = (sad4[2 * by, 2 * bx, oy, ox] + sad4[2 * by, 2 * bx + 1, oy, ox]
                                            + sad4[2 * by + 1, 2 * bx, oy, ox]
                                            + sad4[2 * by + 1, 2 * bx + 1, oy, ox])
    _select_mvs(sad8, 1, 8, org_y, ref_y, r, energies, params, mv8)
    sad16 = np.empty((ny4 // 4, nx4 // 4, span, span), np.int64)
    for by in range(ny4 // 4):
        for bx in range(nx4 // 4):
            for oy in range(span):
                for ox in range(span):
                    sad16[by, bx, oy, ox] = (sad8[2 * by, 2 * bx, oy, ox] + sad8[2 * by, 2 * bx + 1, oy, ox]
                                             + sad8[2 * by + 1, 2 * bx, oy, ox]
                                             + sad8[2 * by + 1, 2 * bx + 1, oy, ox])
    _select_mvs(sad16, 0, 16, org_y, ref_y, r, energies, params, mv16)
