"""Array-level wrappers around the codec's transform, quantizer and
motion-compensation kernels."""

from __future__ import annotations

import numpy as np

from . import kernels as K

TRANSFORM_SIZES = (4, 8, 16)


def _check_size(n: int) -> None:
    if n not in TRANSFORM_SIZES:
        raise ValueError(f"unsupported transform size {n}; expected one of {TRANSFORM_SIZES}")


def dct2d(block, direction: str = "forward") -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square block (or its inverse)."""
    x = np.asarray(block, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError("block must be square")
    n = x.shape[0]
    _check_size(n)
    out = np.empty((n, n))
    if direction == "forward":
        K.forward_dct(np.ascontiguousarray(x), n, K.DCT_BANK, out)
    elif direction == "inverse":
        K.inverse_dct(np.ascontiguousarray(x), n, K.DCT_BANK, out)
    else:
        raise ValueError("direction must be 'forward' or 'inverse'")
    return out


def qstep_quantize(values, qstep: float, direction: str = "quantize") -> np.ndarray:
    """Mid-tread quantizer rounding half away from zero, or its dequantizer."""
    if not qstep > 0:
        raise ValueError(f"qstep must be positive, got {qstep}")
    v = np.asarray(values)
    if direction == "quantize":
        a = np.floor(np.abs(v.astype(np.float64)) / qstep + 0.5)
        return (np.sign(v) * a).astype(np.int64)
    if direction == "dequantize":
        return v.astype(np.float64) * qstep
    raise ValueError("direction must be 'quantize' or 'dequantize'")


def zigzag(n: int) -> np.ndarray:
    """Row-major indices of an n x n block in coefficient scan order."""
    _check_size(n)
    return K.ZIGZAG_BANK[K.size_index(n), : n * n].copy()


def half_pel_predict(reference: np.ndarray, x: int, y: int, n: int, mv: tuple[int, int]) -> tuple[np.ndarray, int]:
    """Motion-compensated n x n prediction at (x, y) with a half-pel vector.

    Returns the block and the number of fractional-pel interpolation events
    (1 when either vector component is odd, else 0).
    """
    ref = np.ascontiguousarray(reference, dtype=np.uint8)
    if ref.ndim != 2:
        raise ValueError("reference must be a 2-D plane")
    out = np.empty((n, n), np.int32)
    mvx, mvy = int(mv[0]), int(mv[1])
    K.inter_predict(ref, int(x), int(y), int(n), mvx, mvy, out)
    return out.astype(np.uint8), int(bool((mvx & 1) or (mvy & 1)))
