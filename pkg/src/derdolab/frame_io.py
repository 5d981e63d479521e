"""Raw planar YUV 4:2:0 (8-bit) reading/writing and PSNR measurement."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CTU_SIZE = 16
PEAK = 255.0
PSNR_INF = math.inf  # identical planes; never fed to BD interpolation


def _align(v: int, to: int = CTU_SIZE) -> int:
    return (v + to - 1) // to * to


@dataclass(frozen=True, eq=False)
class Frame:
    """One 4:2:0 picture, padded to a multiple of the CTU size.

    ``display_width``/``display_height`` hold the original (pre-padding)
    size; quality is measured and files are written on that crop.
    """

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    display_width: int
    display_height: int

    def __post_init__(self):
        h, w = self.y.shape
        if w % CTU_SIZE or h % CTU_SIZE or w <= 0 or h <= 0:
            raise ValueError(f"frame size {w}x{h} is not a positive multiple of {CTU_SIZE}")
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half the luma size")
        if not (0 < self.display_width <= w and 0 < self.display_height <= h):
            raise ValueError("display size exceeds the padded frame")
        for plane in (self.y, self.u, self.v):
            if plane.dtype != np.uint8:
                raise TypeError("planes must be uint8")
            plane.flags.writeable = False

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.u, self.v

    @classmethod
    def from_planes(cls, y, u, v, display_size: tuple[int, int] | None = None) -> "Frame":
        """Build a frame from unpadded planes, padding by edge replication."""
        y = np.asarray(y, dtype=np.uint8)
        h, w = y.shape
        if w % 2 or h % 2:
            raise ValueError(f"4:2:0 needs even dimensions, got {w}x{h}")
        pw, ph = _align(w), _align(h)
        pad_y = ((0, ph - h), (0, pw - w))
        pad_c = ((0, (ph - h) // 2), (0, (pw - w) // 2))
        dw, dh = display_size if display_size is not None else (w, h)
        return cls(
            np.ascontiguousarray(np.pad(y, pad_y, mode="edge")),
            np.ascontiguousarray(np.pad(np.asarray(u, dtype=np.uint8), pad_c, mode="edge")),
            np.ascontiguousarray(np.pad(np.asarray(v, dtype=np.uint8), pad_c, mode="edge")),
            dw,
            dh,
        )

    def cropped(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w, h = self.display_width, self.display_height
        return self.y[:h, :w], self.u[: h // 2, : w // 2], self.v[: h // 2, : w // 2]


@dataclass(frozen=True)
class QualityReport:
    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_yuv: float

    @classmethod
    def from_planes(cls, psnr_y: float, psnr_u: float, psnr_v: float) -> "QualityReport":
        return cls(psnr_y, psnr_u, psnr_v, yuv_weighted(psnr_y, psnr_u, psnr_v))


def yuv_weighted(psnr_y: float, psnr_u: float, psnr_v: float) -> float:
    """Combined YUV-PSNR with 6:1:1 weighting."""
    return (6.0 * psnr_y + psnr_u + psnr_v) / 8.0


def mse_to_psnr(mse: float) -> float:
    if mse <= 0:
        return PSNR_INF
    return 10.0 * math.log10(PEAK * PEAK / mse)


def load_yuv(path: str | os.PathLike, width: int, height: int, max_frames: int) -> list[Frame]:
    """Read up to ``max_frames`` planar 4:2:0 frames from ``path``.

    Frames whose dimensions are not multiples of 16 are padded by edge
    replication; the original size is kept on each frame for cropping.
    A partial frame at the end of the file is rejected if it would be read.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid frame size {width}x{height}")
    if width % 2 or height % 2:
        raise ValueError(f"4:2:0 needs even dimensions, got {width}x{height}")
    if max_frames <= 0:
        raise ValueError("max_frames must be positive")
    luma = width * height
    frame_bytes = luma * 3 // 2
    data = np.fromfile(os.fspath(path), dtype=np.uint8)
    complete, partial = divmod(data.size, frame_bytes)
    if complete < max_frames and partial:
        raise ValueError(
            f"{path}: truncated frame {complete} ({partial} of {frame_bytes} bytes)"
        )
    n = min(max_frames, complete)
    frames = []
    cw, ch = width // 2, height // 2
    for i in range(n):
        buf = data[i * frame_bytes : (i + 1) * frame_bytes]
        y = buf[:luma].reshape(height, width)
        u = buf[luma : luma + cw * ch].reshape(ch, cw)
        v = buf[luma + cw * ch :].reshape(ch, cw)
        frames.append(Frame.from_planes(y, u, v))
    return frames


def save_yuv(frames: Sequence[Frame], path: str | os.PathLike,
             crop: tuple[int, int] | None = None) -> int:
    """Write frames as planar 4:2:0, cropped to ``crop`` (default: display size)."""
    if not frames:
        raise ValueError("no frames to write")
    shape = frames[0].y.shape
    if any(f.y.shape != shape for f in frames):
        raise ValueError("inconsistent frame dimensions")
    w, h = crop if crop is not None else (frames[0].display_width, frames[0].display_height)
    if w > shape[1] or h > shape[0]:
        raise ValueError("crop exceeds frame size")
    written = 0
    with open(path, "wb") as fh:
        for f in frames:
            for plane, (pw, ph) in zip(f.planes, ((w, h), (w // 2, h // 2), (w // 2, h // 2))):
                chunk = np.ascontiguousarray(plane[:ph, :pw]).tobytes()
                fh.write(chunk)
                written += len(chunk)
    return written


def _plane_sse(a: np.ndarray, b: np.ndarray) -> float:
    d = a.astype(np.int64) - b.astype(np.int64)
    return float(np.sum(d * d))


def yuv_psnr(reference: Frame, test: Frame, crop: tuple[int, int] | None = None) -> QualityReport:
    """Per-plane and combined PSNR of ``test`` against ``reference`` on the crop."""
    return sequence_psnr([reference], [test], crop)


def sequence_psnr(reference: Sequence[Frame], test: Sequence[Frame],
                  crop: tuple[int, int] | None = None) -> QualityReport:
    """Sequence PSNR: squared errors are pooled over all frames per plane,
    then converted to dB once (not an average of per-frame PSNRs)."""
    if len(reference) != len(test) or not reference:
        raise ValueError("sequences must be non-empty and equally long")
    w, h = crop if crop is not None else (reference[0].display_width, reference[0].display_height)
    sse = [0.0, 0.0, 0.0]
    for r, t in zip(reference, test):
        if r.y.shape != t.y.shape:
            raise ValueError(f"dimension mismatch {r.y.shape} vs {t.y.shape}")
        for k, (pr, pt) in enumerate(zip(r.planes, t.planes)):
            ph, pw = (h, w) if k == 0 else (h // 2, w // 2)
            sse[k] += _plane_sse(pr[:ph, :pw], pt[:ph, :pw])
    counts = [w * h * len(reference), (w // 2) * (h // 2) * len(reference)]
    return QualityReport.from_planes(
        mse_to_psnr(sse[0] / counts[0]),
        mse_to_psnr(sse[1] / counts[1]),
        mse_to_psnr(sse[2] / counts[1]),
    )
