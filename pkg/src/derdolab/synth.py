"""Deterministic synthetic test clips with natural-image statistics.

Clips combine a 1/f noise texture (the spectral falloff of natural
images), sub-pixel camera motion, independently moving objects and a
little sensor noise, so that every coding mode of the toy codec is
exercised.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates

from .frame_io import Frame

KINDS = ("pan", "objects")


def pink_texture(rng: np.random.Generator, size: int, slope: float = 1.0) -> np.ndarray:
    """Square texture with amplitude spectrum ~ 1/f^slope, scaled to [0, 1]."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    spectrum = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f ** slope
    spectrum[0, 0] = 0.0
    tex = np.fft.irfft2(spectrum, s=(size, size))
    tex -= tex.min()
    return tex / tex.max()


def _sample(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return map_coordinates(tex, [ys, xs], order=1, mode="wrap")


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def synthetic_clip(width: int, height: int, frames: int, kind: str = "pan", seed: int = 0,
                   noise: float = 1.0) -> list[Frame]:
    """Generate ``frames`` 4:2:0 frames of a given kind.

    ``pan``: slow diagonal camera pan over a textured scene plus one
    textured object moving against it. ``objects``: static background with
    three objects on different sub-pixel trajectories and a gentle global
    brightness drift.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {KINDS}")
    if width % 2 or height % 2 or width <= 0 or height <= 0 or frames <= 0:
        raise ValueError("invalid clip geometry")
    rng = np.random.default_rng(seed)
    size = 1 << int(np.ceil(np.log2(max(width, height) * 2)))
    bg = pink_texture(rng, size, 1.1)
    bg_u = pink_texture(rng, size, 1.6)
    bg_v = pink_texture(rng, size, 1.6)
    obj_tex = [pink_texture(rng, size, 0.9) for _ in range(3)]
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    if kind == "pan":
        cam = np.array([0.35, 0.8])  # (dy, dx) pixels per frame
        objects = [(np.array([height * 0.5, width * 0.3]), np.array([0.25, 1.3]), min(width, height) * 0.22)]
        drift = 0.0
    else:
        cam = np.array([0.0, 0.0])
        objects = [
            (np.array([height * 0.3, width * 0.25]), np.array([0.5, 0.75]), min(width, height) * 0.16),
            (np.array([height * 0.65, width * 0.7]), np.array([-0.3, -1.1]), min(width, height) * 0.2),
            (np.array([height * 0.5, width * 0.5]), np.array([1.2, 0.2]), min(width, height) * 0.12),
        ]
        drift = 0.15

    out = []
    for t in range(frames):
        oy, ox = cam * t
        luma = 40.0 + 170.0 * _sample(bg, yy + oy, xx + ox)
        cu = 128.0 + 50.0 * (_sample(bg_u, yy + oy, xx + ox) - 0.5)
        cv = 128.0 + 50.0 * (_sample(bg_v, yy + oy, xx + ox) - 0.5)
        for k, (c0, vel, radius) in enumerate(objects):
            cy, cx = c0 + vel * t
            d = ((yy - cy) / radius) ** 2 + ((xx - cx) / (radius * 1.3)) ** 2
            alpha = np.clip((1.0 - d) * 4.0, 0.0, 1.0)
            tex = _sample(obj_tex[k], yy - cy, xx - cx)
            luma = luma * (1 - alpha) + (30.0 + 200.0 * tex) * alpha
            cu = cu * (1 - alpha) + (90.0 + 40.0 * k) * alpha
            cv = cv * (1 - alpha) + (170.0 - 30.0 * k) * alpha
        luma = luma + drift * t + noise * rng.standard_normal(luma.shape)
        u = cu.reshape(height // 2, 2, width // 2, 2).mean(axis=(1, 3))
        v = cv.reshape(height // 2, 2, width // 2, 2).mean(axis=(1, 3))
        out.append(Frame.from_planes(_to_u8(luma), _to_u8(u), _to_u8(v)))
    return out


def flat_clip(width: int, height: int, frames: int, value: int = 128) -> list[Frame]:
    y = np.full((height, width), value, np.uint8)
    c = np.full((height // 2, width // 2), 128, np.uint8)
    return [Frame.from_planes(y, c, c) for _ in range(frames)]
