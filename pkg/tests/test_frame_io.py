import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derdolab.frame_io import (
    PSNR_INF,
    Frame,
    QualityReport,
    load_yuv,
    mse_to_psnr,
    save_yuv,
    sequence_psnr,
    yuv_psnr,
    yuv_weighted,
)


def _raw_frames(rng, w, h, n):
    return rng.integers(0, 256, size=n * w * h * 3 // 2, dtype=np.uint8)


def test_short_file_returns_available_frames(tmp_path, rng):
    path = tmp_path / "one.yuv"
    _raw_frames(rng, 16, 16, 1).tofile(path)
    frames = load_yuv(path, 16, 16, 4)
    assert len(frames) == 1


def test_aligned_qcif_needs_no_padding(tmp_path, rng):
    path = tmp_path / "qcif.yuv"
    _raw_frames(rng, 176, 144, 32).tofile(path)
    frames = load_yuv(path, 176, 144, 32)
    assert len(frames) == 32
    assert frames[0].y.shape == (144, 176)
    assert frames[0].u.shape == (72, 88)


def test_unaligned_input_is_edge_padded_and_cropped_back(tmp_path, rng):
    path = tmp_path / "odd.yuv"
    raw = _raw_frames(rng, 20, 20, 2)
    raw.tofile(path)
    frames = load_yuv(path, 20, 20, 2)
    assert frames[0].y.shape == (32, 32)
    assert (frames[0].display_width, frames[0].display_height) == (20, 20)
    y = frames[0].y
    assert np.array_equal(y[:20, 20:], np.repeat(y[:20, 19:20], 12, axis=1))
    assert np.array_equal(y[20:, :], np.repeat(y[19:20, :], 12, axis=0))
    out = tmp_path / "back.yuv"
    save_yuv(frames, out)
    assert out.read_bytes() == raw.tobytes()


def test_round_trip_is_byte_identical(tmp_path, rng):
    path = tmp_path / "a.yuv"
    raw = _raw_frames(rng, 32, 16, 3)
    raw.tofile(path)
    out = tmp_path / "b.yuv"
    save_yuv(load_yuv(path, 32, 16, 3), out)
    assert out.read_bytes() == path.read_bytes()


def test_save_byte_count(tmp_path, rng):
    path = tmp_path / "a.yuv"
    _raw_frames(rng, 176, 144, 1).tofile(path)
    assert save_yuv(load_yuv(path, 176, 144, 1), tmp_path / "b.yuv") == 38016


def test_load_errors(tmp_path, rng):
    path = tmp_path / "t.yuv"
    raw = _raw_frames(rng, 16, 16, 2)
    raw[:-10].tofile(path)
    with pytest.raises(ValueError, match="truncated"):
        load_yuv(path, 16, 16, 2)
    # the complete first frame is still readable
    assert len(load_yuv(path, 16, 16, 1)) == 1
    with pytest.raises(ValueError):
        load_yuv(path, 0, 16, 1)
    with pytest.raises(FileNotFoundError):
        load_yuv(tmp_path / "missing.yuv", 16, 16, 1)
    with pytest.raises(ValueError):
        save_yuv([], tmp_path / "x.yuv")


def test_frame_is_immutable(small_clip):
    with pytest.raises(ValueError):
        small_clip[0].y[0, 0] = 1


def test_identical_frames_report_sentinel(small_clip):
    rep = yuv_psnr(small_clip[0], small_clip[0])
    assert rep.psnr_y == rep.psnr_u == rep.psnr_v == PSNR_INF
    assert math.isinf(rep.psnr_yuv)


def test_yuv_weighting():
    assert yuv_weighted(40.0, 40.0, 40.0) == 40.0
    assert yuv_weighted(42.0, 44.0, 46.0) == pytest.approx(42.75, abs=1e-12)
    rep = QualityReport.from_planes(42.0, 44.0, 46.0)
    assert rep.psnr_yuv == (6 * 42.0 + 44.0 + 46.0) / 8


def test_psnr_of_known_error():
    y = np.full((16, 16), 100, np.uint8)
    c = np.full((8, 8), 128, np.uint8)
    a = Frame.from_planes(y, c, c)
    b = Frame.from_planes(y + 1, c, c)
    rep = yuv_psnr(a, b)
    assert rep.psnr_y == pytest.approx(10 * math.log10(255 ** 2 / 1.0))
    assert mse_to_psnr(0.0) == PSNR_INF


def test_sequence_psnr_pools_squared_errors():
    c = np.full((8, 8), 128, np.uint8)
    base = np.full((16, 16), 100, np.uint8)
    ref = [Frame.from_planes(base, c, c)] * 2
    test = [Frame.from_planes(base, c, c), Frame.from_planes(base + 2, c, c)]
    # pooled MSE over both frames is (0 + 4) / 2 = 2
    assert sequence_psnr(ref, test).psnr_y == pytest.approx(10 * math.log10(255 ** 2 / 2.0))


def test_psnr_dimension_mismatch(small_clip):
    other = Frame.from_planes(np.zeros((16, 16), np.uint8), np.zeros((8, 8), np.uint8), np.zeros((8, 8), np.uint8))
    with pytest.raises(ValueError):
        yuv_psnr(small_clip[0], other)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(-20, 20))
def test_psnr_symmetric_and_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    a = rng.integers(30, 220, (16, 16)).astype(np.uint8)
    b = np.clip(a.astype(int) + rng.integers(-5, 6, a.shape), 0, 255).astype(np.uint8)
    c = np.full((8, 8), 128, np.uint8)
    fa, fb = Frame.from_planes(a, c, c), Frame.from_planes(b, c, c)
    assert yuv_psnr(fa, fb) == yuv_psnr(fb, fa)
    sa = Frame.from_planes((a.astype(int) + shift).astype(np.uint8), c, c)
    sb = Frame.from_planes((b.astype(int) + shift).astype(np.uint8), c, c)
    assert yuv_psnr(sa, sb).psnr_y == pytest.approx(yuv_psnr(fa, fb).psnr_y, rel=1e-12)
