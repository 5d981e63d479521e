import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from derdolab.codec import DecodeError, EncoderConfig, decode_sequence, encode_sequence
from derdolab.codec import kernels as K
from derdolab.derdo import RhoEpsilon
from derdolab.energy_model import estimate_energy_bf
from derdolab.features import MODE_SKIP
from derdolab.synth import flat_clip, synthetic_clip

FITTED = RhoEpsilon(17.0, 1.05e-6)  # the order of magnitude fitted on the synthetic clips


def _cfg(**kw):
    kw.setdefault("rho", FITTED.rho)
    kw.setdefault("epsilon", FITTED.epsilon)
    return EncoderConfig(**kw)


def _assert_closure(frames, res):
    dec = decode_sequence(res.to_bytes())
    assert len(dec.frames) == len(frames)
    for a, b in zip(res.reconstruction, dec.frames):
        for pa, pb in zip(a.planes, b.planes):
            assert np.array_equal(pa, pb)
    assert dec.features == res.features, res.features.diff(dec.features)
    for la, lb in zip(res.leaves, dec.leaves):
        assert np.array_equal(la, lb)
    for qa, qb in zip(res.ctu_qps, dec.ctu_qps):
        assert np.array_equal(qa, qb)
    return dec


@pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("dqp", [0, 5])
def test_closure(small_clip, energies, tau, dqp):
    res = encode_sequence(small_clip, _cfg(qp_base=30, tau=tau, delta_qp_range=dqp), energies)
    _assert_closure(small_clip, res)


def test_closure_with_unaligned_size_and_short_intra_period(energies):
    frames = synthetic_clip(40, 24, 4, "objects", seed=2)
    assert frames[0].y.shape == (32, 48)
    res = encode_sequence(frames, _cfg(qp_base=27, tau=0.3, intra_period=2), energies)
    dec = _assert_closure(frames, res)
    assert (dec.frames[0].display_width, dec.frames[0].display_height) == (40, 24)
    assert [s.intra for s in res.frame_stats] == [True, False, True, False]


def test_feature_count_invariants(small_clip, energies):
    res = encode_sequence(small_clip, _cfg(qp_base=32, tau=0.5), energies)
    f = res.features
    assert f["offset"] == 1
    assert f["frame_intra"] + f["frame_inter"] == len(small_clip)
    H, W = small_clip[0].y.shape
    for leaves in res.leaves:
        sizes = 16 >> leaves[:, K.LEAF_DEPTH]
        assert int(np.sum(sizes * sizes)) == H * W


@pytest.mark.parametrize("dqp", [0, 5])
def test_block_energies_sum_to_sequence_estimate(small_clip, energies, dqp):
    res = encode_sequence(small_clip, _cfg(qp_base=32, tau=0.5, delta_qp_range=dqp), energies)
    total = energies["offset"] + sum(s.estimated_energy for s in res.frame_stats)
    assert total == pytest.approx(estimate_energy_bf(res.features, energies), rel=1e-9)
    assert res.estimated_energy == estimate_energy_bf(res.features, energies)


def test_static_gray_inter_frame_is_all_skip(energies):
    frames = flat_clip(32, 32, 2, value=90)
    res = encode_sequence(frames, _cfg(qp_base=32, tau=0.0), energies)
    assert np.all(res.leaves[1][:, K.LEAF_MODE] == MODE_SKIP)
    # frame flag + (split flag + SKIP mode) per CTU = 9 bits, byte aligned
    assert res.frame_stats[1].bits == 16
    _assert_closure(frames, res)


def test_encoding_is_deterministic(small_clip, energies):
    cfg = _cfg(qp_base=27, tau=0.5, delta_qp_range=5)
    assert encode_sequence(small_clip, cfg, energies).to_bytes() == encode_sequence(small_clip, cfg, energies).to_bytes()


def test_rate_decreases_with_qp(energies):
    frames = synthetic_clip(64, 48, 3, "objects", seed=5)
    rates = [encode_sequence(frames, _cfg(qp_base=qp), energies).rate_bytes for qp in (22, 27, 32, 37)]
    assert rates == sorted(rates, reverse=True)


def test_energy_weight_trades_rate_for_energy(energies):
    frames = synthetic_clip(64, 48, 4, "pan", seed=5)
    r0 = encode_sequence(frames, _cfg(qp_base=32, tau=0.0), energies)
    r5 = encode_sequence(frames, _cfg(qp_base=32, tau=0.5), energies)
    assert r0.rate_bytes <= r5.rate_bytes
    assert r0.estimated_energy >= r5.estimated_energy


def test_motion_is_found_on_a_pure_translation(energies, rng):
    from derdolab.frame_io import Frame
    from derdolab.synth import pink_texture

    tex = (40 + 170 * pink_texture(rng, 128)).astype(np.uint8)
    c = np.full((16, 16), 128, np.uint8)
    frames = [Frame.from_planes(tex[10 + 2 * t: 42 + 2 * t, 20 + 3 * t: 52 + 3 * t], c, c) for t in range(2)]
    res = encode_sequence(frames, _cfg(qp_base=32), energies)
    inter = res.leaves[1]
    moving = inter[inter[:, K.LEAF_MODE] != MODE_SKIP]
    # the content moves by (+3, +2) pels, i.e. (6, 4) half-pels; most leaves must find it
    hits = np.sum((inter[:, K.LEAF_MVX] == 6) & (inter[:, K.LEAF_MVY] == 4))
    assert hits >= len(inter) // 2, (moving, inter)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(qp_base=50, delta_qp_range=5)
    with pytest.raises(ValueError):
        EncoderConfig(tau=1.5)
    with pytest.raises(ValueError):
        EncoderConfig(ctu_size=32)
    with pytest.raises(ValueError):
        EncoderConfig(rho=0.0)
    assert EncoderConfig(qp_base=30, delta_qp_range=2).qp_order() == [30, 29, 31, 28, 32]


def test_dimension_mismatch_is_rejected(small_clip, energies):
    other = synthetic_clip(32, 32, 1, "pan")
    with pytest.raises(ValueError):
        encode_sequence([small_clip[0], other[0]], _cfg(), energies)


@pytest.fixture(scope="module")
def small_stream(energies):
    frames = synthetic_clip(32, 32, 2, "objects", seed=3)
    return encode_sequence(frames, _cfg(qp_base=27, tau=0.2, delta_qp_range=5), energies).to_bytes()


def test_truncated_payload_raises_decode_error(small_stream):
    with pytest.raises(DecodeError):
        decode_sequence(small_stream[:-1])
    with pytest.raises(DecodeError):
        decode_sequence(small_stream[:20])


def test_trailing_bytes_raise_decode_error(small_stream):
    with pytest.raises(DecodeError, match="trailing"):
        decode_sequence(small_stream + b"\x00")


def test_bad_magic(small_stream):
    with pytest.raises(DecodeError):
        decode_sequence(b"XXXX" + small_stream[4:])


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.data())
def test_corrupted_streams_fail_cleanly(small_stream, data):
    raw = bytearray(small_stream)
    pos = data.draw(st.integers(15, len(raw) - 1))
    raw[pos] ^= data.draw(st.integers(1, 255))
    try:
        decode_sequence(bytes(raw))
    except DecodeError:
        pass
