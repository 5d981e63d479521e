import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derdolab.derdo.lagrange import DEFAULT_EPSILON
from derdolab.energy_model import (
    CalibrationResult,
    FeatureCounts,
    HLParams,
    SpecificEnergies,
    UnderdeterminedError,
    calibrate_energies,
    estimate_block_energy,
    estimate_energy_bf,
    estimate_energy_hl,
    fit_hl_params,
    intra_fraction,
    level_value_bits,
)
from derdolab.features import FEATURES, MODE_DC, MODE_INTER, MODE_SKIP, N_FEATURES


def test_feature_set():
    assert N_FEATURES == 18
    assert FEATURES[:3] == ("offset", "frame_intra", "frame_inter")
    assert {"trans_d0", "trans_d1", "trans_d2", "fracpel", "coeffs", "val"} <= set(FEATURES)


def test_bf_examples(energies):
    assert estimate_energy_bf(FeatureCounts.zeros(), energies) == 0.0
    e = SpecificEnergies(np.zeros(N_FEATURES))
    one = SpecificEnergies.from_mapping({**e.as_dict(), "coeffs": 0.5})
    assert estimate_energy_bf(FeatureCounts.from_mapping({"coeffs": 3}), one) == 1.5
    three = SpecificEnergies.from_mapping({**e.as_dict(), "offset": 0.1, "coeffs": 0.02, "val": 1.0})
    counts = FeatureCounts.from_mapping({"offset": 2, "coeffs": 5, "val": 1})
    assert estimate_energy_bf(counts, three) == pytest.approx(1.3, abs=1e-15)


@settings(max_examples=30)
@given(st.lists(st.integers(0, 10 ** 5), min_size=N_FEATURES, max_size=N_FEATURES),
       st.lists(st.integers(0, 10 ** 5), min_size=N_FEATURES, max_size=N_FEATURES),
       st.integers(0, 50))
def test_bf_is_linear(c1, c2, a):
    e = SpecificEnergies.default()
    f1, f2 = FeatureCounts(np.array(c1)), FeatureCounts(np.array(c2))
    lhs = estimate_energy_bf(f1 * a + f2, e)
    assert lhs == pytest.approx(a * estimate_energy_bf(f1, e) + estimate_energy_bf(f2, e), rel=1e-12)


def test_block_energy_examples(energies):
    assert estimate_block_energy(MODE_SKIP, 1, energies) == energies["skip_blk_d1"]
    dc = estimate_block_energy(MODE_DC, 1, energies, levels=[3, -1, 0])
    expected = (energies["intra_blk_d1"] + energies["trans_d1"] + 2 * energies["coeffs"]
                + ((1 + 1) + (1 + 0)) * energies["val"])
    assert dc == pytest.approx(expected, rel=1e-15)
    inter = estimate_block_energy(MODE_INTER, 2, energies, fracpel_events=1)
    assert inter == pytest.approx(energies["inter_blk_d2"] + energies["fracpel"], rel=1e-15)
    with pytest.raises(ValueError):
        estimate_block_energy(MODE_DC, 3, energies)
    with pytest.raises(ValueError):
        estimate_block_energy(MODE_SKIP, 0, energies, levels=[1])


def test_level_value_bits():
    assert level_value_bits([3, -1]) == 3
    assert level_value_bits([0, 0]) == 0
    assert level_value_bits([1024, -7]) == 11 + 3


def test_hl_examples():
    p = HLParams(-2.9e-7, 1e-6, 9.7e-7, 2e-6)
    N, S = 10, 176 * 144
    assert estimate_energy_hl(0, N, S, 0.1, p) == pytest.approx((p.c2 * 0.1 + p.c4) * N * S)
    B = 5000
    assert estimate_energy_hl(B, N, S, 0.0, p) == pytest.approx((p.c3 * B / (N * S) + p.c4) * N * S)
    assert DEFAULT_EPSILON == pytest.approx(1.4463e-6, rel=1e-12)
    with pytest.raises(ValueError):
        estimate_energy_hl(B, 0, S, 0.1, p)


def test_intra_fraction():
    assert intra_fraction(32, 32) == 1 / 32
    assert intra_fraction(33, 32) == 2 / 33
    assert intra_fraction(50, 1) == 1.0


def _hl_observations(truth, rng, noise=0.0):
    obs = []
    for _ in range(40):
        N = int(rng.integers(4, 64))
        S = int(rng.choice([176 * 144, 352 * 288, 64 * 48]))
        p_i = float(rng.choice([0.02, 0.1, 0.25, 0.5, 1.0]))
        B = float(rng.uniform(0.01, 1.0) * N * S)
        e = estimate_energy_hl(B, N, S, p_i, truth)
        obs.append((B, N, S, p_i, e * (1 + noise * rng.standard_normal())))
    return obs


def test_hl_fit_recovers_noiseless_params(rng):
    truth = HLParams(-2.9e-7, 1.1e-6, 9.7e-7, 2.5e-6)
    obs = _hl_observations(truth, rng)
    fitted, residual = fit_hl_params(obs)
    assert np.allclose(fitted.as_array(), truth.as_array(), rtol=1e-9, atol=0)
    for B, N, S, p_i, e in obs:
        assert estimate_energy_hl(B, N, S, p_i, fitted) == pytest.approx(e, rel=1e-9)


def test_hl_fit_errors(rng):
    truth = HLParams(-2.9e-7, 1.1e-6, 9.7e-7, 2.5e-6)
    obs = _hl_observations(truth, rng)
    with pytest.raises(UnderdeterminedError):
        fit_hl_params(obs[:3])
    same_p = [(B, N, S, 0.1, e) for B, N, S, _, e in obs]
    with pytest.raises(UnderdeterminedError):
        fit_hl_params(same_p)


def test_hl_params_file_round_trip(tmp_path):
    p = HLParams(-2.9e-7, 1.1e-6, 9.7e-7, 2.5e-6)
    p.save(tmp_path / "hl.csv")
    assert (tmp_path / "hl.csv").read_text().splitlines()[0] == "c1,c2,c3,c4"
    assert HLParams.load(tmp_path / "hl.csv") == p


def test_energies_file_round_trip(tmp_path, energies):
    path = tmp_path / "e.csv"
    energies.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "feature,energy_joules" and len(lines) == 1 + N_FEATURES
    back = SpecificEnergies.load(path)
    assert back == energies and back.provenance == "file"
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="missing"):
        SpecificEnergies.load(path)


def test_default_energies_favor_fracpel_and_transforms(energies):
    assert energies.provenance == "synthetic"
    assert np.all(energies.values >= 0)
    small = ("coeffs", "val", "skip_blk_d0", "inter_blk_d0", "intra_blk_d0")
    assert energies["fracpel"] > max(energies[f] for f in small)
    assert energies["trans_d0"] > max(energies[f] for f in small)


def _synthetic_training(rng, truth, n=30):
    rows = rng.integers(0, 400, size=(n, N_FEATURES))
    rows[:, 0] = 1
    return [FeatureCounts(r) for r in rows], [float(truth @ r) for r in rows]


def _timer_for(counts, times):
    table = {id(c): t for c, t in zip(counts, times)}

    def timer(item, runs):
        return item, [table[id(item)]] * runs

    return timer


def test_calibration_recovers_synthetic_energies(rng):
    truth = rng.uniform(1e-4, 5e-3, N_FEATURES)
    counts, times = _synthetic_training(rng, truth)
    res = calibrate_energies(counts, _timer_for(counts, times), runs=5)
    assert isinstance(res, CalibrationResult)
    assert res.energies.provenance == "calibrated"
    assert np.allclose(res.energies.values, truth, rtol=1e-6, atol=0)
    assert res.mean_relative_error < 1e-9


def test_calibration_is_scale_equivariant(rng):
    truth = rng.uniform(1e-4, 5e-3, N_FEATURES)
    counts, times = _synthetic_training(rng, truth)
    a = calibrate_energies(counts, _timer_for(counts, times))
    b = calibrate_energies(counts, _timer_for(counts, [2 * t for t in times]))
    assert np.allclose(b.energies.values, 2 * a.energies.values, rtol=1e-9)
    c = calibrate_energies(counts, _timer_for(counts, times), watts=3.0)
    assert np.allclose(c.energies.values, 3 * a.energies.values, rtol=1e-9)


def test_calibration_errors_and_warning(rng, tmp_path):
    truth = rng.uniform(1e-4, 5e-3, N_FEATURES)
    counts, times = _synthetic_training(rng, truth)
    with pytest.raises(UnderdeterminedError):
        calibrate_energies(counts[:1], _timer_for(counts, times))
    dead = [FeatureCounts(np.where(np.arange(N_FEATURES) == 5, 0, c.counts)) for c in counts]
    with pytest.raises(UnderdeterminedError, match="intra_blk_d2"):
        calibrate_energies(dead, _timer_for(dead, times))
    fast = [t * 1e-3 for t in times]
    with pytest.warns(RuntimeWarning, match="below"):
        res = calibrate_energies(counts, _timer_for(counts, fast))
    res.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "bitstream,median_seconds,runs" and len(lines) == 1 + len(counts)


def test_calibration_takes_the_median(rng):
    truth = rng.uniform(1e-3, 5e-3, N_FEATURES)
    counts, times = _synthetic_training(rng, truth)

    def noisy(item, runs):
        t = times[counts.index(item)]
        return item, [t, 100 * t, t, 0.01 * t, t][:runs]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = calibrate_energies(counts, noisy, runs=5)
    assert np.allclose(res.energies.values, truth, rtol=1e-6)
