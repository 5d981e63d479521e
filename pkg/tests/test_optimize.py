import time

import numpy as np
import pytest

from derdolab.codec import EncoderConfig, encode_sequence
from derdolab.derdo import (
    LagrangePair,
    RhoEpsilon,
    histogram_peak,
    lambdas_from_qp_tau,
    multi_qp_optimize,
    qp_to_qstep,
    rdo_encode,
    single_qp_optimize,
)
from derdolab.synth import flat_clip, synthetic_clip

RE = RhoEpsilon(17.0, 1.05e-6)


@pytest.fixture(scope="module")
def clip():
    return synthetic_clip(64, 48, 3, "objects", seed=11)


def test_histogram_peak():
    assert histogram_peak({30: 4, 31: 9, 32: 2}, 27) == 31
    assert histogram_peak({30: 5, 33: 5}, 27) == 30  # equal maxima: lower QP
    assert histogram_peak({}, 27) == 27


def test_multi_qp_converges_to_interior_peak(clip, energies):
    m = multi_qp_optimize(clip, 32, 0.5, RE, energies)
    assert m.converged
    assert 27 < m.triple.qp_star < 37
    assert m.triple.qp_star == histogram_peak(m.histogram, 32)
    assert (m.triple.lambda_r, m.triple.lambda_e) == m.trajectory[-1][:2]
    assert len(m.trajectory) == m.iterations
    assert set(m.histogram) <= set(range(27, 38))


def test_multi_qp_rescales_lambdas_at_the_border(clip, energies):
    # multipliers far too small for QP 32: the peak lands at the lower border
    # and every re-encode doubles both multipliers
    m = multi_qp_optimize(clip, 32, 0.5, RhoEpsilon(RE.rho * 64, RE.epsilon * 64), energies)
    lr = [t[0] for t in m.trajectory]
    assert m.trajectory[0][2] == 27
    assert all(b == pytest.approx(2 * a) for a, b in zip(lr, lr[1:]))
    assert m.converged and m.iterations > 1


def test_multi_qp_iteration_cap(clip, energies):
    m = multi_qp_optimize(clip, 32, 0.5, RhoEpsilon(RE.rho * 1e4, RE.epsilon * 1e4), energies,
                          max_iterations=2)
    assert not m.converged and m.iterations == 2
    # the result belongs to the last encode, with the multipliers it used
    assert m.triple.lambda_r == m.trajectory[-1][0]
    assert m.result.lambdas == LagrangePair(m.triple.lambda_r, m.triple.lambda_e)


def test_flat_content_has_no_residual_ctus(energies):
    # flat gray never needs a residual: every CTU ties across QPs and the
    # histogram of residual-coded CTUs stays empty, so QP* falls back to the base
    m = multi_qp_optimize(flat_clip(32, 32, 2), 32, 0.0, RE, energies)
    assert m.histogram == {}
    assert m.triple.qp_star == 32 and m.converged and m.iterations == 1


def test_histogram_has_a_distinct_peak(energies):
    frames = synthetic_clip(64, 48, 4, "pan", seed=4)
    m = multi_qp_optimize(frames, 32, 0.3, RE, energies)
    bins = [m.histogram.get(q, 0) for q in range(27, 38)]
    assert max(bins) >= 2 * np.median(bins)


def test_single_qp_uses_fitted_lambdas(clip, energies):
    res = single_qp_optimize(clip, 30, 0.5, RE, energies)
    assert res.lambdas == lambdas_from_qp_tau(30, 0.5, RE)
    assert res.qp_histogram.keys() <= {30}


def test_tau_zero_equals_plain_rdo(clip, energies):
    a = single_qp_optimize(clip, 30, 0.0, RE, energies)
    b = rdo_encode(clip, 30, RE, energies)
    assert a.to_bytes() == b.to_bytes()
    assert b.lambdas == LagrangePair(qp_to_qstep(30) ** 2 / RE.rho, 0.0)


def test_single_qp_is_much_faster_than_multi_qp(clip, energies):
    single_qp_optimize(clip, 32, 0.5, RE, energies)  # warm caches
    t0 = time.process_time()
    single_qp_optimize(clip, 32, 0.5, RE, energies)
    t_single = time.process_time() - t0
    t0 = time.process_time()
    multi_qp_optimize(clip, 32, 0.5, RE, energies)
    t_multi = time.process_time() - t0
    assert t_single < t_multi / 3


def test_proportional_energy_matches_rdo_mode_map(clip, energies):
    kappa = 2e5
    pair = LagrangePair(20.0, 1e-4)
    cfg = EncoderConfig(qp_base=30, rho=RE.rho, epsilon=RE.epsilon,
                        rough_compensation=(np.sqrt(20.0 + kappa * 1e-4) - np.sqrt(20.0)) / (kappa * np.sqrt(1e-4)))
    derd = encode_sequence(clip, cfg, energies, lambdas=pair, energy_kappa=kappa)
    rdo = encode_sequence(clip, cfg, energies, lambdas=LagrangePair(20.0 + kappa * 1e-4, 0.0), energy_kappa=0.0)
    for a, b in zip(derd.leaves, rdo.leaves):
        assert np.array_equal(a, b)
    assert derd.to_bytes() == rdo.to_bytes()
