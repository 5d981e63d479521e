"""Training and held-out bitstream corpora for energy calibration tests.

The corpus varies clip content, size, length, intra period, QP and tau so
that every feature is exercised and the feature count vectors are linearly
independent. Several frame sizes are required: at a single size the leaf
areas always add up to frames * width * height, which ties the block
counts to the frame counts.
"""

import itertools

import numpy as np

from derdolab.codec import EncoderConfig, encode_sequence
from derdolab.derdo import RhoEpsilon
from derdolab.synth import synthetic_clip

RE = RhoEpsilon(17.0, 1.05e-6)


def build_corpus(energies, count, seed=0, sizes=((64, 48), (48, 32), (32, 32))):
    rng = np.random.default_rng(seed)
    grid = list(itertools.product(("pan", "objects"), sizes, (2, 3, 5), (1, 2, 32), (22, 27, 32, 37, 42),
                                  (0.0, 0.5, 1.0)))
    order = rng.permutation(len(grid))
    out = []
    for idx in order[:count]:
        kind, (width, height), frames, period, qp, tau = grid[idx]
        clip = synthetic_clip(width, height, frames, kind, seed=int(rng.integers(0, 1 << 16)))
        cfg = EncoderConfig(qp_base=qp, tau=tau, intra_period=period, rho=RE.rho, epsilon=RE.epsilon)
        out.append(encode_sequence(clip, cfg, energies).bitstream)
    return out
