"""Decoding-energy-rate-distortion optimization: multiplier algebra, costs,
the (rho, epsilon) fit and the two encoder-driving algorithms."""

from .fit import RhoEpsilonFit, fit_rho_epsilon, read_triples, write_triples
from .lagrange import (
    DEFAULT_EPSILON,
    DEFAULT_RHO,
    ROUGH_COMPENSATION,
    TAU_EXPONENT,
    LagrangePair,
    QPTriple,
    RhoEpsilon,
    choose_mode,
    cost_precise,
    cost_rough,
    lambdas_from_qp_tau,
    qp_from_lambdas,
    qp_to_qstep,
    round_qp,
)

_LAZY = {"MultiQPResult", "multi_qp_optimize", "single_qp_optimize", "rdo_encode", "histogram_peak"}


def __getattr__(name):
    # the optimizers import the encoder, which itself imports this package
    if name in _LAZY:
        from . import optimize

        return getattr(optimize, name)
    raise AttributeError(name)
