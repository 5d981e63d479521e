"""Lagrange multiplier algebra and the DERD cost functions."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

QP_MIN = 0
QP_MAX = 51
TAU_EXPONENT = 3.0
ROUGH_COMPENSATION = math.sqrt(5e6)

# high-level model constants used for the default epsilon, with p_I = 0.02
HL_C1 = -2.9e-7
HL_C3 = 9.7e-7
DEFAULT_P_I = 0.02
DEFAULT_RHO = 1.5
DEFAULT_EPSILON = 1.5 * (HL_C1 * DEFAULT_P_I + HL_C3)


def _check_qp(qp: int) -> int:
    if isinstance(qp, bool) or int(qp) != qp or not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"QP must be an integer in [{QP_MIN}, {QP_MAX}], got {qp}")
    return int(qp)


@dataclass(frozen=True)
class LagrangePair:
    """Weights converting bits (lambda_r) and joules (lambda_e) into distortion units."""

    lambda_r: float
    lambda_e: float

    def __post_init__(self):
        for name in ("lambda_r", "lambda_e"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.lambda_r == 0 and self.lambda_e == 0:
            raise ValueError("lambda_r and lambda_e cannot both be zero")

    def scaled(self, k: float) -> "LagrangePair":
        return LagrangePair(self.lambda_r * k, self.lambda_e * k)


@dataclass(frozen=True)
class QPTriple:
    lambda_r: float
    lambda_e: float
    qp_star: int

    def __post_init__(self):
        _check_qp(self.qp_star)
        LagrangePair(self.lambda_r, self.lambda_e)


@dataclass(frozen=True)
class RhoEpsilon:
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "epsilon"])
            w.writerow([repr(float(self.rho)), repr(float(self.epsilon))])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RhoEpsilon":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if len(rows) != 2 or rows[0] != ["rho", "epsilon"]:
            raise ValueError(f"{path}: expected header 'rho,epsilon' and one row")
        return cls(float(rows[1][0]), float(rows[1][1]))


def qp_to_qstep(qp: int) -> float:
    """Quantization step q = 2^((QP - 4) / 6)."""
    return 2.0 ** ((_check_qp(qp) - 4) / 6.0)


def lambdas_from_qp_tau(qp: int, tau: float, re: RhoEpsilon | None = None,
                        a: float = TAU_EXPONENT) -> LagrangePair:
    """Split q^2 between the rate and energy multipliers according to tau.

    rho*lambda_r + epsilon*lambda_e = q^2 for every tau, and the ratio
    rho*lambda_r / (epsilon*lambda_e) equals (1/tau - 1)^a. tau = 0 is
    pure rate-distortion optimization, tau = 1 pure energy optimization.
    """
    re = re or RhoEpsilon()
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if a <= 0:
        raise ValueError("tau exponent must be positive")
    q2 = qp_to_qstep(qp) ** 2
    if tau == 0.0:
        return LagrangePair(q2 / re.rho, 0.0)
    if tau == 1.0:
        return LagrangePair(0.0, q2 / re.epsilon)
    r = (1.0 / tau - 1.0) ** a
    return LagrangePair(q2 / (re.rho * (1.0 + 1.0 / r)), q2 / (re.epsilon * (1.0 + r)))


def qp_from_lambdas(pair: LagrangePair, re: RhoEpsilon | None = None) -> float:
    """Real-valued QP = 4 + 3*log2(rho*lambda_r + epsilon*lambda_e)."""
    re = re or RhoEpsilon()
    s = re.rho * pair.lambda_r + re.epsilon * pair.lambda_e
    if s <= 0:
        raise ValueError("rho*lambda_r + epsilon*lambda_e must be positive")
    return 4.0 + 3.0 * math.log2(s)


def round_qp(qp: float) -> int:
    """Round half up and clamp into the legal QP range."""
    return min(QP_MAX, max(QP_MIN, math.floor(qp + 0.5)))


def cost_precise(distortion: float, bits: float, block_energy: float, pair: LagrangePair) -> float:
    """J = D + lambda_r*bits + lambda_e*E with D the SSD."""
    return distortion + pair.lambda_r * bits + pair.lambda_e * block_energy


def cost_rough(sad: float, bits: float, block_energy: float, pair: LagrangePair,
               compensation: float = ROUGH_COMPENSATION) -> float:
    """J = SAD + sqrt(lambda_r)*bits + compensation*sqrt(lambda_e)*E.

    The square-rooted multipliers match SAD rather than SSD; the
    compensation factor rescales the energy term to the rate term's order.
    """
    return sad + math.sqrt(pair.lambda_r) * bits + compensation * math.sqrt(pair.lambda_e) * block_energy


def choose_mode(candidates: Sequence, pair: LagrangePair):
    """Cheapest candidate under ``cost_precise``.

    Candidates need ``mode``, ``mv``, ``distortion``, ``bits`` and
    ``block_energy`` attributes. Ties go to the lower mode id, then to the
    shorter motion vector (L1 norm).
    """
    if not candidates:
        raise ValueError("no candidates to choose from")

    def key(c):
        mvx, mvy = c.mv
        return (cost_precise(c.distortion, c.bits, c.block_energy, pair), c.mode, abs(mvx) + abs(mvy))

    return min(candidates, key=key)
