"""Least-squares fit of (rho, epsilon) to observed (lambda_r, lambda_e, QP*) triples."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, nnls

from .lagrange import QPTriple, RhoEpsilon

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
TRIPLES_HEADER = ["lambda_r", "lambda_e", "qp_star"]


def write_triples(triples: Sequence[QPTriple], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPLES_HEADER)
        for t in triples:
            w.writerow([repr(float(t.lambda_r)), repr(float(t.lambda_e)), int(t.qp_star)])


def read_triples(path: str | os.PathLike) -> list[QPTriple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != TRIPLES_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRIPLES_HEADER)}")
        return [QPTriple(float(r[0]), float(r[1]), int(r[2])) for r in reader if r]


@dataclass(frozen=True)
class RhoEpsilonFit:
    params: RhoEpsilon
    mean_abs_error: float
    max_abs_error: float
    iterations: int
    converged: bool


def predicted_qp(lambda_r, lambda_e, rho, epsilon):
    return 4.0 + 3.0 * np.log2(rho * np.asarray(lambda_r) + epsilon * np.asarray(lambda_e))


def fit_rho_epsilon(triples: Sequence[QPTriple]) -> RhoEpsilonFit:
    """Minimize sum (QP* - (4 + 3 log2(rho*lambda_r + epsilon*lambda_e)))^2.

    The parameters are optimized as log(rho), log(epsilon) so they stay
    positive, with Levenberg-Marquardt (damped Gauss-Newton). The start
    point is the non-negative linear fit of 2^((QP*-4)/3).
    """
    if len(triples) < 2:
        raise ValueError("rho and epsilon are unidentifiable from fewer than 2 triples")
    lr = np.array([t.lambda_r for t in triples], dtype=np.float64)
    le = np.array([t.lambda_e for t in triples], dtype=np.float64)
    qp = np.array([t.qp_star for t in triples], dtype=np.float64)
    if not np.any(le > 0):
        raise ValueError("epsilon is unidentifiable: every triple has lambda_e = 0")
    if not np.any(lr > 0):
        raise ValueError("rho is unidentifiable: every triple has lambda_r = 0")
    design = np.column_stack([lr, le])
    col = np.linalg.norm(design, axis=0)
    if np.linalg.matrix_rank(design / col) < 2:
        raise ValueError("rho and epsilon are not separately identifiable: (lambda_r, lambda_e) are collinear")

    # the log model is insensitive to the magnitudes of the lambdas; work in
    # units where both columns have unit norm
    target = 2.0 ** ((qp - 4.0) / 3.0)
    w = 1.0 / target  # relative errors on the linear scale ~ QP errors
    init, _ = nnls(design / col * w[:, None], np.ones_like(target))
    if not np.any(init > 0):
        init = np.ones(2)
    init = np.where(init > 0, init, 1e-3 * init.max())
    theta0 = np.log(init)

    def residuals(theta):
        return qp - predicted_qp(lr / col[0], le / col[1], math.exp(theta[0]), math.exp(theta[1]))

    def jacobian(theta):
        a = math.exp(theta[0]) * lr / col[0]
        b = math.exp(theta[1]) * le / col[1]
        s = a + b
        k = -3.0 / math.log(2.0)
        return np.column_stack([k * a / s, k * b / s])

    sol = least_squares(residuals, theta0, jac=jacobian, method="lm", xtol=STEP_TOLERANCE,
                        ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITERATIONS)
    rho = float(math.exp(sol.x[0]) / col[0])
    eps = float(math.exp(sol.x[1]) / col[1])
    err = np.abs(qp - predicted_qp(lr, le, rho, eps))
    return RhoEpsilonFit(RhoEpsilon(rho, eps), float(np.mean(err)), float(np.max(err)),
                         int(sol.nfev), bool(sol.status > 0))
