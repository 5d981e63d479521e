"""Decoding-energy models: the per-feature (bit-stream feature) model, the
sequence-level high-level model, and the training routines for both.

Energies are modeled joules. When specific energies come from
``calibrate_energies`` they are CPU decode seconds multiplied by a
configurable power constant, which makes them a proxy rather than a
physical measurement.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .features import (
    F_COEFFS,
    F_FRACPEL,
    F_TRANS,
    F_VAL,
    FEATURE_INDEX,
    FEATURES,
    MAX_DEPTH,
    MODE_SKIP,
    N_FEATURES,
    block_feature,
)

PROVENANCES = ("calibrated", "synthetic", "file")
MIN_TIMING_SECONDS = 0.05


class UnderdeterminedError(ValueError):
    """The training data cannot identify every model parameter."""


def _feature_vector(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    if arr.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} feature values, got {arr.size}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FeatureCounts:
    """Occurrence count n_f of every feature, in ``FEATURES`` order."""

    counts: np.ndarray

    def __post_init__(self):
        arr = _feature_vector(self.counts, np.int64)
        if np.any(arr < 0):
            raise ValueError("feature counts must be non-negative")
        object.__setattr__(self, "counts", arr)

    @classmethod
    def zeros(cls) -> "FeatureCounts":
        return cls(np.zeros(N_FEATURES, dtype=np.int64))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "FeatureCounts":
        unknown = set(mapping) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        return cls(np.array([int(mapping.get(name, 0)) for name in FEATURES]))

    def as_dict(self) -> dict[str, int]:
        return {name: int(n) for name, n in zip(FEATURES, self.counts)}

    def __getitem__(self, name: str) -> int:
        return int(self.counts[FEATURE_INDEX[name]])

    def __add__(self, other: "FeatureCounts") -> "FeatureCounts":
        return FeatureCounts(self.counts + other.counts)

    def __mul__(self, k: int) -> "FeatureCounts":
        return FeatureCounts(self.counts * int(k))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureCounts) and bool(np.array_equal(self.counts, other.counts))

    def __repr__(self) -> str:
        nonzero = {k: v for k, v in self.as_dict().items() if v}
        return f"FeatureCounts({nonzero})"

    def diff(self, other: "FeatureCounts") -> dict[str, tuple[int, int]]:
        """Features whose counts differ, as name -> (self, other)."""
        return {
            name: (int(a), int(b))
            for name, a, b in zip(FEATURES, self.counts, other.counts)
            if a != b
        }


@dataclass(frozen=True, eq=False)
class SpecificEnergies:
    """Energy e_f (joules) per occurrence of each feature."""

    values: np.ndarray
    provenance: str = "file"

    def __post_init__(self):
        arr = _feature_vector(self.values, np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("specific energies must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float], provenance: str = "file") -> "SpecificEnergies":
        missing = [f for f in FEATURES if f not in mapping]
        extra = set(mapping) - set(FEATURES)
        if missing or extra:
            raise ValueError(f"feature set mismatch (missing {missing}, unknown {sorted(extra)})")
        return cls(np.array([float(mapping[f]) for f in FEATURES]), provenance)

    def as_dict(self) -> dict[str, float]:
        return {name: float(e) for name, e in zip(FEATURES, self.values)}

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])

    def __eq__(self, other) -> bool:
        return isinstance(other, SpecificEnergies) and bool(np.array_equal(self.values, other.values))

    def scaled(self, k: float) -> "SpecificEnergies":
        return SpecificEnergies(self.values * k, self.provenance)

    @classmethod
    def load(cls, path: str | os.PathLike, provenance: str = "file") -> "SpecificEnergies":
        with open(path, newline="") as fh:
            return cls._parse(fh, provenance, str(path))

    @classmethod
    def default(cls) -> "SpecificEnergies":
        """The synthetic energy set shipped with the package."""
        ref = resources.files("derdolab.data").joinpath("default_energies.csv")
        with ref.open("r", newline="") as fh:
            return cls._parse(fh, "synthetic", "default_energies.csv")

    @classmethod
    def _parse(cls, fh, provenance: str, name: str) -> "SpecificEnergies":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature", "energy_joules"]:
            raise ValueError(f"{name}: expected header 'feature,energy_joules'")
        mapping: dict[str, float] = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{name}: malformed row {row}")
            if row[0] in mapping:
                raise ValueError(f"{name}: duplicate feature {row[0]}")
            mapping[row[0]] = float(row[1])
        return cls.from_mapping(mapping, provenance)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "energy_joules"])
            for name, e in zip(FEATURES, self.values):
                w.writerow([name, repr(float(e))])


@dataclass(frozen=True)
class HLParams:
    """Constants of the high-level model (joules, per-pixel domain)."""

    c1: float
    c2: float
    c3: float
    c4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3, self.c4])

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c1", "c2", "c3", "c4"])
            w.writerow([repr(float(c)) for c in self.as_array()])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "HLParams":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if not rows or rows[0] != ["c1", "c2", "c3", "c4"] or len(rows) != 2:
            raise ValueError(f"{path}: expected header 'c1,c2,c3,c4' and one row")
        return cls(*(float(v) for v in rows[1]))


def estimate_energy_bf(counts: FeatureCounts, energies: SpecificEnergies) -> float:
    """Bit-stream feature model: sum over features of n_f * e_f."""
    if not isinstance(counts, FeatureCounts) or not isinstance(energies, SpecificEnergies):
        raise TypeError("expected FeatureCounts and SpecificEnergies")
    return float(np.dot(counts.counts.astype(np.float64), energies.values))


def level_value_bits(levels: Iterable[int]) -> int:
    """Summed log magnitude of the nonzero levels: sum of (1 + floor(log2 |l|))."""
    return sum(abs(int(lv)).bit_length() for lv in levels if lv)


def estimate_block_energy(mode: int, depth: int, energies: SpecificEnergies,
                          levels: Iterable[int] = (), fracpel_events: int = 0) -> float:
    """Energy of the decoder features one leaf block would trigger.

    ``levels`` are the quantized levels of all of the block's transform
    blocks (zeros are ignored). A block with at least one nonzero level
    counts one inverse transform at its depth.
    """
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"unknown depth {depth}")
    nonzero = [int(lv) for lv in np.ravel(np.asarray(list(levels), dtype=np.int64)) if lv]
    if mode == MODE_SKIP and (nonzero or fracpel_events):
        raise ValueError("SKIP blocks carry no residual and no motion")
    e = energies.values
    total = e[block_feature(mode, depth)]
    if nonzero:
        total += e[F_TRANS + depth] + len(nonzero) * e[F_COEFFS] + level_value_bits(nonzero) * e[F_VAL]
    total += fracpel_events * e[F_FRACPEL]
    return float(total)


def estimate_energy_hl(B: float, N: int, S: int, p_I: float, params: HLParams) -> float:
    """High-level model from byte count B, N frames of S pixels and intra fraction p_I."""
    if N <= 0 or S <= 0:
        raise ValueError("frame count and pixels per frame must be positive")
    if not 0.0 <= p_I <= 1.0:
        raise ValueError("p_I must lie in [0, 1]")
    bpp = B / (N * S)
    return (params.c1 * p_I * bpp + params.c2 * p_I + params.c3 * bpp + params.c4) * N * S


def intra_fraction(frame_count: int, intra_period: int) -> float:
    """Share of intra frames when every ``intra_period``-th frame is intra."""
    return math.ceil(frame_count / intra_period) / frame_count


def fit_hl_params(observations: Sequence[tuple[float, int, int, float, float]]) -> tuple[HLParams, float]:
    """Least-squares fit of the high-level model.

    Each observation is (B, N, S, p_I, measured joules). The fit is done on
    per-pixel energies against the regressors p_I*B/(NS), p_I, B/(NS), 1.
    Returns the parameters and the residual norm (per-pixel joules).
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 5:
        raise ValueError("observations must be (B, N, S, p_I, joules) tuples")
    if obs.shape[0] < 4:
        raise UnderdeterminedError(f"4 parameters need at least 4 observations, got {obs.shape[0]}")
    B, N, S, p, J = obs.T
    if np.any(N <= 0) or np.any(S <= 0):
        raise ValueError("frame count and pixels per frame must be positive")
    bpp = B / (N * S)
    A = np.column_stack([p * bpp, p, bpp, np.ones_like(p)])
    y = J / (N * S)
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise UnderdeterminedError("a regressor is identically zero")
    As = A / scale
    if np.linalg.matrix_rank(As) < 4:
        raise UnderdeterminedError(
            "design matrix is rank deficient (need >= 2 distinct p_I and >= 2 distinct B/(N*S))")
    sol, *_ = np.linalg.lstsq(As, y, rcond=None)
    coeffs = sol / scale
    residual = float(np.linalg.norm(A @ coeffs - y))
    return HLParams(*(float(c) for c in coeffs)), residual


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    energies: SpecificEnergies
    median_seconds: np.ndarray
    relative_errors: np.ndarray
    runs: int
    watts: float
    names: tuple[str, ...] = field(default=())

    @property
    def mean_relative_error(self) -> float:
        return float(np.mean(self.relative_errors))

    def write_log(self, path: str | os.PathLike) -> None:
        names = self.names or tuple(f"bitstream_{i}" for i in range(len(self.median_seconds)))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bitstream", "median_seconds", "runs"])
            for name, t in zip(names, self.median_seconds):
                w.writerow([name, repr(float(t)), self.runs])


DecodeTimer = Callable[[object, int], tuple[FeatureCounts, Sequence[float]]]


def calibrate_energies(training: Sequence[object], decode_timer: DecodeTimer, runs: int = 5,
                       watts: float = 1.0, names: Sequence[str] = ()) -> CalibrationResult:
    """Train specific energies from timed decodes.

    ``decode_timer(item, runs)`` decodes one training bitstream ``runs``
    times and returns its feature counts and the per-run seconds. The
    median time times ``watts`` is the energy target; the energies are the
    non-negative least-squares solution of counts @ e = target, with rows
    weighted by 1/target so that relative errors are minimized.
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    if watts <= 0:
        raise ValueError("watts must be positive")
    if len(training) < N_FEATURES:
        raise UnderdeterminedError(
            f"{N_FEATURES} specific energies need at least {N_FEATURES} training bitstreams, "
            f"got {len(training)}")
    rows = []
    medians = []
    for item in training:
        counts, times = decode_timer(item, runs)
        if len(times) < 1:
            raise ValueError("decode timer returned no timings")
        rows.append(counts.counts.astype(np.float64))
        medians.append(float(np.median(times)))
    A = np.vstack(rows)
    t = np.asarray(medians)
    if np.any(t <= 0):
        raise ValueError("decode timings must be positive")
    if np.min(t) < MIN_TIMING_SECONDS:
        warnings.warn(
            f"shortest median decode time {np.min(t) * 1e3:.1f} ms is below "
            f"{MIN_TIMING_SECONDS * 1e3:.0f} ms; timer resolution may dominate",
            RuntimeWarning, stacklevel=2)
    target = t * watts
    col = np.linalg.norm(A, axis=0)
    if np.any(col == 0):
        dead = [FEATURES[i] for i in np.flatnonzero(col == 0)]
        raise UnderdeterminedError(f"features never exercised by the training set: {dead}")
    weighted = A / target[:, None]
    if np.linalg.matrix_rank(weighted / col) < N_FEATURES:
        raise UnderdeterminedError("training feature counts are linearly dependent")
    sol, _ = nnls(weighted / col, np.ones_like(target))
    energies = sol / col
    rel = np.abs(A @ energies - target) / target
    return CalibrationResult(SpecificEnergies(energies, "calibrated"), t, rel, runs, watts, tuple(names))
