"""Prediction/label containers, validation, splitting, and synthetic generators.

Two kinds of objects live here: empirical samples (``LabeledPredictions``)
and exact finite-support populations (``FiniteDistribution``).  The latter
make population-level quantities computable in closed form, which the exact
guarantee checks in :mod:`utilcal.estimators` rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParseError, ValidationError

# Tolerances: external float32 exports are noisy, internal math is double
# precision, hence the two tiers.
ROW_SUM_TOL = 1e-6
ENTRY_TOL = -1e-9
FATAL_ROW_SUM = 1e-3
FATAL_ENTRY = -1e-6
EXACT_TOL = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LabeledPredictions:
    """An n x C probability matrix plus n true-class indices.

    Construction checks structure only (shapes, n >= 1, C >= 2); value-level
    checks are the job of :func:`validate`, so that noisy external data can be
    loaded, inspected, and optionally repaired.  Arrays are made read-only so
    instances can be shared across workers.
    """

    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.ndim != 2:
            raise DomainError(f"probs must be 2-D, got ndim={probs.ndim}")
        if labels.ndim != 1:
            raise DomainError(f"labels must be 1-D, got ndim={labels.ndim}")
        n, c = probs.shape
        if n < 1:
            raise DomainError("need at least one row")
        if c < 2:
            raise DomainError(f"need at least two classes, got C={c}")
        if labels.shape[0] != n:
            raise DomainError(
                f"labels length {labels.shape[0]} does not match n={n}"
            )
        object.__setattr__(self, "probs", _freeze(probs))
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def C(self) -> int:
        return self.probs.shape[1]

    def take(self, idx: np.ndarray) -> "LabeledPredictions":
        return LabeledPredictions(self.probs[idx], self.labels[idx])


@dataclass(frozen=True)
class FiniteDistribution:
    """Finite-support population over (prediction vector, label) pairs.

    ``support[s]`` is a prediction vector, ``weights[s]`` its probability,
    and ``cond_label[s]`` the conditional label law at that point.  All
    invariants are enforced to within 1e-12 because these objects are built
    internally in double precision.
    """

    support: np.ndarray
    weights: np.ndarray
    cond_label: np.ndarray

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        cond = np.asarray(self.cond_label, dtype=np.float64)
        if support.ndim != 2 or support.shape[1] < 2:
            raise DomainError("support must be S x C with C >= 2")
        s, c = support.shape
        if weights.shape != (s,) or cond.shape != (s, c):
            raise DomainError("weights/cond_label shapes do not match support")
        if abs(weights.sum() - 1.0) > EXACT_TOL:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        if np.any(weights <= 0):
            raise DomainError("all weights must be positive")
        if np.any(support < -EXACT_TOL) or np.any(
            np.abs(support.sum(axis=1) - 1.0) > EXACT_TOL
        ):
            raise DomainError("support rows must be simplex points")
        if np.any(cond < -EXACT_TOL) or np.any(
            np.abs(cond.sum(axis=1) - 1.0) > EXACT_TOL
        ):
            raise DomainError("cond_label rows must be simplex points")
        for i in range(s):
            for j in range(i + 1, s):
                if np.max(np.abs(support[i] - support[j])) <= EXACT_TOL:
                    raise DomainError(
                        f"support points {i} and {j} are not distinct"
                    )
        object.__setattr__(self, "support", _freeze(support))
        object.__setattr__(self, "weights", _freeze(weights))
        object.__setattr__(self, "cond_label", _freeze(cond))

    @property
    def S(self) -> int:
        return self.support.shape[0]

    @property
    def C(self) -> int:
        return self.support.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "support": self.support.tolist(),
            "weights": self.weights.tolist(),
            "cond_label": self.cond_label.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FiniteDistribution":
        try:
            return cls(
                np.asarray(d["support"], dtype=np.float64),
                np.asarray(d["weights"], dtype=np.float64),
                np.asarray(d["cond_label"], dtype=np.float64),
            )
        except KeyError as exc:
            raise ParseError(f"distribution JSON missing key {exc}") from exc


@dataclass(frozen=True)
class SplitResult:
    calibration: LabeledPredictions
    test: LabeledPredictions
    seed: int
    fraction: float


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`: extremes observed plus any repaired data.

    ``strict`` reports whether the data already satisfies the tight internal
    tolerances (row sums within 1e-6, entries >= -1e-9) rather than merely
    clearing the fatal thresholds.
    """

    n: int
    C: int
    max_row_sum_deviation: float
    min_entry: float
    label_violations: int
    strict: bool
    renormalized: bool
    corrected: LabeledPredictions | None

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "C": self.C,
            "max_row_sum_deviation": self.max_row_sum_deviation,
            "min_entry": self.min_entry,
            "label_violations": self.label_violations,
            "strict": self.strict,
            "renormalized": self.renormalized,
        }


def validate(
    preds: LabeledPredictions, renormalize: bool = False
) -> ValidationReport:
    """Check value-level invariants, optionally repairing noisy rows.

    Raises :class:`ValidationError` when a row sum deviates from 1 by more
    than 1e-3 or an entry is below -1e-6 and ``renormalize`` is unset, and
    always when a label is out of range (renormalization cannot fix labels).
    With ``renormalize`` set, entries are clamped to [0, 1] and each row is
    divided by its sum; the corrected data is attached to the report.
    """
    probs, labels = preds.probs, preds.labels
    row_sums = probs.sum(axis=1)
    max_dev = float(np.max(np.abs(row_sums - 1.0)))
    min_entry = float(probs.min())
    bad_labels = int(np.count_nonzero((labels < 0) | (labels >= preds.C)))

    if bad_labels:
        raise ValidationError(f"{bad_labels} label(s) out of range [0, {preds.C})")
    if not renormalize:
        if max_dev > FATAL_ROW_SUM:
            raise ValidationError(
                f"row sum deviates from 1 by {max_dev:.3g} (> {FATAL_ROW_SUM:g})"
            )
        if min_entry < FATAL_ENTRY:
            raise ValidationError(
                f"entry {min_entry:.3g} below {FATAL_ENTRY:g}"
            )

    corrected = None
    if renormalize:
        fixed = np.clip(probs, 0.0, 1.0)
        sums = fixed.sum(axis=1)
        if np.any(sums <= 0):
            raise ValidationError("row with no positive mass cannot be renormalized")
        corrected = LabeledPredictions(fixed / sums[:, None], labels)

    return ValidationReport(
        n=preds.n,
        C=preds.C,
        max_row_sum_deviation=max_dev,
        min_entry=min_entry,
        label_violations=bad_labels,
        strict=max_dev <= ROW_SUM_TOL and min_entry >= ENTRY_TOL,
        renormalized=renormalize,
        corrected=corrected,
    )


def split(preds: LabeledPredictions, fraction: float, seed: int) -> SplitResult:
    """Deterministic seeded Fisher-Yates split into calibration/test parts.

    Calibration size is ``round(fraction * n)``; the two index sets partition
    ``0..n-1``.  Re-running with the same seed reproduces the partition.
    """
    n = preds.n
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must be in (0, 1), got {fraction}")
    if n < 2:
        raise DomainError("need n >= 2 to split")
    n_cal = int(round(fraction * n))
    if n_cal < 1 or n_cal > n - 1:
        raise DomainError(
            f"fraction {fraction} leaves an empty part for n={n}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cal_idx = np.sort(perm[:n_cal])
    test_idx = np.sort(perm[n_cal:])
    return SplitResult(
        calibration=preds.take(cal_idx),
        test=preds.take(test_idx),
        seed=seed,
        fraction=fraction,
    )


def gen_two_point(n_per_group: int) -> LabeledPredictions:
    """Exact finite realization of the binned-blind-spot construction.

    Two prediction vectors, (0.45, 0.275, 0.275) and (0.55, 0.225, 0.225),
    interleaved A, B, A, B, ...  Exactly 5% of the first group and 95% of the
    second are labeled class 0 (the rest class 1), so group statistics are a
    counting identity, not a sample.  The three-bin equal-width top-class
    calibration error of this dataset is exactly 0 while its worst-interval
    top-class error is 0.2.
    """
    if n_per_group < 20 or n_per_group % 20 != 0:
        raise DomainError(
            "n_per_group must be >= 20 and divisible by 20 for exact 5%/95% counts"
        )
    k = n_per_group // 20
    row_a = np.array([0.45, 0.275, 0.275])
    row_b = np.array([0.55, 0.225, 0.225])
    labels_a = np.where(np.arange(n_per_group) < k, 0, 1)
    labels_b = np.where(np.arange(n_per_group) < 19 * k, 0, 1)
    probs = np.empty((2 * n_per_group, 3))
    labels = np.empty(2 * n_per_group, dtype=np.int64)
    probs[0::2] = row_a
    probs[1::2] = row_b
    labels[0::2] = labels_a
    labels[1::2] = labels_b
    return LabeledPredictions(probs, labels)


def two_point_distribution() -> FiniteDistribution:
    """The exact population behind :func:`gen_two_point`."""
    return FiniteDistribution(
        support=np.array([[0.45, 0.275, 0.275], [0.55, 0.225, 0.225]]),
        weights=np.array([0.5, 0.5]),
        cond_label=np.array([[0.05, 0.95, 0.0], [0.95, 0.05, 0.0]]),
    )


def _uniform_simplex(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    # Normalized unit-rate exponentials via inverse CDF of the uniform draw;
    # uniform on the simplex.
    u = rng.random(shape)
    e = -np.log1p(-u)
    return e / e.sum(axis=1, keepdims=True)


def _sample_labels(cond_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Inverse-CDF categorical sampling, one row of probabilities per draw.
    cum = np.cumsum(cond_rows, axis=1)
    u = rng.random(cond_rows.shape[0])
    labels = np.sum(u[:, None] >= cum, axis=1)
    return np.minimum(labels, cond_rows.shape[1] - 1).astype(np.int64)


def gen_calibrated(
    n: int, C: int, support_size: int, seed: int
) -> tuple[LabeledPredictions, FiniteDistribution]:
    """Sample from a perfectly calibrated finite-support law.

    Support points are uniform on the simplex; the conditional label law at
    each point equals the point itself, so every population calibration
    quantity is exactly zero.  Returns the empirical sample together with the
    exact population object.
    """
    if support_size < 1:
        raise DomainError("support_size must be >= 1")
    if C < 2:
        raise DomainError("C must be >= 2")
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    support = _uniform_simplex(rng, (support_size, C))
    dist = FiniteDistribution(
        support=support,
        weights=np.full(support_size, 1.0 / support_size),
        cond_label=support.copy(),
    )
    s_idx = rng.integers(0, support_size, size=n)
    labels = _sample_labels(dist.cond_label[s_idx], rng)
    return LabeledPredictions(dist.support[s_idx], labels), dist


def gen_miscalibrated(
    spec: FiniteDistribution | list[tuple],
    n: int,
    seed: int,
) -> tuple[LabeledPredictions, FiniteDistribution]:
    """Sample n rows from an arbitrary finite-support law.

    ``spec`` is either a ready FiniteDistribution or a list of
    ``(p_s, q_s, pi_s)`` triples.  The returned distribution echoes the spec.
    """
    if isinstance(spec, FiniteDistribution):
        dist = spec
    else:
        support = np.array([p for p, _, _ in spec], dtype=np.float64)
        cond = np.array([q for _, q, _ in spec], dtype=np.float64)
        weights = np.array([w for _, _, w in spec], dtype=np.float64)
        dist = FiniteDistribution(support, weights, cond)
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    cum_w = np.cumsum(dist.weights)
    s_idx = np.minimum(
        np.searchsorted(cum_w, rng.random(n), side="right"), dist.S - 1
    )
    labels = _sample_labels(dist.cond_label[s_idx], rng)
    return LabeledPredictions(dist.support[s_idx], labels), dist


# --- file formats ---------------------------------------------------------


def load_predictions_csv(path: str, header: bool = False) -> np.ndarray:
    """Read an n x C comma-separated float matrix."""
    try:
        arr = np.loadtxt(
            path, delimiter=",", skiprows=1 if header else 0, ndmin=2,
            dtype=np.float64,
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return arr


def load_labels_csv(path: str, header: bool = False) -> np.ndarray:
    """Read n lines, one non-negative integer label each."""
    try:
        arr = np.loadtxt(
            path, delimiter=",", skiprows=1 if header else 0, ndmin=1,
            dtype=np.int64,
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return arr


def write_predictions_csv(path: str, probs: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(probs), delimiter=",", fmt="%.17g", newline="\n")


def write_labels_csv(path: str, labels: np.ndarray) -> None:
    np.savetxt(path, labels, fmt="%d", newline="\n")


def load_distribution_json(path: str) -> FiniteDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return FiniteDistribution.from_json_dict(d)


def write_distribution_json(path: str, dist: FiniteDistribution) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dist.to_json_dict(), fh, indent=2)
        fh.write("\n")
