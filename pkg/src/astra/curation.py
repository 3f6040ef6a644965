"""Semantic-alignment scoring and calibration for database curation.

Each candidate image/prompt pair is judged on three dimensions (subject
consistency, interaction logic, detail fidelity); the aggregate score is a
calibrated weighted sum, and acceptance is a calibrated threshold on it.
The judge producing the dimension scores is external; scores arrive as data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import CalibrationError, ValidationError

_ORDER_EPS = 1e-9
_SUM_TOL = 1e-9


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class DimScores:
    """Per-dimension judge scores, each in [0, 1]."""

    s1: float
    s2: float
    s3: float

    def __post_init__(self) -> None:
        for name in ("s1", "s2", "s3"):
            _check_unit(name, getattr(self, name))

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3], dtype=np.float64)


@dataclass(frozen=True)
class Weights:
    """Aggregation weights: strictly ordered w1 > w2 > w3 >= 0, summing to 1."""

    w1: float
    w2: float
    w3: float

    def __post_init__(self) -> None:
        if not (self.w1 > self.w2 > self.w3 >= 0.0):
            raise ValidationError(
                f"weights must satisfy w1 > w2 > w3 >= 0, got "
                f"({self.w1}, {self.w2}, {self.w3})"
            )
        if abs(self.w1 + self.w2 + self.w3 - 1.0) > _SUM_TOL:
            raise ValidationError("weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3], dtype=np.float64)


@dataclass(frozen=True)
class Threshold:
    theta: float

    def __post_init__(self) -> None:
        _check_unit("theta", self.theta)


@dataclass(frozen=True)
class CurationSample:
    """Calibration sample: dimension scores plus exactly one target kind."""

    scores: DimScores
    human_pref: float | None = None
    accept_label: bool | None = None

    def __post_init__(self) -> None:
        if (self.human_pref is None) == (self.accept_label is None):
            raise ValidationError(
                "exactly one of human_pref / accept_label must be set"
            )
        if self.human_pref is not None:
            _check_unit("human_pref", self.human_pref)


# Shipped defaults; artifact values, not calibrated against any dataset.
DEFAULT_WEIGHTS = Weights(0.5, 0.3, 0.2)
DEFAULT_THRESHOLD = Threshold(0.7)

PARAMS_VERSION = 1


def aggregate_score(scores: DimScores, weights: Weights) -> float:
    """Weighted semantic-alignment score S = w1*s1 + w2*s2 + w3*s3."""
    return weights.w1 * scores.s1 + weights.w2 * scores.s2 + weights.w3 * scores.s3


def _project_nonincreasing(values: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the non-increasing cone (pool adjacent violators)."""
    blocks: list[list[float]] = []  # [mean, count]
    for v in values:
        blocks.append([float(v), 1.0])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            m2, c2 = blocks.pop()
            m1, c1 = blocks.pop()
            blocks.append([(m1 * c1 + m2 * c2) / (c1 + c2), c1 + c2])
    out: list[float] = []
    for mean, count in blocks:
        out.extend([mean] * int(count))
    return np.array(out)


def calibrate_weights(samples: Sequence[CurationSample]) -> Weights:
    """Fit aggregation weights to human-preference targets.

    Non-negative least squares on the (s1, s2, s3) design, normalized to the
    simplex; if the fit is not strictly decreasing it is projected onto the
    non-increasing cone and nudged apart by a minimal epsilon.
    """
    if len(samples) < 3:
        raise CalibrationError(f"need at least 3 samples, got {len(samples)}")
    if any(s.human_pref is None for s in samples):
        raise CalibrationError("all samples must carry human_pref targets")
    design = np.array([s.scores.as_array() for s in samples])
    target = np.array([s.human_pref for s in samples])
    if np.linalg.matrix_rank(design) < 3:
        raise CalibrationError("score vectors are collinear; design is degenerate")
    w, _residual = nnls(design, target)
    if not (w[0] > w[1] > w[2]):
        w = _project_nonincreasing(w)
    total = w.sum()
    if total <= 0:
        raise CalibrationError("regression collapsed to all-zero weights")
    w = w / total
    if not (w[0] > w[1] > w[2]):
        w = w + np.array([2.0, 1.0, 0.0]) * _ORDER_EPS
        w = w / w.sum()
    return Weights(float(w[0]), float(w[1]), float(w[2]))


def _f1(scored: Sequence[tuple[float, bool]], theta: float) -> float:
    tp = sum(1 for s, label in scored if label and s >= theta)
    fp = sum(1 for s, label in scored if not label and s >= theta)
    fn = sum(1 for s, label in scored if label and s < theta)
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def threshold_candidates(scores: Iterable[float]) -> list[float]:
    """Candidate thresholds: midpoints of consecutive distinct scores plus {0, 1}."""
    distinct = sorted(set(scores))
    mids = [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    return sorted(set([0.0, 1.0] + mids))


def calibrate_threshold(scored: Sequence[tuple[float, bool]]) -> Threshold:
    """Pick the acceptance threshold maximizing F1 of "accept iff S >= theta".

    Ties are broken toward the smallest threshold.
    """
    if not any(label for _, label in scored):
        raise CalibrationError("threshold calibration needs at least one positive label")
    best_theta, best_f1 = 0.0, -1.0
    for theta in threshold_candidates(s for s, _ in scored):
        f1 = _f1(scored, theta)
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return Threshold(best_theta)


def curate_batch(
    items: Sequence[tuple[object, DimScores]],
    weights: Weights,
    threshold: Threshold,
) -> tuple[list[object], list[object]]:
    """Partition items into (accepted, rejected) ids by S >= theta, order kept."""
    accepted: list[object] = []
    rejected: list[object] = []
    for item_id, scores in items:
        if aggregate_score(scores, weights) >= threshold.theta:
            accepted.append(item_id)
        else:
            rejected.append(item_id)
    return accepted, rejected


def read_samples_csv(path, target: str) -> list[tuple[str, CurationSample]]:
    """Read calibration samples from a CSV with header id,s1,s2,s3,target.

    ``target`` selects how the last column is interpreted: "pref" for a
    preference score in [0, 1], "label" for a 0/1 acceptance label.
    """
    if target not in ("pref", "label"):
        raise ValidationError(f"target must be 'pref' or 'label', got {target!r}")
    rows: list[tuple[str, CurationSample]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "s1", "s2", "s3", "target"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"CSV must have columns {sorted(required)}")
        for row in reader:
            scores = DimScores(float(row["s1"]), float(row["s2"]), float(row["s3"]))
            if target == "pref":
                sample = CurationSample(scores, human_pref=float(row["target"]))
            else:
                sample = CurationSample(scores, accept_label=bool(int(row["target"])))
            rows.append((row["id"], sample))
    return rows


def save_params(path, weights: Weights, threshold: Threshold) -> None:
    doc = {
        "w1": weights.w1,
        "w2": weights.w2,
        "w3": weights.w3,
        "theta": threshold.theta,
        "version": PARAMS_VERSION,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_params(path) -> tuple[Weights, Threshold]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != PARAMS_VERSION:
        raise ValidationError(f"unsupported parameter version {doc.get('version')!r}")
    return (
        Weights(float(doc["w1"]), float(doc["w2"]), float(doc["w3"])),
        Threshold(float(doc["theta"])),
    )
