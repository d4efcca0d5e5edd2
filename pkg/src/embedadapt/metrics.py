"""Cosine scoring and operating-point calibration at a target false-match rate.

The decision rule throughout is accept <=> score >= threshold (ties accept).
Calibration is empirical (plug-in), with no interpolation between observed
scores, so an exhaustive scan over candidate thresholds reproduces it exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, DegenerateInputError, ValidationError
from .store import EmbeddingSet

logger = logging.getLogger(__name__)

# Offset above the largest impostor score used as the zero-false-match
# candidate; safe for cosine scores, which are bounded by 1.
SENTINEL_MARGIN = 1e-6

COSINE_SLACK = 1e-6


@dataclass(frozen=True)
class ScoreSet:
    """Genuine and impostor similarity scores from a 1:1 comparison protocol."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        for name, arr in (("genuine", genuine), ("impostor", impostor)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} scores contain non-finite values")
        object.__setattr__(self, "genuine", genuine)
        object.__setattr__(self, "impostor", impostor)


@dataclass(frozen=True)
class OperatingPoint:
    """A calibrated verification threshold and the rates achieved at it.

    ``threshold`` is the smallest candidate (sorted distinct impostor scores
    plus a sentinel above the maximum) whose empirical FMR does not exceed
    ``target_fmr``; consequently ``achieved_fmr <= target_fmr`` always holds.
    """

    target_fmr: float
    threshold: float
    achieved_fmr: float
    tmr: float
    n_genuine: int = 0
    n_impostor: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_fmr < 1.0):
            raise ValidationError(f"target_fmr must be in (0, 1), got {self.target_fmr}")
        if self.achieved_fmr > self.target_fmr:
            raise ValidationError("achieved_fmr exceeds target_fmr")

    def to_dict(self) -> dict:
        return {
            "target_fmr": self.target_fmr,
            "threshold": self.threshold,
            "achieved_fmr": self.achieved_fmr,
            "tmr": self.tmr,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OperatingPoint":
        return cls(
            target_fmr=float(data["target_fmr"]),
            threshold=float(data["threshold"]),
            achieved_fmr=float(data["achieved_fmr"]),
            tmr=float(data["tmr"]),
            n_genuine=int(data.get("n_genuine", 0)),
            n_impostor=int(data.get("n_impostor", 0)),
        )


def cosine(u, v) -> float:
    """Cosine similarity u.v / (|u||v|), accumulated in float64."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine undefined for zero vector")
    return float(np.dot(u, v) / (nu * nv))


def build_scores(probes: EmbeddingSet, gallery: EmbeddingSet) -> ScoreSet:
    """Cosine scores for every (probe, gallery) cross pair.

    Pairs whose (subject_id, sample_id) keys are identical are excluded as
    self-comparisons; the rest are genuine when the subject ids match and
    impostor otherwise.
    """
    if probes.dim != gallery.dim:
        raise ValidationError(
            f"dimension mismatch: probes {probes.dim} vs gallery {gallery.dim}"
        )
    if len(probes) == 0 or len(gallery) == 0:
        raise ValidationError("probes and gallery must both be non-empty")

    p = probes.matrix().astype(np.float64)
    g = gallery.matrix().astype(np.float64)
    p_norm = np.linalg.norm(p, axis=1)
    g_norm = np.linalg.norm(g, axis=1)
    for name, norms, es in (("probe", p_norm, probes), ("gallery", g_norm, gallery)):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            key = es.records[int(zero[0])].key
            raise DegenerateInputError(f"zero {name} vector at key {key!r}")

    scores = (p / p_norm[:, None]) @ (g / g_norm[:, None]).T
    if scores.size and float(np.max(np.abs(scores))) > 1.0 + COSINE_SLACK:
        raise ValidationError("cosine scores escaped [-1, 1] beyond slack")

    p_subjects = np.array([r.subject_id for r in probes.records])
    g_subjects = np.array([r.subject_id for r in gallery.records])
    same_subject = p_subjects[:, None] == g_subjects[None, :]

    p_keys = np.array([f"{r.subject_id}\x00{r.sample_id}" for r in probes.records])
    g_keys = np.array([f"{r.subject_id}\x00{r.sample_id}" for r in gallery.records])
    self_pair = p_keys[:, None] == g_keys[None, :]

    keep = ~self_pair
    return ScoreSet(
        genuine=scores[keep & same_subject],
        impostor=scores[keep & ~same_subject],
    )


def calibrate_threshold(scores: ScoreSet, target_fmr: float) -> OperatingPoint:
    """Pick the smallest threshold whose empirical FMR meets the target.

    Candidates are the sorted distinct impostor scores plus
    ``max(impostor) + 1e-6`` (the zero-false-match regime). FMR at a
    candidate t is |{s in impostor : s >= t}| / |impostor|. The returned
    threshold is the smallest candidate with FMR <= target_fmr, which makes
    it unique and exactly reproducible by brute-force scan.
    """
    if not (0.0 < target_fmr < 1.0):
        raise ValidationError(f"target_fmr must be in (0, 1), got {target_fmr}")
    impostor = scores.impostor
    if impostor.size == 0:
        raise CalibrationError("cannot calibrate with no impostor scores")

    sorted_imp = np.sort(impostor)
    n = sorted_imp.size
    candidates = np.unique(sorted_imp)
    candidates = np.append(candidates, sorted_imp[-1] + SENTINEL_MARGIN)
    # scores >= candidate = everything from the first index not below it
    counts = n - np.searchsorted(sorted_imp, candidates, side="left")
    fmr = counts / n
    # fmr is non-increasing over candidates and ends at 0, so a feasible
    # candidate always exists; argmax finds the first True.
    idx = int(np.argmax(fmr <= target_fmr))
    threshold = float(candidates[idx])
    achieved = float(fmr[idx])

    if scores.genuine.size == 0:
        logger.warning("calibrating with no genuine scores; reporting tmr=0")
        tmr = 0.0
    else:
        tmr = float(np.mean(scores.genuine >= threshold))
    return OperatingPoint(
        target_fmr=float(target_fmr),
        threshold=threshold,
        achieved_fmr=achieved,
        tmr=tmr,
        n_genuine=int(scores.genuine.size),
        n_impostor=n,
    )


def tmr_at(scores: ScoreSet, threshold: float) -> float:
    """Fraction of genuine scores at or above the threshold."""
    if scores.genuine.size == 0:
        raise ValidationError("tmr undefined with no genuine scores")
    return float(np.mean(scores.genuine >= threshold))


def write_scores_csv(scores: ScoreSet, path) -> None:
    """Export scores for external ROC tooling (columns: label,score)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "score"])
        for s in scores.genuine:
            writer.writerow(["genuine", repr(float(s))])
        for s in scores.impostor:
            writer.writerow(["impostor", repr(float(s))])


def read_scores_csv(path) -> ScoreSet:
    """Read a label,score CSV written by :func:`write_scores_csv`."""
    genuine: list[float] = []
    impostor: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "score"]:
            raise ValidationError(f"{path}: expected header label,score")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or row[0] not in ("genuine", "impostor"):
                raise ValidationError(f"{path}:{lineno}: malformed score row")
            try:
                value = float(row[1])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric score") from None
            (genuine if row[0] == "genuine" else impostor).append(value)
    return ScoreSet(genuine=np.asarray(genuine), impostor=np.asarray(impostor))
