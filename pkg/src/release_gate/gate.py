"""Release-gate decision: score the candidate together with the history and pick a verdict."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dataset import FEATURES, Flag, ReleaseDataset, ReleaseRecord
from .detectors import (
    DETECTORS,
    DetectorConfig,
    FeatureMatrix,
    StandardizationParams,
    classify,
    contamination_threshold,
    score_all,
    standardize,
)
from .errors import ConfigError, DatasetError, NoVarianceError


class Verdict(str, enum.Enum):
    PASS = "pass"
    REVIEW = "review"
    ANOMALY = "anomaly"
    INSUFFICIENT_HISTORY = "insufficient_history"

    @property
    def flag(self) -> Flag:
        return _VERDICT_FLAGS[self]


_VERDICT_FLAGS = {
    Verdict.PASS: Flag.OK,
    Verdict.REVIEW: Flag.REVIEW,
    Verdict.ANOMALY: Flag.ANOMALY,
    Verdict.INSUFFICIENT_HISTORY: Flag.UNSET,
}


@dataclass(frozen=True)
class GateConfig:
    """Gate policy.

    Attributes:
        warmup_releases: Releases stored unchecked before detection starts.
        detector_config: Hyperparameters shared by all detectors.
        ensemble_mode: ``lof_only`` or ``majority_vote``.
        ensemble_quorum: Detectors that must flag the candidate under ``majority_vote``.
    """

    warmup_releases: int = 10
    detector_config: DetectorConfig = field(default_factory=DetectorConfig)
    ensemble_mode: str = "lof_only"
    ensemble_quorum: int = 3

    def __post_init__(self) -> None:
        if self.warmup_releases < 1:
            raise ConfigError("warmup_releases must be positive")
        if self.ensemble_mode not in ("lof_only", "majority_vote"):
            raise ConfigError(f"unknown ensemble_mode {self.ensemble_mode!r}")
        if not 1 <= self.ensemble_quorum <= len(DETECTORS):
            raise ConfigError(f"ensemble_quorum must lie in [1, {len(DETECTORS)}]")


@dataclass(frozen=True)
class ExplanationItem:
    feature: str
    z_value: float
    rank: int


@dataclass(frozen=True)
class GateDecision:
    verdict: Verdict
    candidate_id: int
    history_size: int
    per_detector_scores: dict[str, float] = field(default_factory=dict)
    lof_score: float | None = None
    explanation: tuple[ExplanationItem, ...] = ()
    reason: str | None = None
    votes: dict[str, bool] = field(default_factory=dict)
    candidate: ReleaseRecord | None = None

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "candidate_id": self.candidate_id,
            "history_size": self.history_size,
            "lof_score": self.lof_score,
            "per_detector_scores": dict(self.per_detector_scores),
            "votes": dict(self.votes),
            "explanation": [
                {"feature": e.feature, "z_value": e.z_value, "rank": e.rank}
                for e in self.explanation
            ],
            "reason": self.reason,
            "flag": self.verdict.flag.name.lower(),
        }


def build_matrix(records) -> FeatureMatrix:
    records = list(records)
    return FeatureMatrix(
        np.array([r.features for r in records], dtype=float),
        tuple(r.id for r in records),
        FEATURES,
    )


def explain(
    matrix: FeatureMatrix, params: StandardizationParams, candidate_row: int
) -> tuple[ExplanationItem, ...]:
    """Rank the kept features by the candidate's absolute z-value (ties by column index)."""
    if not 0 <= candidate_row < matrix.n:
        raise IndexError(f"candidate_row {candidate_row} outside [0, {matrix.n - 1}]")
    z = params.transform(matrix.values[candidate_row])[0]
    kept = params.kept_features
    order = sorted(range(len(kept)), key=lambda i: (-abs(z[i]), kept[i]))
    return tuple(
        ExplanationItem(matrix.feature_names[kept[i]], float(z[i]), rank)
        for rank, i in enumerate(order, start=1)
    )


def gate_check(
    history: ReleaseDataset, candidate: ReleaseRecord, config: GateConfig | None = None
) -> GateDecision:
    """Decide whether ``candidate`` may be released, fitting on history plus candidate."""
    config = config or GateConfig()
    if history.last is not None and candidate.id <= history.last.id:
        raise DatasetError(
            f"candidate id {candidate.id} must exceed last history id {history.last.id}"
        )
    n_hist = len(history)

    def decided(verdict: Verdict, **kwargs) -> GateDecision:
        return GateDecision(
            verdict=verdict,
            candidate_id=candidate.id,
            history_size=n_hist,
            candidate=candidate.with_flag(verdict.flag),
            **kwargs,
        )

    if n_hist < config.warmup_releases:
        return decided(
            Verdict.INSUFFICIENT_HISTORY,
            reason=f"{n_hist} of {config.warmup_releases} warm-up releases collected",
        )
    if not any(candidate.features):
        return decided(Verdict.REVIEW, reason="no activity")

    matrix = build_matrix(list(history) + [candidate])
    row = matrix.n - 1
    try:
        _, params = standardize(matrix)
    except NoVarianceError:
        return decided(Verdict.REVIEW, reason="degenerate history")

    dcfg = config.detector_config
    detectors = ("lof",) if config.ensemble_mode == "lof_only" else DETECTORS
    scores = score_all(matrix, dcfg, detectors)
    candidate_scores = {name: float(sv.scores[row]) for name, sv in scores.items()}
    lof_score = candidate_scores["lof"]
    lof_verdict = classify([lof_score], dcfg)[0]

    votes: dict[str, bool] = {}
    if config.ensemble_mode == "lof_only":
        verdict = {"anomaly": Verdict.ANOMALY, "review": Verdict.REVIEW}.get(
            lof_verdict, Verdict.PASS
        )
        reason = f"LOF {lof_score:.3f} classified {lof_verdict}"
    else:
        for name, sv in scores.items():
            if name == "lof":
                votes[name] = lof_verdict == "anomaly"
            else:
                cut = contamination_threshold(sv, dcfg.contamination)
                votes[name] = bool(sv.scores[row] > cut)
        n_votes = sum(votes.values())
        if n_votes >= config.ensemble_quorum:
            verdict = Verdict.ANOMALY
        elif lof_verdict != "ok":
            verdict = Verdict.REVIEW
        else:
            verdict = Verdict.PASS
        reason = f"{n_votes} of {len(votes)} detectors flag the candidate (quorum {config.ensemble_quorum})"

    return decided(
        verdict,
        per_detector_scores=candidate_scores,
        lof_score=lof_score,
        explanation=explain(matrix, params, row),
        reason=reason,
        votes=votes,
    )
