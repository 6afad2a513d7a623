"""
Scoring judges against a fitted variance model.

A marking score expresses one judging error in units of the discipline's
intrinsic variability at that quality level; a judge's overall marking score
is the root mean square of those markings.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import pandas as pd

from .errors import ModelMismatchError
from .variance_fit import JudgingError, VarianceModel, evaluate_sigma_flagged

logger = logging.getLogger(__name__)

DEFAULT_FLAG_MULTIPLIER = 2.0
DEFAULT_MIN_EVALUATIONS = 20
FLAG_REASON = 'outlier-vs-median'
POOLED = '*'


@dataclass(frozen=True)
class EvaluationScore:
    competition_id: str
    discipline_id: str
    performance_id: str
    judge_id: str
    control_score: float
    error: float
    sigma_hat: float
    marking: float
    clamped: bool = False
    flagged: bool = False
    threshold: Optional[float] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class JudgeProfile:
    judge_id: str
    discipline_id: str
    evaluation_count: int
    overall_marking: float
    flagged_count: int = 0
    disciplines: FrozenSet[str] = frozenset()
    low_confidence: bool = False

    @property
    def confidence(self) -> str:
        return 'low' if self.low_confidence else 'ok'


def marking_scores(errors: Sequence[JudgingError], model: VarianceModel) -> List[EvaluationScore]:
    """
    Scale each judging error by sigma_hat at its control score.

    Raises:
        ModelMismatchError: If an error belongs to another discipline than the model
    """
    scores = []
    for e in errors:
        _check_discipline(model, e.discipline_id)
        sigma = evaluate_sigma_flagged(model, e.control_score)
        error = float(e.error)
        scores.append(EvaluationScore(
            competition_id=e.competition_id,
            discipline_id=e.discipline_id,
            performance_id=e.performance_id,
            judge_id=e.judge_id,
            control_score=float(e.control_score),
            error=error,
            sigma_hat=sigma.value,
            marking=error / sigma.value,
            clamped=sigma.clamped,
        ))
    return scores


def _check_discipline(model: VarianceModel, discipline_id: str) -> None:
    if model.discipline_id is not None and model.discipline_id != discipline_id:
        raise ModelMismatchError(
            f"model for '{model.discipline_id}' applied to discipline '{discipline_id}'")


def overall_marking(scores: Sequence[EvaluationScore]) -> float:
    """Root mean square of the markings (0 for a perfect judge)."""
    if not scores:
        raise ValueError("overall marking score needs at least one evaluation")
    return math.sqrt(math.fsum(s.marking ** 2 for s in scores) / len(scores))


def build_profile(judge_id: str, scores: Sequence[EvaluationScore], discipline_id: str,
                  min_evaluations: int = DEFAULT_MIN_EVALUATIONS) -> JudgeProfile:
    profile = JudgeProfile(
        judge_id=judge_id,
        discipline_id=discipline_id,
        evaluation_count=len(scores),
        overall_marking=overall_marking(scores),
        flagged_count=sum(1 for s in scores if s.flagged),
        disciplines=frozenset(s.discipline_id for s in scores),
        low_confidence=len(scores) < min_evaluations,
    )
    if profile.low_confidence:
        logger.info("Judge %s in %s has only %d evaluation(s); profile tagged low-confidence",
                    judge_id, discipline_id, len(scores))
    return profile


def flag_outliers(scores: Sequence[EvaluationScore], profile: JudgeProfile,
                  model: VarianceModel,
                  multiplier: float = DEFAULT_FLAG_MULTIPLIER
                  ) -> Tuple[List[EvaluationScore], JudgeProfile]:
    """
    Flag the judge's evaluations whose error exceeds multiplier * sigma_hat * M_j.

    A flag means the mark is out of consensus with the panel median, not that
    the judge cheated.

    Returns:
        Tuple of the updated scores and the profile with its flag count
    """
    if multiplier <= 0:
        raise ValueError("flag multiplier must be positive")
    m_j = profile.overall_marking
    if m_j == 0:
        logger.warning("Judge %s in %s has a zero marking score; no evaluation can be flagged",
                       profile.judge_id, profile.discipline_id)
    updated = []
    for s in scores:
        _check_discipline(model, s.discipline_id)
        threshold = multiplier * s.sigma_hat * m_j
        flagged = abs(s.error) > threshold
        updated.append(replace(s, flagged=flagged, threshold=threshold,
                               reason=FLAG_REASON if flagged else None))
    flagged_count = sum(1 for s in updated if s.flagged)
    return updated, replace(profile, flagged_count=flagged_count)


class Ranking(NamedTuple):
    confident: List[JudgeProfile]
    low_confidence: List[JudgeProfile]

    @property
    def ordered(self) -> List[JudgeProfile]:
        return self.confident + self.low_confidence


def rank_judges(profiles: Iterable[JudgeProfile]) -> Ranking:
    """Worst judges first; low-confidence profiles trail in their own section."""
    def key(p: JudgeProfile):
        return (-p.overall_marking, -p.evaluation_count, p.judge_id)

    profiles = list(profiles)
    return Ranking(
        confident=sorted((p for p in profiles if not p.low_confidence), key=key),
        low_confidence=sorted((p for p in profiles if p.low_confidence), key=key),
    )


def in_scope(scores: Iterable[EvaluationScore],
             competitions: Optional[Iterable[str]] = None) -> List[EvaluationScore]:
    """Restrict scores to some competitions; None keeps the longitudinal view."""
    if competitions is None:
        return list(scores)
    wanted = set(competitions)
    return [s for s in scores if s.competition_id in wanted]


@dataclass(frozen=True)
class DisciplineScores:
    discipline_id: str
    scores: Tuple[EvaluationScore, ...]
    profiles: Tuple[JudgeProfile, ...]

    @property
    def flagged(self) -> List[EvaluationScore]:
        return [s for s in self.scores if s.flagged]


def score_discipline(errors: Sequence[JudgingError], model: VarianceModel,
                     min_evaluations: int = DEFAULT_MIN_EVALUATIONS,
                     multiplier: float = DEFAULT_FLAG_MULTIPLIER,
                     competitions: Optional[Iterable[str]] = None) -> DisciplineScores:
    """Marking scores, profiles and flags for every judge of one discipline."""
    scores = in_scope(marking_scores(errors, model), competitions)
    by_judge: Dict[str, List[EvaluationScore]] = defaultdict(list)
    for s in scores:
        by_judge[s.judge_id].append(s)

    discipline_id = model.discipline_id or (errors[0].discipline_id if errors else '')
    all_scores: List[EvaluationScore] = []
    profiles: List[JudgeProfile] = []
    for judge_id in sorted(by_judge):
        judge_scores = by_judge[judge_id]
        profile = build_profile(judge_id, judge_scores, discipline_id, min_evaluations)
        judge_scores, profile = flag_outliers(judge_scores, profile, model, multiplier)
        all_scores.extend(judge_scores)
        profiles.append(profile)
    all_scores.sort(key=lambda s: (s.performance_id, s.judge_id))
    return DisciplineScores(discipline_id, tuple(all_scores), tuple(profiles))


def pooled_profiles(results: Iterable[DisciplineScores],
                    min_evaluations: int = DEFAULT_MIN_EVALUATIONS) -> List[JudgeProfile]:
    """One profile per judge over all disciplines, from normalized markings."""
    by_judge: Dict[str, List[EvaluationScore]] = defaultdict(list)
    for result in results:
        for s in result.scores:
            by_judge[s.judge_id].append(s)
    return [build_profile(j, by_judge[j], POOLED, min_evaluations) for j in sorted(by_judge)]


def summarize(results: Sequence[DisciplineScores]) -> pd.DataFrame:
    """Per-discipline judge count, mean marking score and flag rate."""
    rows = []
    for result in results:
        rows.append({
            'discipline_id': result.discipline_id,
            'judge_count': len(result.profiles),
            'evaluations': len(result.scores),
            'mean_marking': (sum(p.overall_marking for p in result.profiles) / len(result.profiles)
                             if result.profiles else float('nan')),
            'flagged': len(result.flagged),
        })
    frame = pd.DataFrame(rows, columns=['discipline_id', 'judge_count', 'evaluations',
                                        'mean_marking', 'flagged'])
    frame['flag_rate'] = frame['flagged'] / frame['evaluations'].where(frame['evaluations'] > 0)
    return frame


def judge_report_rows(profiles: Iterable[JudgeProfile]) -> List[Dict[str, object]]:
    """Rows of the judge report, in report column order."""
    return [{
        'judge_id': p.judge_id,
        'discipline_id': p.discipline_id,
        'evaluation_count': p.evaluation_count,
        'overall_marking': p.overall_marking,
        'flagged_count': p.flagged_count,
        'confidence': p.confidence,
    } for p in profiles]


def flag_report_rows(scores: Iterable[EvaluationScore]) -> List[Dict[str, object]]:
    """Rows of the flag report, one per flagged evaluation."""
    return [{
        'judge_id': s.judge_id,
        'discipline_id': s.discipline_id,
        'competition_id': s.competition_id,
        'performance_id': s.performance_id,
        'error': s.error,
        'sigma_hat': s.sigma_hat,
        'threshold': s.threshold,
        'reason': s.reason,
    } for s in scores if s.flagged]
