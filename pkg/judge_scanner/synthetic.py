"""
Synthetic judged competitions with known ground truth.

Every performance draws from its own counter-seeded generator
(``SeedSequence(seed, spawn_key=(index,))``) in a fixed order: quality, cheat
selection, judge noise. A dataset therefore does not depend on how the
performances are scheduled, and the truth behind it can be replayed from the
scenario alone.
"""

import functools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import yaml

from .control_score import median_control_score
from .errors import FitError, ScenarioError
from .judge_metrics import (
    DEFAULT_FLAG_MULTIPLIER, DEFAULT_MIN_EVALUATIONS, rank_judges, score_discipline,
)
from .records import Dataset, MarkRecord, PerformanceGroup, Provenance, Scale
from .variance_fit import (
    BinningPolicy, ModelKind, Shape, bin_errors, classify_shape, extract_errors, fit_model,
)

logger = logging.getLogger(__name__)

MAX_CLAMPED_FRACTION = 0.01
SEED_LIMIT = 2 ** 64


class ArchetypeKind(str, Enum):
    HONEST = 'honest'
    ERRATIC = 'erratic'
    BIASED = 'biased'
    CHEATER = 'cheater'


@dataclass(frozen=True)
class JudgeArchetype:
    """Behaviour of one synthetic judge.

    A cheater adds ``boost`` to the performances it selects, each performance
    being selected with probability ``cheat_rate``.
    """

    kind: ArchetypeKind = ArchetypeKind.HONEST
    noise_multiplier: float = 1.0
    bias_offset: float = 0.0
    boost: float = 0.0
    cheat_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', ArchetypeKind(self.kind))
        if self.noise_multiplier < 0:
            raise ScenarioError("noise_multiplier must be non-negative")
        if not 0 <= self.cheat_rate <= 1:
            raise ScenarioError("cheat rate must lie in [0, 1]")
        if self.kind is ArchetypeKind.HONEST and (
                self.noise_multiplier != 1 or self.bias_offset != 0 or self.cheat_rate or self.boost):
            raise ScenarioError("honest judges have multiplier 1, no offset and no cheating")
        if self.kind is ArchetypeKind.CHEATER:
            if self.cheat_rate <= 0 or self.boost == 0:
                raise ScenarioError("cheaters need a positive rate and a non-zero boost")
        elif self.cheat_rate or self.boost:
            raise ScenarioError(f"{self.kind.value} judges cannot carry a cheat boost")

    @classmethod
    def honest(cls) -> 'JudgeArchetype':
        return cls(ArchetypeKind.HONEST)

    @classmethod
    def erratic(cls, noise_multiplier: float) -> 'JudgeArchetype':
        return cls(ArchetypeKind.ERRATIC, noise_multiplier=noise_multiplier)

    @classmethod
    def biased(cls, bias_offset: float, noise_multiplier: float = 1.0) -> 'JudgeArchetype':
        return cls(ArchetypeKind.BIASED, noise_multiplier=noise_multiplier, bias_offset=bias_offset)

    @classmethod
    def cheater(cls, boost: float, rate: float, noise_multiplier: float = 1.0) -> 'JudgeArchetype':
        return cls(ArchetypeKind.CHEATER, noise_multiplier=noise_multiplier,
                   boost=boost, cheat_rate=rate)


@dataclass(frozen=True)
class SigmaCurve:
    """True judging-error standard deviation as a function of quality."""

    kind: ModelKind
    coefficients: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'kind', ModelKind(self.kind))
        coefficients = tuple(float(x) for x in self.coefficients)
        expected = 3 if self.kind is ModelKind.QUADRATIC else 2
        if len(coefficients) != expected:
            raise ScenarioError(f"{self.kind.value} true_sigma needs {expected} coefficients")
        object.__setattr__(self, 'coefficients', coefficients)

    def __call__(self, q):
        if self.kind is ModelKind.QUADRATIC:
            a0, a1, a2 = self.coefficients
            return a0 + a1 * q + a2 * q * q
        alpha, beta = self.coefficients
        return alpha * np.exp(beta * q)

    def minimum_on(self, lo: float, hi: float) -> float:
        candidates = [lo, hi]
        if self.kind is ModelKind.QUADRATIC and self.coefficients[2] != 0:
            vertex = -self.coefficients[1] / (2 * self.coefficients[2])
            if lo < vertex < hi:
                candidates.append(vertex)
        return float(min(self(x) for x in candidates))

    def scaled(self, factor: float) -> Tuple[float, ...]:
        """Coefficients of factor * sigma(q)."""
        if self.kind is ModelKind.QUADRATIC:
            return tuple(factor * a for a in self.coefficients)
        alpha, beta = self.coefficients
        return (factor * alpha, beta)


class QualityKind(str, Enum):
    UNIFORM = 'uniform'
    BETA = 'beta'


@dataclass(frozen=True)
class QualityDistribution:
    """Distribution of true performance quality.

    ``uniform`` covers the range evenly, like diving or trampoline fields with
    many aborted routines; ``beta`` with a > b is right-skewed toward the top
    of the range, like gymnastics where low marks are rare.
    """

    kind: QualityKind = QualityKind.UNIFORM
    low: float = 0.0
    high: float = 10.0
    a: float = 5.0
    b: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', QualityKind(self.kind))
        if not self.low < self.high:
            raise ScenarioError("quality low must be below quality high")
        if self.kind is QualityKind.BETA and (self.a <= 0 or self.b <= 0):
            raise ScenarioError("beta quality parameters must be positive")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind is QualityKind.UNIFORM:
            return float(rng.uniform(self.low, self.high))
        return float(self.low + (self.high - self.low) * rng.beta(self.a, self.b))


@dataclass(frozen=True)
class ScenarioSpec:
    """Configuration of one synthetic discipline."""

    true_sigma: SigmaCurve
    quality: QualityDistribution
    panel_size: int
    scale: Scale
    n_performances: int
    archetypes: Tuple[JudgeArchetype, ...] = ()
    seed: int = 0
    discipline_id: str = 'synthetic'
    competition_id: str = 'SIM'

    def __post_init__(self):
        if not 3 <= self.panel_size <= 9:
            raise ScenarioError("panel_size must lie between 3 and 9")
        if self.n_performances < 1:
            raise ScenarioError("n_performances must be positive")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        archetypes = tuple(self.archetypes)
        if len(archetypes) > self.panel_size:
            raise ScenarioError(f"{len(archetypes)} archetypes for a panel of {self.panel_size}")
        archetypes += (JudgeArchetype.honest(),) * (self.panel_size - len(archetypes))
        object.__setattr__(self, 'archetypes', archetypes)

        lo, hi = float(self.scale.min_mark), float(self.scale.max_mark)
        if self.quality.low < lo or self.quality.high > hi:
            raise ScenarioError("quality distribution must lie within the scale")
        if self.true_sigma.minimum_on(self.quality.low, self.quality.high) <= 0:
            raise ScenarioError("true_sigma must be positive on the quality support")

    @property
    def judge_ids(self) -> List[str]:
        return [f"J{j + 1:02d}" for j in range(self.panel_size)]

    @functools.cached_property
    def judge_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Noise multipliers, offsets, boosts and cheat rates in panel order."""
        return (np.array([a.noise_multiplier for a in self.archetypes], dtype=float),
                np.array([a.bias_offset for a in self.archetypes], dtype=float),
                np.array([a.boost for a in self.archetypes], dtype=float),
                np.array([a.cheat_rate for a in self.archetypes], dtype=float))

    def performance_id(self, index: int) -> str:
        width = max(5, len(str(self.n_performances)))
        return f"P{index + 1:0{width}d}"


@dataclass(frozen=True)
class PanelDraw:
    """Everything drawn for one performance."""

    quality: float
    grid_index: np.ndarray
    boosted: np.ndarray
    clamped: np.ndarray


def _performance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def draw_panel(spec: ScenarioSpec, index: int) -> PanelDraw:
    """Draw quality, cheat selection and marks of performance ``index``."""
    rng = _performance_rng(spec.seed, index)
    q = spec.quality.sample(rng)
    cheat_u = rng.random(spec.panel_size)
    noise = rng.standard_normal(spec.panel_size)

    multipliers, offsets, boosts, rates = spec.judge_arrays

    boosted = cheat_u < rates
    raw = q + offsets + multipliers * float(spec.true_sigma(q)) * noise + np.where(boosted, boosts, 0.0)
    step = float(spec.scale.step)
    k = np.rint((raw - float(spec.scale.min_mark)) / step)
    clamped = (k < 0) | (k > spec.scale.n_steps)
    k = np.clip(k, 0, spec.scale.n_steps).astype(int)
    return PanelDraw(q, k, boosted, clamped)


def generate(spec: ScenarioSpec) -> Dataset:
    """
    Generate the synthetic dataset described by a scenario.

    Each mark is q + offset + multiplier * N(0, sigma(q)) [+ boost], rounded to
    the scale grid and clamped to its bounds.
    """
    grid = [spec.scale.grid_value(k) for k in range(spec.scale.n_steps + 1)]
    judge_ids = spec.judge_ids
    groups = []
    clamped = 0
    for index in range(spec.n_performances):
        draw = draw_panel(spec, index)
        clamped += int(draw.clamped.sum())
        performance_id = spec.performance_id(index)
        marks = tuple(
            MarkRecord(spec.competition_id, spec.discipline_id, performance_id,
                       judge_id, grid[k], spec.scale)
            for judge_id, k in zip(judge_ids, draw.grid_index)
        )
        groups.append(PerformanceGroup(
            performance_id=performance_id,
            discipline_id=spec.discipline_id,
            marks=marks,
            control_score=median_control_score(m.mark for m in marks),
        ))

    total = spec.n_performances * spec.panel_size
    fraction = clamped / total
    logger.info("Generated %d performances (%d marks) for %s, seed %d; clamped draws %.3f%%",
                spec.n_performances, total, spec.discipline_id, spec.seed, 100 * fraction)
    if fraction > MAX_CLAMPED_FRACTION:
        logger.warning("%.2f%% of draws were clamped to the scale bounds; tail variance is distorted",
                       100 * fraction)
    return Dataset({spec.discipline_id: groups},
                   Provenance(((f"synthetic:seed={spec.seed}", total),)))


@functools.lru_cache(maxsize=None)
def consensus_factor(panel_size: int, draws: int = 200_000, seed: int = 0) -> float:
    """
    Standard deviation of x - median(x) for a standard normal panel.

    Measuring errors against the panel median instead of the true quality
    shrinks their spread by this factor.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((draws, panel_size))
    deviations = x - np.median(x, axis=1, keepdims=True)
    return float(np.std(deviations.ravel(), ddof=1))


def expected_sigma_factor(spec: ScenarioSpec) -> float:
    """Factor between the true curve and the spread observed against the median.

    Panels sharing one multiplier with no offsets or boosts scale by that
    multiplier; mixed panels are compared against the honest reference.
    """
    multipliers = {a.noise_multiplier for a in spec.archetypes}
    plain = all(a.bias_offset == 0 and a.kind is not ArchetypeKind.CHEATER for a in spec.archetypes)
    multiplier = multipliers.pop() if len(multipliers) == 1 and plain else 1.0
    if multiplier == 0:
        return 0.0
    return multiplier * consensus_factor(spec.panel_size)


def _relative_error(fitted: float, expected: float) -> float:
    if expected == 0:
        return abs(fitted - expected)
    return abs(fitted - expected) / abs(expected)


@dataclass
class Scorecard:
    """How well the pipeline recovers a scenario's ground truth."""

    discipline_id: str
    seed: int
    n_performances: int
    panel_size: int
    model_kind: str
    fitted_coefficients: List[float]
    true_coefficients: List[float]
    expected_coefficients: List[float]
    consensus_factor: float
    recovery_errors: List[float]
    raw_recovery_errors: List[float]
    expected_shape: str
    fitted_shape: str
    r2_weighted: Optional[float]
    rmsd_weighted: float
    clamped_fraction: float
    judges: List[Dict[str, Any]] = field(default_factory=list)
    boosted_evaluations: int = 0
    flagged_evaluations: int = 0
    flag_precision: Optional[float] = None
    flag_recall: Optional[float] = None
    fit_error: Optional[str] = None

    @property
    def max_recovery_error(self) -> Optional[float]:
        return max(self.recovery_errors) if self.recovery_errors else None

    @property
    def shape_correct(self) -> bool:
        return self.expected_shape == self.fitted_shape

    def rank_of(self, judge_id: str) -> int:
        for judge in self.judges:
            if judge['judge_id'] == judge_id:
                return judge['rank']
        raise KeyError(judge_id)

    def to_document(self) -> Dict[str, Any]:
        return {
            'discipline_id': self.discipline_id,
            'seed': self.seed,
            'n_performances': self.n_performances,
            'panel_size': self.panel_size,
            'model_kind': self.model_kind,
            'fitted_coefficients': self.fitted_coefficients,
            'true_coefficients': self.true_coefficients,
            'expected_coefficients': self.expected_coefficients,
            'consensus_factor': self.consensus_factor,
            'recovery_errors': self.recovery_errors,
            'raw_recovery_errors': self.raw_recovery_errors,
            'max_recovery_error': self.max_recovery_error,
            'expected_shape': self.expected_shape,
            'fitted_shape': self.fitted_shape,
            'shape_correct': self.shape_correct,
            'r2_weighted': self.r2_weighted,
            'rmsd_weighted': self.rmsd_weighted,
            'clamped_fraction': self.clamped_fraction,
            'judges': self.judges,
            'boosted_evaluations': self.boosted_evaluations,
            'flagged_evaluations': self.flagged_evaluations,
            'flag_precision': self.flag_precision,
            'flag_recall': self.flag_recall,
            'fit_error': self.fit_error,
        }


def evaluate_scenario(dataset: Dataset, truth: ScenarioSpec,
                      policy: BinningPolicy = BinningPolicy(),
                      multiplier: float = DEFAULT_FLAG_MULTIPLIER,
                      min_evaluations: int = DEFAULT_MIN_EVALUATIONS) -> Scorecard:
    """
    Run the full pipeline on a generated dataset and compare it with its truth.

    Coefficient recovery is measured against the curve the pipeline can
    observe (true sigma times the median consensus factor) and, for
    reference, against the raw true curve.
    """
    draws = [draw_panel(truth, i) for i in range(truth.n_performances)]
    clamped = sum(int(d.clamped.sum()) for d in draws)
    boosted = {
        (truth.performance_id(i), judge_id)
        for i, d in enumerate(draws)
        for judge_id, hit in zip(truth.judge_ids, d.boosted) if hit
    }

    kappa = consensus_factor(truth.panel_size)
    factor = expected_sigma_factor(truth)
    expected = list(truth.true_sigma.scaled(factor))
    true_coefficients = list(truth.true_sigma.coefficients)
    card = Scorecard(
        discipline_id=truth.discipline_id,
        seed=truth.seed,
        n_performances=truth.n_performances,
        panel_size=truth.panel_size,
        model_kind=truth.true_sigma.kind.value,
        fitted_coefficients=[],
        true_coefficients=true_coefficients,
        expected_coefficients=expected,
        consensus_factor=kappa,
        recovery_errors=[],
        raw_recovery_errors=[],
        expected_shape=classify_shape(truth.true_sigma.kind, expected).value,
        fitted_shape=Shape.DEGENERATE.value,
        r2_weighted=None,
        rmsd_weighted=0.0,
        clamped_fraction=clamped / (truth.n_performances * truth.panel_size),
        boosted_evaluations=len(boosted),
    )

    errors = extract_errors(dataset, truth.discipline_id)
    try:
        model = fit_model(bin_errors(errors, policy), truth.true_sigma.kind,
                          floor=truth.scale.floor, discipline_id=truth.discipline_id)
    except FitError as e:
        logger.warning("Scenario fit failed: %s", e)
        card.fit_error = str(e)
        return card

    card.fitted_coefficients = list(model.coefficients)
    card.recovery_errors = [_relative_error(f, e) for f, e in zip(model.coefficients, expected)]
    card.raw_recovery_errors = [_relative_error(f, e)
                                for f, e in zip(model.coefficients, true_coefficients)]
    card.fitted_shape = model.shape.value
    card.r2_weighted = model.r2_weighted
    card.rmsd_weighted = model.rmsd_weighted

    results = score_discipline(errors, model, min_evaluations, multiplier)
    archetype_of = dict(zip(truth.judge_ids, truth.archetypes))
    for rank, profile in enumerate(rank_judges(results.profiles).ordered, 1):
        card.judges.append({
            'judge_id': profile.judge_id,
            'archetype': archetype_of[profile.judge_id].kind.value,
            'overall_marking': profile.overall_marking,
            'flagged_count': profile.flagged_count,
            'rank': rank,
        })

    flagged = {(s.performance_id, s.judge_id) for s in results.flagged}
    card.flagged_evaluations = len(flagged)
    hits = len(flagged & boosted)
    if boosted:
        card.flag_recall = hits / len(boosted)
        card.flag_precision = hits / len(flagged) if flagged else 0.0
    logger.info("Scenario %s seed %d: shape %s (expected %s), max recovery error %s",
                truth.discipline_id, truth.seed, card.fitted_shape, card.expected_shape,
                card.max_recovery_error)
    return card


def scenario_from_dict(doc: Mapping[str, Any], seed: Optional[int] = None) -> ScenarioSpec:
    """Build a scenario from its configuration mapping; ``seed`` overrides the file's."""
    try:
        scale_doc = doc['scale']
        scale = Scale(scale_doc['min'], scale_doc['max'], scale_doc['step'])
        sigma_doc = doc['true_sigma']
        true_sigma = SigmaCurve(ModelKind(sigma_doc.get('kind', 'quadratic')),
                                tuple(sigma_doc['coefficients']))
        quality_doc = dict(doc.get('quality') or {})
        quality = QualityDistribution(
            kind=QualityKind(quality_doc.pop('kind', 'uniform')),
            low=float(quality_doc.pop('low', scale.min_mark)),
            high=float(quality_doc.pop('high', scale.max_mark)),
            **{k: float(v) for k, v in quality_doc.items()},
        )
        archetypes: List[JudgeArchetype] = []
        for judge in doc.get('judges') or []:
            judge = dict(judge)
            count = int(judge.pop('count', 1))
            if 'rate' in judge:
                judge['cheat_rate'] = judge.pop('rate')
            archetypes.extend([JudgeArchetype(**judge)] * count)
        return ScenarioSpec(
            true_sigma=true_sigma,
            quality=quality,
            panel_size=int(doc['panel_size']),
            scale=scale,
            n_performances=int(doc['n_performances']),
            archetypes=tuple(archetypes),
            seed=int(seed if seed is not None else doc.get('seed', 0)),
            discipline_id=str(doc.get('discipline', 'synthetic')),
            competition_id=str(doc.get('competition', 'SIM')),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from None


def load_scenario(path: str, seed: Optional[int] = None) -> ScenarioSpec:
    """Read a YAML scenario file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            doc = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"scenario {path} is not a mapping")
    return scenario_from_dict(doc, seed)
