"""
Domain types for panel scoring data.

Marks are carried as exact rationals (``fractions.Fraction``). Conversion to
floating point happens only when variances are estimated and fitted.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import MarkError, UnknownDisciplineError

# Marks closer than this to a grid point (in units of the step) count as on-grid
GRID_TOLERANCE = Fraction(1, 10**9)


def to_fraction(value) -> Fraction:
    """Convert a literal or number to an exact rational.

    Strings go through ``Fraction`` directly so that decimal literals such as
    ``"0.1"`` stay exact; floats are converted through their shortest repr.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


def format_score(value: Fraction) -> str:
    """Serialize an exact rational without losing precision.

    Terminating values are written as plain decimals (``8.5``, ``-0.25``,
    ``10``); anything else falls back to ``p/q``.
    """
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives)
    scaled = value * 10**digits
    assert scaled.denominator == 1
    sign = '-' if scaled < 0 else ''
    text = str(abs(scaled.numerator)).rjust(digits + 1, '0')
    if digits == 0:
        return sign + text
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


@dataclass(frozen=True)
class Scale:
    """A closed, finite marking range with a fixed step."""

    min_mark: Fraction
    max_mark: Fraction
    step: Fraction

    def __post_init__(self):
        for name in ('min_mark', 'max_mark', 'step'):
            object.__setattr__(self, name, to_fraction(getattr(self, name)))
        if not self.min_mark < self.max_mark:
            raise MarkError("scale min_mark must be below max_mark")
        if self.step <= 0:
            raise MarkError("scale step must be positive")
        if ((self.max_mark - self.min_mark) / self.step).denominator != 1:
            raise MarkError("scale range is not a multiple of step")

    @property
    def n_steps(self) -> int:
        return int((self.max_mark - self.min_mark) / self.step)

    @property
    def floor(self) -> float:
        """Smallest admissible sigma for models fitted on this scale."""
        return max(1e-6, float(self.step) / 100)

    def grid_value(self, k: int) -> Fraction:
        return self.min_mark + k * self.step

    def check(self, mark: Fraction) -> None:
        """Raise MarkError if the mark is out of bounds or off the grid."""
        if mark > self.max_mark:
            raise MarkError("mark above max_mark")
        if mark < self.min_mark:
            raise MarkError("mark below min_mark")
        k = (mark - self.min_mark) / self.step
        if abs(k - round(k)) > GRID_TOLERANCE:
            raise MarkError("mark off scale grid")

    def rescaled(self, factor: Fraction) -> 'Scale':
        factor = to_fraction(factor)
        return Scale(self.min_mark * factor, self.max_mark * factor, self.step * factor)


@dataclass(frozen=True)
class MarkRecord:
    """One judge's mark for one performance."""

    competition_id: str
    discipline_id: str
    performance_id: str
    judge_id: str
    mark: Fraction
    scale: Scale
    judge_role: Optional[str] = None
    row_number: Optional[int] = field(default=None, compare=False)
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'mark', to_fraction(self.mark))
        self.scale.check(self.mark)

    @property
    def group_key(self) -> Tuple[str, str]:
        return (self.discipline_id, self.performance_id)


@dataclass(frozen=True)
class PerformanceGroup:
    """All marks given to one performance, with its control score."""

    performance_id: str
    discipline_id: str
    marks: Tuple[MarkRecord, ...]
    control_score: Fraction

    def __post_init__(self):
        if len(self.marks) < 2:
            raise MarkError("panel size < 2")
        if len({m.scale for m in self.marks}) != 1:
            raise MarkError("mixed scales")
        judges = [m.judge_id for m in self.marks]
        if len(set(judges)) != len(judges):
            raise MarkError("duplicate judge")
        values = [m.mark for m in self.marks]
        if not min(values) <= self.control_score <= max(values):
            raise MarkError("control score outside the panel range")

    @property
    def scale(self) -> Scale:
        return self.marks[0].scale

    @property
    def panel_size(self) -> int:
        return len(self.marks)


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from: (source path, data row count) pairs."""

    sources: Tuple[Tuple[str, int], ...] = ()


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of performance groups keyed by discipline."""

    disciplines: Mapping[str, Tuple[PerformanceGroup, ...]]
    provenance: Provenance = field(default_factory=Provenance, compare=False)

    def __post_init__(self):
        frozen: Dict[str, Tuple[PerformanceGroup, ...]] = {
            d: tuple(groups) for d, groups in sorted(self.disciplines.items())
        }
        object.__setattr__(self, 'disciplines', MappingProxyType(frozen))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return dict(self.disciplines) == dict(other.disciplines)

    @property
    def discipline_ids(self) -> List[str]:
        return list(self.disciplines.keys())

    def discipline(self, discipline_id: str) -> Tuple[PerformanceGroup, ...]:
        try:
            return self.disciplines[discipline_id]
        except KeyError:
            raise UnknownDisciplineError(f"Unknown discipline: {discipline_id}") from None

    def records(self) -> Iterator[MarkRecord]:
        for groups in self.disciplines.values():
            for group in groups:
                yield from group.marks

    @property
    def n_marks(self) -> int:
        return sum(len(g.marks) for groups in self.disciplines.values() for g in groups)

    def scale_of(self, discipline_id: str) -> Scale:
        """Scale shared by the discipline's groups (the first group's scale)."""
        return self.discipline(discipline_id)[0].scale

    def roles(self, discipline_id: str) -> List[str]:
        return sorted({m.judge_role for g in self.discipline(discipline_id)
                       for m in g.marks if m.judge_role})


def rescale_records(records: Sequence[MarkRecord], factor) -> List[MarkRecord]:
    """Map every mark s to factor * s, scales included."""
    factor = to_fraction(factor)
    if factor <= 0:
        raise ValueError("rescale factor must be positive")
    out = []
    for r in records:
        out.append(MarkRecord(
            competition_id=r.competition_id,
            discipline_id=r.discipline_id,
            performance_id=r.performance_id,
            judge_id=r.judge_id,
            mark=r.mark * factor,
            scale=r.scale.rescaled(factor),
            judge_role=r.judge_role,
            row_number=r.row_number,
            source=r.source,
        ))
    return out
