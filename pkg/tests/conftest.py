import csv
import io
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence

import pytest

from judge_scanner.parser import build_dataset
from judge_scanner.records import MarkRecord, Scale
from judge_scanner.synthetic import (
    JudgeArchetype, QualityDistribution, ScenarioSpec, SigmaCurve,
)
from judge_scanner.variance_fit import JudgingError, ModelKind

HEADER = ['competition_id', 'discipline_id', 'performance_id', 'judge_id', 'mark',
          'scale_min', 'scale_max', 'scale_step']

CONCAVE_TRUTH = (0.15, 0.06, -0.004)


def csv_text(rows: Iterable[Sequence[str]], header: Sequence[str] = HEADER) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return output.getvalue()


def panel_rows(performance_id: str, marks: Sequence[str], discipline_id: str = 'D1',
               competition_id: str = 'C1', scale: Sequence[str] = ('0', '10', '0.5'),
               judges: Optional[Sequence[str]] = None) -> List[List[str]]:
    """CSV rows of one performance, judges J1..Jn unless named."""
    judges = judges or [f"J{i + 1}" for i in range(len(marks))]
    return [[competition_id, discipline_id, performance_id, j, m, *scale]
            for j, m in zip(judges, marks)]


def make_records(panels: Sequence[Sequence[str]], discipline_id: str = 'D1',
                 scale: Scale = Scale(0, 10, '0.5')) -> List[MarkRecord]:
    records = []
    for p, marks in enumerate(panels):
        for j, mark in enumerate(marks):
            records.append(MarkRecord('C1', discipline_id, f"P{p:03d}", f"J{j + 1}",
                                      Fraction(mark), scale))
    return records


def make_dataset(panels: Sequence[Sequence[str]], discipline_id: str = 'D1'):
    return build_dataset(make_records(panels, discipline_id))


def judging_error(judge_id: str, error, control_score='5', performance_id: str = 'P1',
                  discipline_id: str = 'D1', competition_id: str = 'C1') -> JudgingError:
    return JudgingError(competition_id, discipline_id, performance_id, judge_id,
                        Fraction(control_score), Fraction(error))


def make_scenario(n_performances: int = 600, panel_size: int = 5, seed: int = 7,
                  coefficients=CONCAVE_TRUTH, kind: ModelKind = ModelKind.QUADRATIC,
                  quality: QualityDistribution = QualityDistribution(low=0.5, high=9.5),
                  step: str = '0.1', archetypes: Sequence[JudgeArchetype] = (),
                  discipline_id: str = 'synthetic') -> ScenarioSpec:
    return ScenarioSpec(
        true_sigma=SigmaCurve(kind, tuple(coefficients)),
        quality=quality,
        panel_size=panel_size,
        scale=Scale(0, 10, step),
        n_performances=n_performances,
        archetypes=tuple(archetypes),
        seed=seed,
        discipline_id=discipline_id,
    )


@pytest.fixture
def scale():
    return Scale(0, 10, '0.5')


@pytest.fixture
def small_spec():
    return make_scenario()


@pytest.fixture
def write_file(tmp_path):
    def _write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return str(path)
    return _write
