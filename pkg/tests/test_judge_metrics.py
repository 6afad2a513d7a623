import logging
from fractions import Fraction

import numpy as np
import pytest

from judge_scanner.errors import ModelMismatchError
from judge_scanner.judge_metrics import (
    FLAG_REASON, POOLED, JudgeProfile, build_profile, flag_outliers, flag_report_rows,
    in_scope, judge_report_rows, marking_scores, overall_marking, pooled_profiles, rank_judges,
    score_discipline, summarize,
)
from judge_scanner.parser import build_dataset
from judge_scanner.records import rescale_records
from judge_scanner.synthetic import JudgeArchetype, generate
from judge_scanner.variance_fit import ModelKind, VarianceModel, extract_errors, fit_discipline

from conftest import judging_error, make_scenario


def constant_model(sigma: float = 0.5, discipline_id='D1') -> VarianceModel:
    return VarianceModel(ModelKind.QUADRATIC, (sigma, 0.0, 0.0), (0.0, 10.0), 1e-6,
                         discipline_id=discipline_id)


def errors_for(judge_id, values, **kwargs):
    return [judging_error(judge_id, v, performance_id=f"P{i:05d}", **kwargs)
            for i, v in enumerate(values)]


class TestMarkingScores:
    def test_marking_is_error_over_sigma(self):
        scores = marking_scores(errors_for('J1', ['0.25', '-1']), constant_model(0.5))
        assert [s.marking for s in scores] == [0.5, -2.0]
        assert all(s.sigma_hat == 0.5 for s in scores)

    def test_perfect_judge(self):
        scores = marking_scores(errors_for('J1', [0] * 30), constant_model())
        assert overall_marking(scores) == 0.0

    def test_always_one_sigma(self):
        scores = marking_scores(errors_for('J1', ['0.5', '-0.5'] * 20), constant_model(0.5))
        assert overall_marking(scores) == pytest.approx(1.0, abs=1e-9)

    def test_discipline_mismatch(self):
        errors = errors_for('J1', ['0.5'], discipline_id='D2')
        with pytest.raises(ModelMismatchError, match="D1"):
            marking_scores(errors, constant_model(discipline_id='D1'))

    def test_clamped_sigma_reported(self):
        model = VarianceModel(ModelKind.QUADRATIC, (-1.0, 0.0, 0.0), (0.0, 10.0), 0.01)
        score = marking_scores(errors_for('J1', ['0.5']), model)[0]
        assert score.clamped and score.sigma_hat == 0.01

    def test_larger_error_never_lowers_overall_marking(self):
        base = ['0.25', '-0.5', '0.75', '0']
        previous = 0.0
        for last in ['0', '-0.25', '0.5', '-1', '2.5']:
            current = overall_marking(marking_scores(errors_for('J1', base + [last]), constant_model()))
            assert current >= previous
            previous = current

    def test_overall_marking_needs_scores(self):
        with pytest.raises(ValueError):
            overall_marking([])


class TestFlagOutliers:
    def test_threshold_rule(self):
        model = constant_model(1.0)
        scores = marking_scores(errors_for('J1', ['0.5', '-0.5', '0.5', '-0.5', '3']), model)
        profile = build_profile('J1', scores, 'D1')
        flagged, profile = flag_outliers(scores, profile, model)
        m_j = overall_marking(scores)
        assert [s.flagged for s in flagged] == [False, False, False, False, True]
        assert flagged[-1].threshold == pytest.approx(2 * m_j)
        assert flagged[-1].reason == FLAG_REASON
        assert flagged[0].reason is None
        assert profile.flagged_count == 1

    def test_standard_normal_markings_flag_about_five_percent(self):
        rng = np.random.default_rng(11)
        values = [Fraction(float(x)) for x in rng.standard_normal(10_000)]
        model = constant_model(1.0)
        scores = marking_scores(errors_for('J1', values), model)
        flagged, profile = flag_outliers(scores, build_profile('J1', scores, 'D1'), model)
        rate = profile.flagged_count / len(flagged)
        assert 0.035 <= rate <= 0.060

    @pytest.mark.parametrize("seed", range(3))
    def test_error_and_marking_rules_agree(self, seed):
        rng = np.random.default_rng(seed)
        model = VarianceModel(ModelKind.QUADRATIC, (0.15, 0.06, -0.004), (0.0, 10.0), 1e-3)
        errors = [judging_error('J1', Fraction(int(e), 10), control_score=Fraction(int(c), 2),
                                performance_id=f"P{i}")
                  for i, (e, c) in enumerate(zip(rng.integers(-8, 9, 500), rng.integers(0, 21, 500)))]
        scores = marking_scores(errors, model)
        flagged, profile = flag_outliers(scores, build_profile('J1', scores, 'D1'), model)
        by_error = {s.performance_id for s in flagged if s.flagged}
        by_marking = {s.performance_id for s in flagged
                      if abs(s.marking) > 2 * profile.overall_marking}
        assert by_error == by_marking

    def test_zero_marking_score_warns(self, caplog):
        model = constant_model()
        scores = marking_scores(errors_for('J1', [0] * 5), model)
        with caplog.at_level(logging.WARNING):
            flagged, profile = flag_outliers(scores, build_profile('J1', scores, 'D1'), model)
        assert profile.flagged_count == 0
        assert "zero marking score" in caplog.text

    def test_multiplier_must_be_positive(self):
        model = constant_model()
        scores = marking_scores(errors_for('J1', ['0.5']), model)
        with pytest.raises(ValueError):
            flag_outliers(scores, build_profile('J1', scores, 'D1'), model, multiplier=0)


class TestRanking:
    def profile(self, judge_id, marking, count=30):
        return JudgeProfile(judge_id, 'D1', count, marking, low_confidence=count < 20)

    def test_worst_first_with_tie_breaks(self):
        ranking = rank_judges([
            self.profile('A', 1.0),
            self.profile('B', 1.5),
            self.profile('C', 1.0, count=40),
            self.profile('D', 1.0),
            self.profile('E', 9.0, count=5),
        ])
        assert [p.judge_id for p in ranking.confident] == ['B', 'C', 'A', 'D']
        assert [p.judge_id for p in ranking.low_confidence] == ['E']
        assert [p.judge_id for p in ranking.ordered] == ['B', 'C', 'A', 'D', 'E']

    def test_low_confidence_tag(self):
        model = constant_model()
        scores = marking_scores(errors_for('J1', ['0.5'] * 3), model)
        profile = build_profile('J1', scores, 'D1', min_evaluations=20)
        assert profile.low_confidence and profile.confidence == 'low'


class TestScoreDiscipline:
    def make_errors(self):
        return (errors_for('J1', ['0.5', '-0.5', '0'] * 10, competition_id='C1')
                + errors_for('J2', ['1', '-1', '0'] * 10, competition_id='C2'))

    def test_profiles_and_flags(self):
        result = score_discipline(self.make_errors(), constant_model())
        assert [p.judge_id for p in result.profiles] == ['J1', 'J2']
        assert [p.evaluation_count for p in result.profiles] == [30, 30]
        assert result.profiles[1].overall_marking == pytest.approx(2 * result.profiles[0].overall_marking)
        assert result.flagged == []

    def test_competition_scope(self):
        result = score_discipline(self.make_errors(), constant_model(), competitions=['C2'])
        assert [p.judge_id for p in result.profiles] == ['J2']
        assert len(in_scope(result.scores, ['C1'])) == 0
        assert len(in_scope(result.scores)) == 30

    def test_pooled_profiles(self):
        first = score_discipline(self.make_errors(), constant_model())
        second_errors = errors_for('J1', ['0.5'] * 5, discipline_id='D2')
        second = score_discipline(second_errors, constant_model(discipline_id='D2'))
        pooled = pooled_profiles([first, second])
        assert [(p.judge_id, p.discipline_id, p.evaluation_count) for p in pooled] == [
            ('J1', POOLED, 35), ('J2', POOLED, 30)]
        assert pooled[0].disciplines == frozenset({'D1', 'D2'})

    def test_summary_and_report_rows(self):
        result = score_discipline(self.make_errors(), constant_model(), min_evaluations=40)
        frame = summarize([result])
        assert list(frame.columns) == ['discipline_id', 'judge_count', 'evaluations',
                                       'mean_marking', 'flagged', 'flag_rate']
        assert frame.loc[0, 'judge_count'] == 2
        assert frame.loc[0, 'flag_rate'] == 0.0
        rows = judge_report_rows(result.profiles)
        assert list(rows[0]) == ['judge_id', 'discipline_id', 'evaluation_count',
                                 'overall_marking', 'flagged_count', 'confidence']
        assert rows[0]['confidence'] == 'low'
        assert flag_report_rows(result.scores) == []


def test_honest_panel_flag_rate():
    dataset = generate(make_scenario(n_performances=4000, panel_size=9, seed=3, step='0.05'))
    errors = extract_errors(dataset, 'synthetic')
    result = score_discipline(errors, fit_discipline(dataset, 'synthetic'))
    rate = len(result.flagged) / len(result.scores)
    assert 0.035 <= rate <= 0.060


@pytest.mark.parametrize("seed", [4, 5])
def test_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    k = Fraction(int(rng.integers(1, 101)), 10)
    spec = make_scenario(n_performances=500, seed=seed, archetypes=[JudgeArchetype.erratic(1.5)])
    dataset = generate(spec)
    scaled = build_dataset(rescale_records(list(dataset.records()), k))

    def run(data):
        model = fit_discipline(data, 'synthetic')
        return score_discipline(extract_errors(data, 'synthetic'), model)

    base, refit = run(dataset), run(scaled)
    assert [s.marking for s in refit.scores] == pytest.approx([s.marking for s in base.scores],
                                                              rel=1e-9, abs=1e-12)
    assert [p.overall_marking for p in refit.profiles] == pytest.approx(
        [p.overall_marking for p in base.profiles], rel=1e-9)
    assert ({(s.performance_id, s.judge_id) for s in refit.flagged}
            == {(s.performance_id, s.judge_id) for s in base.flagged})
    assert ([p.judge_id for p in rank_judges(refit.profiles).ordered]
            == [p.judge_id for p in rank_judges(base.profiles).ordered])
