import csv
import filecmp
import io
import json
import logging
import os

import pytest

from judge_scanner.errors import ModelMismatchError
from judge_scanner.parser import write_records
from judge_scanner.scanner import (
    EXIT_FIT_FAILURE, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, RunConfig, check_model_keys, main,
    parse_args, safe_name,
)
from judge_scanner.synthetic import generate

from conftest import HEADER, csv_text, make_scenario, panel_rows

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SAMPLE_SCENARIO = os.path.join(ROOT, 'sample_scenario.yaml')
GOLDEN_SCORECARD = os.path.join(ROOT, 'tests', 'data', 'sample_scorecard.json')

SCENARIO_YAML = """\
seed: 5
discipline: sim
n_performances: 300
panel_size: 5
scale: {min: 0, max: 10, step: 0.1}
true_sigma: {kind: quadratic, coefficients: [0.15, 0.06, -0.004]}
quality: {kind: uniform, low: 0.5, high: 9.5}
judges:
  - {kind: erratic, noise_multiplier: 2.0}
"""


def dataset_text(discipline_id='D1', n_performances=300, seed=7) -> str:
    stream = io.StringIO()
    write_records(generate(make_scenario(n_performances=n_performances, seed=seed,
                                         discipline_id=discipline_id)), stream)
    return stream.getvalue()


def two_bin_text(discipline_id='D2') -> str:
    rows = []
    for i in range(4):
        rows += panel_rows(f"A{i}", ['5', '5.5', '5', '4.5', '5'], discipline_id=discipline_id)
        rows += panel_rows(f"B{i}", ['6', '6.5', '6', '5.5', '6'], discipline_id=discipline_id)
    return csv_text(rows)


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


@pytest.fixture
def marks_file(write_file):
    return write_file('marks.csv', dataset_text())


class TestRunConfig:
    @pytest.mark.parametrize("kwargs", [
        {'subcommand': 'rank', 'inputs': ('a.csv',)},
        {'subcommand': 'fit'},
        {'subcommand': 'simulate'},
        {'subcommand': 'score', 'inputs': ('a.csv',), 'flag_multiplier': 0},
        {'subcommand': 'fit', 'inputs': ('a.csv',), 'min_count': 1},
        {'subcommand': 'score', 'inputs': ('a.csv',), 'output_format': 'html'},
        {'subcommand': 'fit', 'inputs': ('a.csv',), 'model_kind': 'cubic'},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            RunConfig(**kwargs)

    def test_from_args(self):
        config = RunConfig.from_args(parse_args(
            ['score', 'a.csv', '--competition', 'C1', '--competition', 'C2', '-F', 'json',
             '--min-count', '12', '--centering', 'zero']))
        assert config.competitions == ('C1', 'C2')
        assert config.output_format == 'json'
        assert config.policy.min_count == 12
        assert config.policy.centering.value == 'zero'
        assert config.models is None


@pytest.mark.parametrize("argv", [
    [],
    ['fit'],
    ['fit', 'a.csv', '--model-kind', 'cubic'],
    ['flag', 'a.csv', '--format', 'json'],
    ['simulate'],
    ['score', 'a.csv', '--flag-multiplier', 'two'],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        parse_args(argv)
    assert exc.value.code == EXIT_USAGE


def test_safe_name():
    assert safe_name('D1@E') == 'D1@E'
    assert safe_name('men/10m platform').startswith('men_10m_platform-')
    assert safe_name('men/10m') != safe_name('men_10m') == 'men_10m'
    assert safe_name('men/10m') == safe_name('men/10m')


@pytest.mark.parametrize("keys", [['D1', 'D1@E', 'D1@E'], ['D1', 'd1']])
def test_model_keys_must_own_their_files(keys):
    with pytest.raises(ModelMismatchError):
        check_model_keys(keys)


class TestFit:
    def test_writes_models_bins_and_curves(self, marks_file, tmp_path):
        out = str(tmp_path / 'out')
        assert main(['fit', marks_file, '-o', out, '-q']) == EXIT_OK
        with open(os.path.join(out, 'models', 'D1.json'), encoding='utf-8') as f:
            doc = json.load(f)
        assert doc['discipline_id'] == 'D1'
        assert doc['kind'] == 'quadratic'
        assert len(doc['coefficients']) == 3
        assert read_csv(os.path.join(out, 'bins', 'D1.csv'))[0].keys() == {'center', 'count', 'sigma'}
        assert len(read_csv(os.path.join(out, 'curves', 'D1.csv'))) > 0
        assert os.path.getsize(os.path.join(out, 'ingestion_report.tsv')) == 0

    def test_insufficient_support_exits_2(self, write_file, tmp_path, capsys):
        path = write_file('two_bins.csv', two_bin_text())
        assert main(['fit', path, '-o', str(tmp_path / 'out'), '-q']) == EXIT_FIT_FAILURE
        assert "insufficient support" in capsys.readouterr().err

    def test_keep_going_partial_failure(self, write_file, marks_file, tmp_path, capsys):
        bad = write_file('two_bins.csv', two_bin_text())
        out = str(tmp_path / 'out')
        assert main(['report', marks_file, bad, '-o', out, '--keep-going', '-q']) == EXIT_PARTIAL
        assert "D2" in capsys.readouterr().err
        assert os.path.exists(os.path.join(out, 'models', 'D1.json'))
        assert not os.path.exists(os.path.join(out, 'models', 'D2.json'))
        judges = read_csv(os.path.join(out, 'judges.csv'))
        assert {row['discipline_id'] for row in judges} == {'D1'}

    def test_without_keep_going_first_failure_stops(self, write_file, marks_file, tmp_path):
        bad = write_file('two_bins.csv', two_bin_text())
        assert main(['report', marks_file, bad, '-o', str(tmp_path / 'out'), '-q']) == EXIT_FIT_FAILURE

    def test_by_role_and_compare_kinds(self, write_file, tmp_path):
        text = dataset_text()
        lines = text.splitlines()
        rows = [line + (',E' if line.split(',')[3] in ('J01', 'J02', 'J03') else ',D')
                for line in lines[1:]]
        path = write_file('roles.csv', "\n".join([lines[0] + ',judge_role'] + rows) + "\n")
        out = str(tmp_path / 'out')
        assert main(['fit', path, '-o', out, '--by-role', '--compare-kinds', '-q']) == EXIT_OK
        assert sorted(os.listdir(os.path.join(out, 'models'))) == ['D1.json', 'D1@D.json', 'D1@E.json']

    def test_lookalike_disciplines_get_separate_models(self, write_file, tmp_path):
        second = dataset_text('men_10m', seed=8).splitlines(keepends=True)[1:]
        path = write_file('marks.csv', dataset_text('men/10m') + ''.join(second))
        out = str(tmp_path / 'out')
        assert main(['fit', path, '-o', out, '-q']) == EXIT_OK
        names = sorted(os.listdir(os.path.join(out, 'models')))
        assert names == sorted(['men_10m.json', f"{safe_name('men/10m')}.json"])
        ids = set()
        for name in names:
            with open(os.path.join(out, 'models', name), encoding='utf-8') as f:
                ids.add(json.load(f)['discipline_id'])
        assert ids == {'men/10m', 'men_10m'}
        assert main(['score', path, '--models', os.path.join(out, 'models'),
                     '-o', str(tmp_path / 'score'), '-q']) == EXIT_OK

    def test_position_key_clashing_with_discipline_exits_1(self, write_file, tmp_path, capsys):
        lines = dataset_text().splitlines()
        rows = [line + (',E' if line.split(',')[3] == 'J01' else ',D') for line in lines[1:]]
        rows += [line + ',' for line in dataset_text('D1@E', seed=8).splitlines()[1:]]
        path = write_file('roles.csv', "\n".join([lines[0] + ',judge_role'] + rows) + "\n")
        out = str(tmp_path / 'out')
        assert main(['fit', path, '-o', out, '--by-role', '-q']) == EXIT_USAGE
        assert "D1@E" in capsys.readouterr().err
        assert not os.path.exists(os.path.join(out, 'models'))
        assert main(['fit', path, '-o', out, '-q']) == EXIT_OK


class TestScoring:
    def test_report_outputs(self, marks_file, tmp_path, capsys):
        out = str(tmp_path / 'out')
        assert main(['report', marks_file, '-o', out, '-q']) == EXIT_OK
        stdout = capsys.readouterr().out
        assert "D1: 5 judges, mean marking score" in stdout
        judges = read_csv(os.path.join(out, 'judges.csv'))
        assert [row['judge_id'] for row in judges] != []
        assert list(judges[0].keys()) == ['judge_id', 'discipline_id', 'evaluation_count',
                                          'overall_marking', 'flagged_count', 'confidence']
        markings = [float(row['overall_marking']) for row in judges]
        assert markings == sorted(markings, reverse=True)
        flags = read_csv(os.path.join(out, 'flags.csv'))
        assert all(row['reason'] == 'outlier-vs-median' for row in flags)
        summary = read_csv(os.path.join(out, 'summary.csv'))
        assert summary[0]['discipline_id'] == 'D1'
        assert int(summary[0]['evaluations']) == 1500

    def test_reruns_are_byte_identical(self, marks_file, tmp_path):
        first, second = str(tmp_path / 'first'), str(tmp_path / 'second')
        assert main(['report', marks_file, '-o', first, '-q']) == EXIT_OK
        assert main(['report', marks_file, '-o', second, '-q']) == EXIT_OK
        comparison = filecmp.dircmp(first, second)
        assert comparison.left_only == comparison.right_only == []
        for name in ('judges.csv', 'flags.csv', 'summary.csv', 'ingestion_report.tsv'):
            assert filecmp.cmp(os.path.join(first, name), os.path.join(second, name), shallow=False)
        for sub in ('models', 'bins', 'curves'):
            _, mismatch, errors = filecmp.cmpfiles(os.path.join(first, sub), os.path.join(second, sub),
                                                   os.listdir(os.path.join(first, sub)), shallow=False)
            assert mismatch == errors == []

    def test_score_with_fitted_models(self, marks_file, tmp_path):
        models_out = str(tmp_path / 'fit')
        assert main(['fit', marks_file, '-o', models_out, '-q']) == EXIT_OK
        out = str(tmp_path / 'score')
        assert main(['score', marks_file, '--models', os.path.join(models_out, 'models'),
                     '-o', out, '-F', 'json', '-q']) == EXIT_OK
        with open(os.path.join(out, 'judges.json'), encoding='utf-8') as f:
            assert len(json.load(f)) == 5
        assert not os.path.exists(os.path.join(out, 'models'))

    def test_flag_only(self, marks_file, tmp_path):
        out = str(tmp_path / 'out')
        assert main(['flag', marks_file, '-o', out, '-q']) == EXIT_OK
        assert os.path.exists(os.path.join(out, 'flags.csv'))
        assert not os.path.exists(os.path.join(out, 'judges.csv'))

    def test_model_of_other_discipline_exits_1(self, marks_file, write_file, tmp_path, capsys):
        models_out = str(tmp_path / 'fit')
        assert main(['fit', marks_file, '-o', models_out, '-q']) == EXIT_OK
        other = write_file('other.csv', dataset_text(discipline_id='D9', seed=8))
        model_file = os.path.join(models_out, 'models', 'D1.json')
        assert main(['score', other, '--models', model_file,
                     '-o', str(tmp_path / 'out'), '-q']) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "D1" in err and "D9" in err

    def test_missing_model_in_directory_exits_1(self, marks_file, write_file, tmp_path, capsys):
        models_out = str(tmp_path / 'fit')
        assert main(['fit', marks_file, '-o', models_out, '-q']) == EXIT_OK
        other = write_file('other.csv', dataset_text(discipline_id='D9', seed=8))
        assert main(['score', marks_file, other, '--models', os.path.join(models_out, 'models'),
                     '-o', str(tmp_path / 'out'), '-q']) == EXIT_USAGE
        assert "No model for discipline 'D9'" in capsys.readouterr().err

    def test_missing_column_names_ingestion_report(self, write_file, tmp_path, capsys):
        path = write_file('bad.csv', csv_text([['C1', 'D1', 'P1', 'J1', '8', '0', '10']],
                                              header=HEADER[:-1]))
        out = str(tmp_path / 'out')
        assert main(['report', path, '-o', out, '-q']) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "scale_step" in err
        assert "ingestion report" in err
        assert os.path.exists(os.path.join(out, 'ingestion_report.tsv'))

    def test_non_utf8_input_names_ingestion_report(self, marks_file, tmp_path, capsys):
        latin = tmp_path / 'latin.csv'
        latin.write_bytes(csv_text(panel_rows('P1', ['8', '9'], discipline_id='Düsseldorf'))
                          .encode('latin-1'))
        out = str(tmp_path / 'out')
        assert main(['report', marks_file, str(latin), '-o', out, '-q']) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "not valid UTF-8" in err and "row 1" in err
        assert "ingestion report" in err
        assert os.path.exists(os.path.join(out, 'ingestion_report.tsv'))

    def test_rejected_rows_are_reported(self, write_file, tmp_path):
        text = dataset_text()
        text += "SIM,D1,P00001,J99,abc,0,10,0.1\n"
        path = write_file('marks.csv', text)
        out = str(tmp_path / 'out')
        assert main(['fit', path, '-o', out, '-q']) == EXIT_OK
        with open(os.path.join(out, 'ingestion_report.tsv'), encoding='utf-8') as f:
            assert f.read() == "1501\tunparseable mark 'abc'\n"

    def test_perfect_panel(self, write_file, tmp_path, caplog):
        rows = []
        for i, mark in enumerate(['3', '5', '7'] * 4):
            rows += panel_rows(f"P{i:02d}", [mark] * 3)
        path = write_file('perfect.csv', csv_text(rows))
        out = str(tmp_path / 'out')
        with caplog.at_level(logging.WARNING):
            assert main(['report', path, '-o', out]) == EXIT_OK
        judges = read_csv(os.path.join(out, 'judges.csv'))
        assert [float(row['overall_marking']) for row in judges] == [0.0, 0.0, 0.0]
        assert read_csv(os.path.join(out, 'flags.csv')) == []
        assert "zero marking score" in caplog.text


class TestSimulate:
    def test_deterministic(self, write_file, tmp_path):
        scenario = write_file('scenario.yaml', SCENARIO_YAML)
        first, second = str(tmp_path / 'first'), str(tmp_path / 'second')
        assert main(['simulate', '--scenario', scenario, '-o', first, '-q']) == EXIT_OK
        assert main(['simulate', '--scenario', scenario, '-o', second, '-q']) == EXIT_OK
        for name in ('dataset.csv', 'scorecard.json'):
            assert filecmp.cmp(os.path.join(first, name), os.path.join(second, name), shallow=False)
        with open(os.path.join(first, 'scorecard.json'), encoding='utf-8') as f:
            card = json.load(f)
        assert card['seed'] == 5
        assert card['judges'][0]['judge_id'] == 'J01'
        assert card['judges'][0]['archetype'] == 'erratic'

    def test_seed_override(self, write_file, tmp_path):
        scenario = write_file('scenario.yaml', SCENARIO_YAML)
        first, second = str(tmp_path / 'first'), str(tmp_path / 'second')
        assert main(['simulate', '--scenario', scenario, '-o', first, '-q']) == EXIT_OK
        assert main(['simulate', '--scenario', scenario, '--seed', '6', '-o', second, '-q']) == EXIT_OK
        assert not filecmp.cmp(os.path.join(first, 'dataset.csv'),
                               os.path.join(second, 'dataset.csv'), shallow=False)

    def test_dataset_feeds_fit(self, write_file, tmp_path):
        scenario = write_file('scenario.yaml', SCENARIO_YAML)
        sim = str(tmp_path / 'sim')
        assert main(['simulate', '--scenario', scenario, '-o', sim, '-q']) == EXIT_OK
        out = str(tmp_path / 'fit')
        assert main(['fit', os.path.join(sim, 'dataset.csv'), '-o', out, '-q']) == EXIT_OK
        assert os.path.exists(os.path.join(out, 'models', 'sim.json'))

    def test_bad_scenario_exits_1(self, write_file, tmp_path, capsys):
        scenario = write_file('scenario.yaml', "panel_size: 12\n")
        assert main(['simulate', '--scenario', scenario, '-o', str(tmp_path / 'out'), '-q']) == EXIT_USAGE
        assert "scenario" in capsys.readouterr().err

    def test_sample_scenario_matches_golden_scorecard(self, tmp_path):
        # JUDGE_SCANNER_UPDATE_GOLDEN=1 rewrites the golden file after an intended change
        out = str(tmp_path / 'sim')
        assert main(['simulate', '--scenario', SAMPLE_SCENARIO, '-o', out, '-q']) == EXIT_OK
        with open(os.path.join(out, 'scorecard.json'), 'rb') as f:
            produced = f.read()
        if os.environ.get('JUDGE_SCANNER_UPDATE_GOLDEN') or not os.path.exists(GOLDEN_SCORECARD):
            os.makedirs(os.path.dirname(GOLDEN_SCORECARD), exist_ok=True)
            with open(GOLDEN_SCORECARD, 'wb') as f:
                f.write(produced)
            pytest.skip(f"golden scorecard written to {GOLDEN_SCORECARD}")
        with open(GOLDEN_SCORECARD, 'rb') as f:
            assert produced == f.read()
