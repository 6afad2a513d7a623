#!/usr/bin/env python3
"""
Judge Scanner - Fit discipline variance models and score judges from panel scoring data.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__ as APP_VERSION
from .errors import FitError, JudgeScannerError, ModelMismatchError
from .formatters import (
    CSVFormatter, JSONFormatter, MarkdownFormatter, PDFFormatter, XLSXFormatter, write_text,
)
from .formatters.base import FLAG_FIELDS, JUDGE_FIELDS
from .judge_metrics import (
    DEFAULT_FLAG_MULTIPLIER, DEFAULT_MIN_EVALUATIONS, DisciplineScores, flag_report_rows,
    judge_report_rows, pooled_profiles, rank_judges, score_discipline, summarize,
)
from .parser import IngestionReport, load_dataset, write_records
from .records import Dataset
from .synthetic import Scorecard, evaluate_scenario, generate, load_scenario
from .variance_fit import (
    DEFAULT_MIN_COUNT, BinningPolicy, Centering, ModelKind, VarianceModel, curve_samples,
    extract_errors, fit_discipline, model_from_document, model_key, model_to_document,
)

logger = logging.getLogger(__name__)

# Map of format names to formatter classes
FORMATTERS = {
    'csv': CSVFormatter,
    'json': JSONFormatter,
    'xlsx': XLSXFormatter,
    'pdf': PDFFormatter,
    'md': MarkdownFormatter,
    'markdown': MarkdownFormatter,
}

SUBCOMMANDS = ('fit', 'score', 'flag', 'simulate', 'report')
DEFAULT_OUTPUT_DIR = 'judge-scanner-output'
LOG_FORMAT = "[%(asctime)s] %(levelname)s: %(message)s"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FIT_FAILURE = 2
EXIT_PARTIAL = 3


@dataclass(frozen=True)
class RunConfig:
    """Everything one invocation needs, validated once."""

    subcommand: str
    inputs: Tuple[str, ...] = ()
    output_dir: str = DEFAULT_OUTPUT_DIR
    model_kind: ModelKind = ModelKind.QUADRATIC
    min_count: int = DEFAULT_MIN_COUNT
    centering: Centering = Centering.MEAN
    flag_multiplier: float = DEFAULT_FLAG_MULTIPLIER
    min_evaluations: int = DEFAULT_MIN_EVALUATIONS
    keep_going: bool = False
    by_role: bool = False
    compare_kinds: bool = False
    models: Optional[str] = None
    competitions: Optional[Tuple[str, ...]] = None
    output_format: str = 'csv'
    scenario: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand: {self.subcommand}")
        object.__setattr__(self, 'model_kind', ModelKind(self.model_kind))
        object.__setattr__(self, 'centering', Centering(self.centering))
        if not self.flag_multiplier > 0:
            raise ValueError("flag multiplier must be positive")
        if self.min_count < 2:
            raise ValueError("min-count must be at least 2")
        if self.min_evaluations < 1:
            raise ValueError("min-evaluations must be at least 1")
        if self.output_format not in FORMATTERS:
            raise ValueError(f"Unsupported output format: {self.output_format}. "
                             f"Available formats: {', '.join(FORMATTERS.keys())}")
        if self.subcommand == 'simulate':
            if not self.scenario:
                raise ValueError("simulate needs a --scenario file")
        elif not self.inputs:
            raise ValueError(f"{self.subcommand} needs at least one input file")

    @property
    def policy(self) -> BinningPolicy:
        return BinningPolicy(min_count=self.min_count, centering=self.centering)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> 'RunConfig':
        return cls(
            subcommand=args.command,
            inputs=tuple(getattr(args, 'inputs', None) or ()),
            output_dir=args.output_dir,
            model_kind=getattr(args, 'model_kind', ModelKind.QUADRATIC.value),
            min_count=getattr(args, 'min_count', DEFAULT_MIN_COUNT),
            centering=getattr(args, 'centering', Centering.MEAN.value),
            flag_multiplier=getattr(args, 'flag_multiplier', DEFAULT_FLAG_MULTIPLIER),
            min_evaluations=getattr(args, 'min_evaluations', DEFAULT_MIN_EVALUATIONS),
            keep_going=getattr(args, 'keep_going', False),
            by_role=getattr(args, 'by_role', False),
            compare_kinds=getattr(args, 'compare_kinds', False),
            models=getattr(args, 'models', None),
            competitions=tuple(args.competition) if getattr(args, 'competition', None) else None,
            output_format=getattr(args, 'format', 'csv'),
            scenario=getattr(args, 'scenario', None),
            seed=getattr(args, 'seed', None),
        )


def safe_name(key: str) -> str:
    """
    File name for a model key; opaque identifiers may hold path separators.

    Keys that need sanitizing get a short digest of the raw key so that
    ``men/10m`` and ``men_10m`` land in different files.
    """
    name = re.sub(r'[^A-Za-z0-9._@-]', '_', key)
    if name != key:
        name = f"{name}-{hashlib.sha1(key.encode('utf-8')).hexdigest()[:8]}"
    return name


def check_model_keys(keys: Sequence[str]) -> None:
    """
    Raise ModelMismatchError unless every key maps to its own model file.

    Names are compared case-folded for case-insensitive file systems.
    """
    owners: Dict[str, str] = {}
    for key in keys:
        name = safe_name(key).casefold()
        if name not in owners:
            owners[name] = key
        elif owners[name] == key:
            raise ModelMismatchError(f"Model key '{key}' is claimed twice; a discipline id "
                                     f"clashes with a per-position key")
        else:
            raise ModelMismatchError(f"Model keys '{owners[name]}' and '{key}' would share "
                                     f"the model file '{safe_name(key)}.json'")


def _csv_text(header: Sequence[str], rows) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return output.getvalue()


def _json_text(document) -> str:
    return json.dumps(document, indent=2) + "\n"


@dataclass
class FitRun:
    """Models fitted in one pass, with the disciplines that failed."""

    models: Dict[str, VarianceModel]
    failures: Dict[str, FitError]


class JudgeScanner:
    """Main class for the Judge Scanner application."""

    def __init__(self, config: RunConfig):
        """
        Initialize the JudgeScanner.

        Args:
            config: Validated run configuration
        """
        self.config = config
        self.formatters = {name: formatter() for name, formatter in FORMATTERS.items()}
        self.report = IngestionReport()
        self.written: List[str] = []

    def path(self, *parts: str) -> str:
        return os.path.join(self.config.output_dir, *parts)

    def _write(self, path: str, text: str) -> str:
        write_text(path, text)
        self.written.append(path)
        return path

    def load(self) -> Dataset:
        """
        Parse the input files; the ingestion report is written even when loading fails.

        Raises:
            SchemaError: Missing required column; the message names the report path
            EmptyDatasetError: No performance group survived validation
        """
        report_path = self.path('ingestion_report.tsv')
        # Fresh report per load; it is written even when parsing fails
        self.report = IngestionReport()
        try:
            dataset, _ = load_dataset(self.config.inputs, report=self.report)
        except JudgeScannerError as e:
            self._write(report_path, self.report.text())
            raise type(e)(f"{e} (ingestion report: {report_path})") from None
        self._write(report_path, self.report.text())
        if self.report.rejected:
            logger.warning("%d of %d rows rejected; see %s", len(self.report.rejected),
                           self.report.total_rows, report_path)
        return dataset

    def fit(self, dataset: Dataset) -> FitRun:
        """
        Fit every discipline (and every judging position with ``by_role``).

        Without ``keep_going`` the first failure propagates.

        Raises:
            ModelMismatchError: Two model keys would share a model file
        """
        plan: List[Tuple[str, Optional[str]]] = []
        for discipline in dataset.discipline_ids:
            plan.append((discipline, None))
            if self.config.by_role:
                plan.extend((discipline, role) for role in dataset.roles(discipline))
        # Every key needs its own model file
        check_model_keys([model_key(d, r) for d, r in plan])

        run = FitRun({}, {})
        for discipline, role in plan:
            key = model_key(discipline, role)
            try:
                model = fit_discipline(dataset, discipline, self.config.model_kind,
                                       self.config.policy, role, self.config.compare_kinds)
            except FitError as e:
                if e.discipline_id is None:
                    e.discipline_id = key
                if not self.config.keep_going:
                    raise
                logger.error("Fit failed for %s: %s", key, e)
                run.failures[key] = e
                continue
            run.models[key] = model
            self.write_model(key, model)
        return run

    def write_model(self, key: str, model: VarianceModel) -> None:
        """Model document, bin table and curve samples of one fit."""
        name = safe_name(key)
        self._write(self.path('models', f"{name}.json"), _json_text(model_to_document(model)))
        self._write(self.path('bins', f"{name}.csv"),
                    _csv_text(['center', 'count', 'sigma'],
                              [(b.center, b.count, b.sigma) for b in model.bins]))
        self._write(self.path('curves', f"{name}.csv"),
                    _csv_text(['c', 'sigma_hat'], curve_samples(model)))

    def load_models(self, dataset: Dataset) -> Dict[str, VarianceModel]:
        """
        Read fitted model documents from a directory or a single JSON file.

        Raises:
            ModelMismatchError: A discipline of the dataset has no model, or a
                single model file belongs to another discipline
        """
        # Directory of model documents or a single document
        source = self.config.models
        if os.path.isdir(source):
            paths = sorted(os.path.join(source, f) for f in os.listdir(source) if f.endswith('.json'))
        elif os.path.isfile(source):
            paths = [source]
        else:
            raise ModelMismatchError(f"Model path not found: {source}")

        models: Dict[str, VarianceModel] = {}
        # Keyed by the discipline id stored in each document, not the file name
        for path in paths:
            with open(path, 'r', encoding='utf-8') as f:
                try:
                    model = model_from_document(json.load(f))
                except (json.JSONDecodeError, FitError) as e:
                    raise ModelMismatchError(f"Unreadable model document {path}: {e}") from None
            models[model.discipline_id or os.path.splitext(os.path.basename(path))[0]] = model

        selected = {}
        for discipline in dataset.discipline_ids:
            if discipline in models:
                selected[discipline] = models[discipline]
            elif len(paths) == 1 and len(dataset.discipline_ids) == 1:
                # scoring then reports the mismatch with both discipline names
                selected[discipline] = next(iter(models.values()))
            else:
                raise ModelMismatchError(f"No model for discipline '{discipline}' in {source}")
        return selected

    def score(self, dataset: Dataset, models: Dict[str, VarianceModel]) -> List[DisciplineScores]:
        results = []
        for discipline in dataset.discipline_ids:
            model = models.get(discipline)
            if model is None:
                continue
            result = score_discipline(extract_errors(dataset, discipline), model,
                                      self.config.min_evaluations, self.config.flag_multiplier,
                                      self.config.competitions)
            results.append(result)
        return results

    def export(self, results: Sequence[DisciplineScores]) -> str:
        """
        Write the judge report in the configured format.

        Profiles are ranked worst first within each discipline; pooled
        cross-discipline rows follow when there is more than one discipline.
        """
        profiles = []
        for result in results:
            profiles.extend(rank_judges(result.profiles).ordered)
        if len(results) > 1:
            profiles.extend(rank_judges(pooled_profiles(results, self.config.min_evaluations)).ordered)

        formatter = self.formatters[self.config.output_format]
        path = formatter.format(judge_report_rows(profiles),
                                self.path(f"judges.{formatter.extension}"),
                                fields=JUDGE_FIELDS)
        self.written.append(path)
        return path

    def export_flags(self, results: Sequence[DisciplineScores]) -> str:
        rows = []
        for result in results:
            rows.extend(flag_report_rows(result.scores))
        path = self.formatters['csv'].format(rows, self.path('flags.csv'), fields=FLAG_FIELDS)
        self.written.append(path)
        return path

    def export_summary(self, results: Sequence[DisciplineScores]) -> List[str]:
        """Write summary.csv and return one human-readable line per discipline."""
        frame = summarize(results)
        self._write(self.path('summary.csv'), frame.to_csv(index=False, lineterminator='\n'))
        return [f"{row.discipline_id}: {row.judge_count} judges, mean marking score "
                f"{row.mean_marking:.4f}, flag rate {row.flag_rate:.2%}"
                for row in frame.itertuples(index=False)]

    def simulate(self) -> Scorecard:
        """Generate the scenario dataset and score the pipeline against its truth."""
        spec = load_scenario(self.config.scenario, self.config.seed)
        # Generated marks go out in the input format so fit can replay them
        dataset = generate(spec)
        stream = io.StringIO()
        write_records(dataset, stream)
        self._write(self.path('dataset.csv'), stream.getvalue())
        # Score the pipeline against the scenario truth
        card = evaluate_scenario(dataset, spec, self.config.policy,
                                 self.config.flag_multiplier, self.config.min_evaluations)
        self._write(self.path('scorecard.json'), _json_text(card.to_document()))
        return card


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like every other input error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_input_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('Input Options')
    group.add_argument('inputs', nargs='+', metavar='FILE',
                       help='Delimited scoring files, one row per (performance, judge) mark')


def _add_model_options(parser: argparse.ArgumentParser, with_models: bool = False) -> None:
    group = parser.add_argument_group('Model Options')
    group.add_argument('--model-kind', choices=[k.value for k in ModelKind],
                       default=ModelKind.QUADRATIC.value, help='Form of the fitted sigma curve')
    group.add_argument('--min-count', type=int, default=DEFAULT_MIN_COUNT,
                       help='Minimum judging errors per bin; sparser bins are merged')
    group.add_argument('--centering', choices=[c.value for c in Centering],
                       default=Centering.MEAN.value,
                       help='Bin sigma about the bin mean or about zero')
    group.add_argument('--by-role', action='store_true',
                       help='Also fit one model per judging position')
    group.add_argument('--compare-kinds', action='store_true',
                       help='Also fit the other model kind and record its diagnostics')
    if with_models:
        group.add_argument('--models',
                           help='Directory or JSON file of fitted models (default: fit inline)')


def _add_scoring_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('Scoring Options')
    group.add_argument('--flag-multiplier', type=float, default=DEFAULT_FLAG_MULTIPLIER,
                       help='Flag evaluations with |error| above this many sigma_hat * M_j')
    group.add_argument('--min-evaluations', type=int, default=DEFAULT_MIN_EVALUATIONS,
                       help='Evaluations below which a judge profile is low-confidence')
    group.add_argument('--competition', action='append', metavar='ID',
                       help='Restrict scoring to this competition (repeatable; default: all)')


def _add_output_options(parser: argparse.ArgumentParser, with_format: bool = False) -> None:
    group = parser.add_argument_group('Output Options')
    group.add_argument('-o', '--output-dir', default=DEFAULT_OUTPUT_DIR,
                       help='Directory receiving every output file')
    if with_format:
        group.add_argument('-F', '--format', choices=FORMATTERS.keys(), default='csv',
                           help='Judge report format')
    group.add_argument('--keep-going', action='store_true',
                       help='Carry on with other disciplines when one fit fails (exit 3)')
    group.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    group.add_argument('-q', '--quiet', action='store_true', help='Only warnings and errors')


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = ArgumentParser(
        prog='judge-scanner',
        description="Judge Scanner - Quantify the accuracy of sports judges from panel scoring data.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {APP_VERSION}')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    fit = commands.add_parser('fit', help='Fit a variance model per discipline',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_input_options(fit)
    _add_model_options(fit)
    _add_output_options(fit)

    for name, help_text in (('score', 'Judge report and flag report'),
                            ('flag', 'Flag report only'),
                            ('report', 'Fit, score and flag in one pass')):
        sub = commands.add_parser(name, help=help_text,
                                  formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        _add_input_options(sub)
        _add_model_options(sub, with_models=name != 'report')
        _add_scoring_options(sub)
        _add_output_options(sub, with_format=name != 'flag')

    simulate = commands.add_parser('simulate', help='Generate a synthetic competition and score it',
                                   formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    group = simulate.add_argument_group('Scenario Options')
    group.add_argument('--scenario', required=True, help='YAML scenario file')
    group.add_argument('--seed', type=int, help='Override the scenario seed')
    _add_scoring_options(simulate)
    _add_output_options(simulate)
    return parser.parse_args(argv)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def run(config: RunConfig) -> int:
    """Execute one subcommand and return its exit code."""
    scanner = JudgeScanner(config)

    # Synthetic run: dataset and scorecard only
    if config.subcommand == 'simulate':
        card = scanner.simulate()
        print(f"Output written to: {scanner.path('dataset.csv')}")
        print(f"Output written to: {scanner.path('scorecard.json')}")
        if card.fit_error:
            print(f"Scenario fit failed: {card.fit_error}", file=sys.stderr)
        return EXIT_OK

    # Ingest every input file
    dataset = scanner.load()

    # Fit inline unless fitted models were given
    failures: Dict[str, FitError] = {}
    if config.subcommand in ('fit', 'report') or not config.models:
        fitted = scanner.fit(dataset)
        models, failures = fitted.models, fitted.failures
    else:
        models = scanner.load_models(dataset)

    # Score and flag against the models
    if config.subcommand != 'fit':
        results = scanner.score(dataset, models)
        if config.subcommand in ('score', 'report'):
            print(f"Output written to: {scanner.export(results)}")
            for line in scanner.export_summary(results):
                print(line)
        print(f"Output written to: {scanner.export_flags(results)}")
    else:
        print(f"Output written to: {scanner.path('models')}")

    # Partial failures only surface with --keep-going
    if failures:
        for key, e in sorted(failures.items()):
            print(f"Error: {key}: {e}", file=sys.stderr)
        return EXIT_PARTIAL if models else EXIT_FIT_FAILURE
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the Judge Scanner."""
    # Parse command line arguments
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        # Validate the options once, then run the subcommand
        return run(RunConfig.from_args(args))
    except FitError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FIT_FAILURE
    except (ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        print("\nUse --help for usage information.", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
