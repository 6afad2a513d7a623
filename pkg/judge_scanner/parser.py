import csv
import io
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

from .control_score import median_control_score
from .errors import EmptyDatasetError, MarkError, SchemaError
from .records import (
    Dataset, MarkRecord, PerformanceGroup, Provenance, Scale, format_score, to_fraction,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordSchema:
    """Column layout of a delimited scoring file."""

    delimiter: str = ','
    required: Tuple[str, ...] = (
        'competition_id',
        'discipline_id',
        'performance_id',
        'judge_id',
        'mark',
        'scale_min',
        'scale_max',
        'scale_step',
    )
    optional: Tuple[str, ...] = ('judge_role',)

    @property
    def columns(self) -> List[str]:
        return list(self.required) + list(self.optional)


DEFAULT_SCHEMA = RecordSchema()


@dataclass(frozen=True)
class RejectedRow:
    row_number: int
    reason: str
    source: Optional[str] = None


@dataclass
class IngestionReport:
    """Every input row ends up either accepted or listed here with a reason."""

    total_rows: int = 0
    rejected: List[RejectedRow] = field(default_factory=list)
    sources: List[Tuple[str, int]] = field(default_factory=list)

    def reject(self, row_number: int, reason: str, source: Optional[str] = None) -> None:
        logger.debug("Rejected row %s%s: %s", row_number, f" of {source}" if source else "", reason)
        self.rejected.append(RejectedRow(row_number, reason, source))

    @property
    def accepted_rows(self) -> int:
        return self.total_rows - len(self.rejected)

    def lines(self) -> List[str]:
        """One ``<row_number>\\t<reason>`` line per rejected row, in input order."""
        multi = len(self.sources) > 1
        out = []
        for r in sorted(self.rejected, key=lambda r: (r.source or '', r.row_number)):
            reason = f"{r.reason} [{r.source}]" if multi and r.source else r.reason
            out.append(f"{r.row_number}\t{reason}")
        return out

    def text(self) -> str:
        lines = self.lines()
        return "\n".join(lines) + ("\n" if lines else "")


class RecordParser:
    """Parser for panel-scoring files."""

    def __init__(self, content: Optional[bytes] = None, filename: Optional[str] = None,
                 schema: RecordSchema = DEFAULT_SCHEMA):
        """
        Initialize the RecordParser.

        Args:
            content: Raw UTF-8 file content
            filename: Path to a scoring file
            schema: Column layout of the input
        """
        self.content = content
        self.filename = filename
        self.schema = schema
        self.records: List[MarkRecord] = []
        self.report = IngestionReport()

        if self.filename:
            if not os.path.exists(self.filename):
                raise SchemaError(f"Input file not found: {self.filename}")
            with open(self.filename, 'rb') as f:
                self.content = f.read()

        if self.content is None:
            raise ValueError("No scoring content or filename provided")
        if isinstance(self.content, str):
            self.content = self.content.encode('utf-8')

    def parse(self) -> List[MarkRecord]:
        """
        Parse the content into mark records.

        Returns:
            List[MarkRecord]: All valid records; rejected rows land in ``self.report``

        Raises:
            SchemaError: If a required column is missing or the input is not UTF-8
        """
        self.records, report = parse_records(io.BytesIO(self.content), self.schema,
                                             source_name=self.filename)
        self.report = report
        return self.records


def parse_records(source: BinaryIO, schema: RecordSchema = DEFAULT_SCHEMA,
                  source_name: Optional[str] = None) -> Tuple[List[MarkRecord], IngestionReport]:
    """
    Parse a UTF-8 delimited byte stream into mark records.

    Args:
        source: Byte stream positioned at the header line
        schema: Column layout
        source_name: Name reported in the ingestion report

    Returns:
        Tuple of the valid records and the ingestion report
    """
    name = source_name
    text = io.StringIO(_decode(source.read(), name), newline='')
    reader = csv.DictReader(text, delimiter=schema.delimiter, restkey='__extra__')

    # Header must carry every required column
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in schema.required if c not in header]
    if missing:
        raise SchemaError(f"Missing required column(s): {', '.join(missing)}")
    reader.fieldnames = header

    report = IngestionReport()
    records: List[MarkRecord] = []
    for row_number, row in enumerate(reader, 1):
        report.total_rows += 1
        # Bad rows go to the report and never abort the file
        try:
            records.append(_parse_row(row, row_number, schema, name))
        except MarkError as e:
            report.reject(row_number, str(e), name)
    report.sources.append((name or '<stream>', report.total_rows))

    logger.info("Parsed %d rows from %s: %d accepted, %d rejected",
                report.total_rows, name or 'stream', len(records), len(report.rejected))
    return records, report


def _decode(data: bytes, name: Optional[str]) -> str:
    try:
        return data.decode('utf-8-sig')
    except UnicodeDecodeError as e:
        line = data.count(b'\n', 0, e.start) + 1
        where = f"line {line} (header)" if line == 1 else f"line {line} (row {line - 1})"
        raise SchemaError(f"{name or 'stream'}: not valid UTF-8 at byte {e.start}, {where}") from None


def _parse_row(row: Dict[str, str], row_number: int, schema: RecordSchema,
               name: Optional[str]) -> MarkRecord:
    if row.get('__extra__'):
        raise MarkError("too many fields")
    values = {}
    for column in schema.required:
        raw = row.get(column)
        if raw is None or not raw.strip():
            raise MarkError(f"missing value for {column}")
        values[column] = raw.strip()

    numbers = {}
    for column in ('mark', 'scale_min', 'scale_max', 'scale_step'):
        try:
            numbers[column] = to_fraction(values[column])
        except (ValueError, ZeroDivisionError):
            raise MarkError(f"unparseable {column} '{values[column]}'") from None

    scale = Scale(numbers['scale_min'], numbers['scale_max'], numbers['scale_step'])
    role = (row.get('judge_role') or '').strip() or None
    return MarkRecord(
        competition_id=values['competition_id'],
        discipline_id=values['discipline_id'],
        performance_id=values['performance_id'],
        judge_id=values['judge_id'],
        mark=numbers['mark'],
        scale=scale,
        judge_role=role,
        row_number=row_number,
        source=name,
    )


def build_dataset(records: Sequence[MarkRecord], report: Optional[IngestionReport] = None,
                  provenance: Optional[Provenance] = None) -> Dataset:
    """
    Group records by (discipline, performance) and compute control scores.

    Groups with fewer than two marks, duplicate judges or mixed scales are
    rejected into the report; every one of their rows is listed.

    Args:
        records: Parsed mark records
        report: Ingestion report to extend with rejected groups
        provenance: Source description to attach to the dataset

    Returns:
        Dataset: The immutable grouped dataset

    Raises:
        EmptyDatasetError: If no group survives
    """
    if report is None:
        report = IngestionReport(total_rows=len(records))
    if not records:
        raise EmptyDatasetError("empty dataset: no records")

    # Group by (discipline, performance); sorted keys make the result order-free
    grouped: Dict[Tuple[str, str], List[MarkRecord]] = defaultdict(list)
    for record in records:
        grouped[record.group_key].append(record)

    disciplines: Dict[str, List[PerformanceGroup]] = defaultdict(list)
    for (discipline_id, performance_id), marks in sorted(grouped.items()):
        marks = sorted(marks, key=lambda m: (m.judge_id, m.competition_id, m.mark))
        try:
            _check_panel(marks)
            group = PerformanceGroup(
                performance_id=performance_id,
                discipline_id=discipline_id,
                marks=tuple(marks),
                control_score=median_control_score(m.mark for m in marks),
            )
        except MarkError as e:
            logger.debug("Rejected performance %s/%s: %s", discipline_id, performance_id, e)
            for m in marks:
                report.reject(m.row_number or 0, f"{e} ({discipline_id}/{performance_id})",
                              m.source)
            continue
        disciplines[discipline_id].append(group)

    if not disciplines:
        raise EmptyDatasetError("empty dataset: every performance group was rejected")

    if provenance is None:
        provenance = Provenance(tuple(report.sources))
    dataset = Dataset(dict(disciplines), provenance)
    logger.info("Built dataset: %d discipline(s), %d performances, %d marks",
                len(dataset.discipline_ids), sum(len(g) for g in dataset.disciplines.values()),
                dataset.n_marks)
    return dataset


def _check_panel(marks: List[MarkRecord]) -> None:
    if len(marks) < 2:
        raise MarkError("panel size < 2")
    judges = [m.judge_id for m in marks]
    if len(set(judges)) != len(judges):
        raise MarkError("duplicate judge")
    if len({m.scale for m in marks}) != 1:
        raise MarkError("mixed scales")


def load_dataset(paths: Iterable[str], schema: RecordSchema = DEFAULT_SCHEMA,
                 report: Optional[IngestionReport] = None) -> Tuple[Dataset, IngestionReport]:
    """
    Parse one or more scoring files into a single dataset.

    Args:
        paths: Scoring files, combined in order
        schema: Column layout shared by every file
        report: Report to fill in place; it keeps its rejections when loading fails

    Returns:
        Tuple of the dataset and the combined ingestion report
    """
    combined = report if report is not None else IngestionReport()
    # Parse each file on its own; rows are numbered per file
    records: List[MarkRecord] = []
    for path in paths:
        parser = RecordParser(filename=path, schema=schema)
        records.extend(parser.parse())
        combined.total_rows += parser.report.total_rows
        combined.rejected.extend(parser.report.rejected)
        combined.sources.append((path, parser.report.total_rows))
    if not records:
        raise EmptyDatasetError("empty dataset: no valid rows")
    return build_dataset(records, combined), combined


def write_records(dataset: Dataset, stream: TextIO, schema: RecordSchema = DEFAULT_SCHEMA) -> None:
    """Serialize a dataset back to the delimited format, one row per mark."""
    with_roles = any(m.judge_role for m in dataset.records())
    columns = schema.columns if with_roles else list(schema.required)
    writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator='\n')
    writer.writerow(columns)
    for record in dataset.records():
        row = [
            record.competition_id,
            record.discipline_id,
            record.performance_id,
            record.judge_id,
            format_score(record.mark),
            format_score(record.scale.min_mark),
            format_score(record.scale.max_mark),
            format_score(record.scale.step),
        ]
        if with_roles:
            row.append(record.judge_role or '')
        writer.writerow(row)
