import contextlib
import os
import tempfile
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterator, List, Optional, Sequence

# Column order of the judge report
JUDGE_FIELDS: List[str] = [
    'judge_id',
    'discipline_id',
    'evaluation_count',
    'overall_marking',
    'flagged_count',
    'confidence',
]

# Column order of the flag report
FLAG_FIELDS: List[str] = [
    'judge_id',
    'discipline_id',
    'competition_id',
    'performance_id',
    'error',
    'sigma_hat',
    'threshold',
    'reason',
]

# Shared mapping from data keys to human-readable column labels (for non-CSV/JSON outputs)
HEADER_TITLE_MAP: Dict[str, str] = {
    'judge_id': 'Judge',
    'discipline_id': 'Discipline',
    'evaluation_count': 'Evaluations',
    'overall_marking': 'Marking Score',
    'flagged_count': 'Flagged',
    'confidence': 'Confidence',
    'competition_id': 'Competition',
    'performance_id': 'Performance',
    'error': 'Error',
    'sigma_hat': 'Sigma Hat',
    'threshold': 'Threshold',
    'reason': 'Reason',
}


def get_all_fields(rows: Sequence[Dict[str, Any]],
                   canonical: Optional[Sequence[str]] = None) -> List[str]:
    """
    Build a stable union of field names encountered in rows,
    preferring the canonical ordering.
    """
    all_fields = list(canonical if canonical is not None else JUDGE_FIELDS)
    for row in rows:
        for k in row.keys():
            if k not in all_fields:
                all_fields.append(k)
    return all_fields


def humanize_headers(fields: Sequence[str]) -> List[str]:
    """Convert data field names into human-readable column labels."""
    return [HEADER_TITLE_MAP.get(f, f.replace('_', ' ').title()) for f in fields]


def display_value(value: Any) -> str:
    """Cell text for human-readable formats."""
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


@contextlib.contextmanager
def atomic_output(path: str) -> Iterator[str]:
    """
    Yield a temporary path in the destination directory; it replaces
    ``path`` only once the block completes.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{os.path.basename(path)}.",
                               suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        yield tmp
        # mkstemp creates 0600; give the report the mode open() would
        os.chmod(tmp, 0o666 & ~_current_umask())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path: str, text: str) -> str:
    """Atomically write UTF-8 text to path."""
    with atomic_output(path) as tmp:
        with open(tmp, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    return path


class BaseFormatter(ABC):
    """Base class for all formatters."""

    extension: str = ''

    @abstractmethod
    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows.

        Args:
            rows: Report rows keyed by field name
            output_path: Path to save the formatted output. If None, return as string.
            fields: Canonical column order (judge report columns by default)
            title: Report title, for formats that show one

        Returns:
            str: Formatted output or path to the output file
        """

    def _ensure_extension(self, path: str, extension: str) -> str:
        """Ensure the output path has the correct extension."""
        if not path.endswith(f".{extension}"):
            if not path.endswith('.'):
                path += '.'
            path += extension
        return path
