import csv
import io
from typing import Any, Dict, List, Optional, Sequence

from .base import BaseFormatter, get_all_fields, write_text


class CSVFormatter(BaseFormatter):
    """Formatter for CSV output. Keeps the raw field names as header."""

    extension = 'csv'

    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows as CSV.

        Floats are written at full precision and missing values as empty cells.

        Returns:
            str: CSV content or path to the CSV file
        """
        fieldnames = get_all_fields(rows, fields)
        output = io.StringIO()
        writer = csv.writer(output, lineterminator='\n')
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow(["" if row.get(f) is None else row.get(f) for f in fieldnames])

        if output_path:
            return write_text(self._ensure_extension(output_path, self.extension),
                              output.getvalue())
        return output.getvalue()
