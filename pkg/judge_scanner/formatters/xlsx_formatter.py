from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .base import BaseFormatter, atomic_output, get_all_fields, humanize_headers


class XLSXFormatter(BaseFormatter):
    """Formatter for Excel (XLSX) output."""

    extension = 'xlsx'

    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows as an Excel (XLSX) workbook with one sheet.

        Returns:
            str: Path to the XLSX file

        Raises:
            ValueError: If output_path is not provided
        """
        if not output_path:
            raise ValueError("output_path is required for XLSX formatter")

        output_path = self._ensure_extension(output_path, self.extension)
        all_fields = get_all_fields(rows, fields)
        df = pd.DataFrame(rows, columns=all_fields)
        df.columns = humanize_headers(all_fields)

        with atomic_output(output_path) as tmp:
            df.to_excel(tmp, index=False, engine='openpyxl', sheet_name=title[:31])
        return output_path
