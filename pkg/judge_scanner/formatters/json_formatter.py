import json
from typing import Any, Dict, List, Optional, Sequence

from .base import BaseFormatter, get_all_fields, write_text


class JSONFormatter(BaseFormatter):
    """Formatter for JSON output."""

    extension = 'json'

    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows as a JSON array, keys in column order.

        Returns:
            str: JSON content or path to the JSON file
        """
        fieldnames = get_all_fields(rows, fields)
        ordered = [{f: row.get(f) for f in fieldnames} for row in rows]
        content = json.dumps(ordered, indent=2) + "\n"
        if output_path:
            return write_text(self._ensure_extension(output_path, self.extension), content)
        return content
