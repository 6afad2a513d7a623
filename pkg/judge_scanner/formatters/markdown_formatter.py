from typing import Any, Dict, List, Optional, Sequence

from .base import BaseFormatter, display_value, get_all_fields, humanize_headers, write_text


def _escape_md(text: str) -> str:
    """Escape Markdown table special chars and normalize newlines."""
    if text is None:
        return ""
    s = str(text)
    s = s.replace("\\", "\\\\").replace("|", "\\|")
    s = s.replace("\r\n", "<br>").replace("\n", "<br>")
    return s


class MarkdownFormatter(BaseFormatter):
    """Formatter for Markdown (.md) table output."""

    extension = 'md'

    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows as a titled Markdown table.

        Returns:
            str: Markdown content or path to the .md file
        """
        all_fields = get_all_fields(rows, fields)
        header = "| " + " | ".join(_escape_md(h) for h in humanize_headers(all_fields)) + " |"
        separator = "| " + " | ".join(["---"] * len(all_fields)) + " |"
        lines = [f"# {_escape_md(title)}", "", header, separator]
        for row in rows:
            lines.append("| " + " | ".join(_escape_md(display_value(row.get(f)))
                                           for f in all_fields) + " |")
        content = "\n".join(lines) + "\n"

        if output_path:
            return write_text(self._ensure_extension(output_path, self.extension), content)
        return content
