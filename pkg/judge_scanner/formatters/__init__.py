"""Formatters for the judge report in different output formats."""

from .base import BaseFormatter, atomic_output, write_text
from .csv_formatter import CSVFormatter
from .json_formatter import JSONFormatter
from .xlsx_formatter import XLSXFormatter
from .pdf_formatter import PDFFormatter
from .markdown_formatter import MarkdownFormatter

__all__ = [
    'BaseFormatter',
    'CSVFormatter',
    'JSONFormatter',
    'XLSXFormatter',
    'PDFFormatter',
    'MarkdownFormatter',
    'atomic_output',
    'write_text',
]
