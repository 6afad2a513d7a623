from typing import Any, Dict, List, Optional, Sequence
from xml.sax.saxutils import escape

from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Table, TableStyle

from .base import BaseFormatter, atomic_output, display_value, get_all_fields, humanize_headers

# Relative column widths; unknown fields get 1.0
WEIGHT_MAP: Dict[str, float] = {
    'judge_id': 1.2,
    'discipline_id': 1.5,
    'competition_id': 1.2,
    'performance_id': 1.2,
    'reason': 1.6,
}


class PDFFormatter(BaseFormatter):
    """Formatter for PDF output."""

    extension = 'pdf'

    def format(self, rows: List[Dict[str, Any]], output_path: Optional[str] = None,
               fields: Optional[Sequence[str]] = None, title: str = "Judge Report") -> str:
        """
        Format report rows as a landscape PDF table.

        The document is built with reportlab's invariant mode, so the same rows
        always produce the same bytes.

        Returns:
            str: Path to the PDF file

        Raises:
            ValueError: If output_path is not provided
        """
        if not output_path:
            raise ValueError("output_path is required for PDF formatter")

        output_path = self._ensure_extension(output_path, self.extension)
        styles = getSampleStyleSheet()
        cell_style = ParagraphStyle(
            'TableCell',
            parent=styles['BodyText'],
            fontSize=8,
            leading=10,
            spaceAfter=0,
            spaceBefore=0,
            wordWrap='CJK',
        )
        header_style = ParagraphStyle(
            'TableHeader',
            parent=styles['BodyText'],
            fontSize=10,
            leading=12,
            spaceAfter=0,
            spaceBefore=0,
            wordWrap='CJK',
            textColor=colors.whitesmoke,
        )
        title_style = ParagraphStyle('Title', parent=styles['Title'], fontSize=16, spaceAfter=20)

        with atomic_output(output_path) as tmp:
            doc = SimpleDocTemplate(
                tmp,
                pagesize=landscape(A4),
                leftMargin=20,
                rightMargin=20,
                topMargin=20,
                bottomMargin=20,
                title=title,
                invariant=1,
            )
            elements = [Paragraph(escape(title), title_style)]
            if not rows:
                elements.append(Paragraph("No judges to report.", styles['Normal']))
            else:
                all_fields = get_all_fields(rows, fields)
                table_data = [[Paragraph(escape(h), header_style)
                               for h in humanize_headers(all_fields)]]
                for row in rows:
                    table_data.append([Paragraph(escape(display_value(row.get(f))), cell_style)
                                       for f in all_fields])

                weights = [WEIGHT_MAP.get(f, 1.0) for f in all_fields]
                col_widths = [doc.width * (w / sum(weights)) for w in weights]
                table = Table(table_data, colWidths=col_widths, repeatRows=1)
                style = TableStyle([
                    ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
                    ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
                    ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
                    ('ALIGN', (0, 0), (-1, 0), 'CENTER'),
                    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
                    ('BOTTOMPADDING', (0, 0), (-1, 0), 12),
                    ('GRID', (0, 0), (-1, -1), 1, colors.black),
                    ('VALIGN', (0, 0), (-1, -1), 'TOP'),
                    ('LEFTPADDING', (0, 0), (-1, -1), 4),
                    ('RIGHTPADDING', (0, 0), (-1, -1), 4),
                    ('TOPPADDING', (0, 1), (-1, -1), 4),
                    ('BOTTOMPADDING', (0, 1), (-1, -1), 4),
                ])
                # Alternate row colors
                for i in range(1, len(table_data)):
                    style.add('BACKGROUND', (0, i), (-1, i),
                              colors.lightgrey if i % 2 == 0 else colors.white)
                table.setStyle(style)
                elements.append(table)
            doc.build(elements)
        return output_path
