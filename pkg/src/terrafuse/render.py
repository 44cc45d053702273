"""SVG heatmap rendering with a CSV twin.

Every plot is emitted as an SVG plus the same matrix as CSV so the
numbers behind a figure stay machine-checkable. No plotting library:
the SVG is assembled directly and is byte-stable across runs.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence


class RenderError(ValueError):
    pass


# full-shade endpoint of the monotone white -> dark ramp
_SHADE = (31, 61, 46)

CELL = 40
MARGIN_LEFT = 140
MARGIN_TOP = 110


def _color(value: float) -> str:
    r = round(255 + (_SHADE[0] - 255) * value)
    g = round(255 + (_SHADE[1] - 255) * value)
    b = round(255 + (_SHADE[2] - 255) * value)
    return f"#{r:02x}{g:02x}{b:02x}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_heatmap_svg(
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    values: Sequence[Sequence[float]],
) -> str:
    """One rectangle per cell, luminance-monotone shading, labeled axes."""
    if len(values) != len(row_labels):
        raise RenderError(f"{len(values)} rows but {len(row_labels)} row labels")
    for row in values:
        if len(row) != len(col_labels):
            raise RenderError("ragged matrix")
        for v in row:
            if not 0.0 <= v <= 1.0:
                raise RenderError(f"value {v} outside [0, 1]")

    width = MARGIN_LEFT + CELL * len(col_labels) + 20
    height = MARGIN_TOP + CELL * len(row_labels) + 20
    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">\n'
    )
    for j, label in enumerate(col_labels):
        x = MARGIN_LEFT + j * CELL + CELL // 2
        out.write(
            f'  <text x="{x}" y="{MARGIN_TOP - 8}" text-anchor="start" '
            f'transform="rotate(-60 {x} {MARGIN_TOP - 8})">{_esc(label)}</text>\n'
        )
    for i, label in enumerate(row_labels):
        y = MARGIN_TOP + i * CELL + CELL // 2 + 4
        out.write(f'  <text x="{MARGIN_LEFT - 8}" y="{y}" text-anchor="end">{_esc(label)}</text>\n')
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            x = MARGIN_LEFT + j * CELL
            y = MARGIN_TOP + i * CELL
            out.write(
                f'  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                f'fill="{_color(v)}" stroke="#999" stroke-width="0.5"/>\n'
            )
    out.write("</svg>\n")
    return out.getvalue()


def heatmap_csv(
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    values: Sequence[Sequence[float]],
) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["", *col_labels])
    for label, row in zip(row_labels, values):
        writer.writerow([label, *[repr(v) for v in row]])
    return buf.getvalue()
