"""SVG output for the analysis probes, with CSV twins.

Same conventions as the pipeline's plots: no plotting library, one
rectangle per cell, byte-stable output, and every figure's numbers also
emitted as CSV. Counts are shaded on a log scale; signed matrices get a
diverging ramp around zero with undefined cells grayed out.
"""

from __future__ import annotations

import io
import math
from typing import Sequence


class RenderError(ValueError):
    pass


# monotone white -> dark ramp for counts (log scale)
_SHADE = (31, 61, 46)
# diverging endpoints for signed values
_NEG = (40, 80, 150)
_POS = (165, 30, 30)

CELL = 24
MATRIX_CELL = 40
MARGIN_LEFT = 140
MARGIN_TOP = 110


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _mix(base: tuple[int, int, int], t: float) -> str:
    r = round(255 + (base[0] - 255) * t)
    g = round(255 + (base[1] - 255) * t)
    b = round(255 + (base[2] - 255) * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def _check_grid(counts: Sequence[Sequence[int]], x_edges: Sequence[float],
                y_edges: Sequence[float]) -> None:
    if len(x_edges) != len(counts) + 1:
        raise RenderError(f"{len(counts)} count rows need {len(counts) + 1} x edges")
    for row in counts:
        if len(row) != len(y_edges) - 1:
            raise RenderError("ragged count grid")
        for c in row:
            if c < 0:
                raise RenderError(f"negative count {c}")
    for edges in (x_edges, y_edges):
        for a, b in zip(edges, list(edges)[1:]):
            if not a <= b:
                raise RenderError("bin edges must be monotone")


def render_count_heatmap_svg(counts: Sequence[Sequence[int]],
                             x_edges: Sequence[float], y_edges: Sequence[float],
                             x_title: str, y_title: str) -> str:
    """counts[i][j]: x bin i (left to right), y bin j (bottom to top)."""
    _check_grid(counts, x_edges, y_edges)
    nx, ny = len(counts), len(y_edges) - 1
    peak = max((c for row in counts for c in row), default=0)
    scale = math.log1p(peak) if peak > 0 else 1.0

    width = MARGIN_LEFT + CELL * nx + 40
    height = MARGIN_TOP + CELL * ny + 60
    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">\n')
    out.write(f'  <text x="{MARGIN_LEFT + CELL * nx // 2}" y="{MARGIN_TOP + CELL * ny + 40}" '
              f'text-anchor="middle">{_esc(x_title)}</text>\n')
    out.write(f'  <text x="20" y="{MARGIN_TOP + CELL * ny // 2}" text-anchor="middle" '
              f'transform="rotate(-90 20 {MARGIN_TOP + CELL * ny // 2})">'
              f'{_esc(y_title)}</text>\n')
    for i, row in enumerate(counts):
        for j, c in enumerate(row):
            x = MARGIN_LEFT + i * CELL
            y = MARGIN_TOP + (ny - 1 - j) * CELL
            t = math.log1p(c) / scale if peak > 0 else 0.0
            out.write(f'  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                      f'fill="{_mix(_SHADE, t)}" stroke="#999" stroke-width="0.5"/>\n')
    for value, x in ((x_edges[0], MARGIN_LEFT), (x_edges[-1], MARGIN_LEFT + CELL * nx)):
        out.write(f'  <text x="{x}" y="{MARGIN_TOP + CELL * ny + 16}" '
                  f'text-anchor="middle">{value:.4g}</text>\n')
    for value, y in ((y_edges[0], MARGIN_TOP + CELL * ny), (y_edges[-1], MARGIN_TOP)):
        out.write(f'  <text x="{MARGIN_LEFT - 8}" y="{y + 4}" '
                  f'text-anchor="end">{value:.4g}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def count_heatmap_csv(counts: Sequence[Sequence[int]], x_edges: Sequence[float],
                      y_edges: Sequence[float]) -> str:
    _check_grid(counts, x_edges, y_edges)
    out = io.StringIO()
    out.write("x_lo,x_hi,y_lo,y_hi,count\n")
    for i, row in enumerate(counts):
        for j, c in enumerate(row):
            out.write(f"{x_edges[i]!r},{x_edges[i + 1]!r},"
                      f"{y_edges[j]!r},{y_edges[j + 1]!r},{int(c)}\n")
    return out.getvalue()


def render_signed_heatmap_svg(row_labels: Sequence[str], col_labels: Sequence[str],
                              values: Sequence[Sequence[float]],
                              defined: Sequence[Sequence[bool]] | None = None) -> str:
    if len(values) != len(row_labels):
        raise RenderError(f"{len(values)} rows but {len(row_labels)} row labels")
    for row in values:
        if len(row) != len(col_labels):
            raise RenderError("ragged matrix")
    if defined is None:
        defined = [[True] * len(col_labels) for _ in row_labels]
    peak = max((abs(v) for row, dd in zip(values, defined)
                for v, d in zip(row, dd) if d), default=0.0)

    width = MARGIN_LEFT + MATRIX_CELL * len(col_labels) + 20
    height = MARGIN_TOP + MATRIX_CELL * len(row_labels) + 20
    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">\n')
    for j, label in enumerate(col_labels):
        x = MARGIN_LEFT + j * MATRIX_CELL + MATRIX_CELL // 2
        out.write(f'  <text x="{x}" y="{MARGIN_TOP - 8}" text-anchor="start" '
                  f'transform="rotate(-60 {x} {MARGIN_TOP - 8})">{_esc(label)}</text>\n')
    for i, label in enumerate(row_labels):
        y = MARGIN_TOP + i * MATRIX_CELL + MATRIX_CELL // 2 + 4
        out.write(f'  <text x="{MARGIN_LEFT - 8}" y="{y}" '
                  f'text-anchor="end">{_esc(label)}</text>\n')
    for i, (row, drow) in enumerate(zip(values, defined)):
        for j, (v, d) in enumerate(zip(row, drow)):
            x = MARGIN_LEFT + j * MATRIX_CELL
            y = MARGIN_TOP + i * MATRIX_CELL
            if not d:
                fill = "#dddddd"
            elif peak == 0.0:
                fill = "#ffffff"
            else:
                fill = _mix(_POS if v >= 0 else _NEG, abs(v) / peak)
            out.write(f'  <rect x="{x}" y="{y}" width="{MATRIX_CELL}" height="{MATRIX_CELL}" '
                      f'fill="{fill}" stroke="#999" stroke-width="0.5"/>\n')
    out.write("</svg>\n")
    return out.getvalue()


def signed_matrix_csv(row_labels: Sequence[str], col_labels: Sequence[str],
                      values: Sequence[Sequence[float]],
                      defined: Sequence[Sequence[bool]] | None = None) -> str:
    """Undefined entries are left empty, distinguishing them from 0.0."""
    if defined is None:
        defined = [[True] * len(col_labels) for _ in row_labels]
    out = io.StringIO()
    out.write("target," + ",".join(col_labels) + "\n")
    for label, row, drow in zip(row_labels, values, defined):
        cells = [repr(float(v)) if d else "" for v, d in zip(row, drow)]
        out.write(label + "," + ",".join(cells) + "\n")
    return out.getvalue()
