"""
CSV and SVG output for count, mapping and accuracy reports.

CSV layouts are fixed (header + rows, "\\n" line endings, floats with 6
significant digits) so identical inputs give byte-identical files. Charts are
derived views built from the same report objects and never feed back into the
CSV.
"""

import csv
import io
import json
import logging
import math
from html import escape
from typing import Dict, List, Sequence, Tuple

from net_ir import COUNT_FIELDS, CountReport
from pim_map import LayerCost, MappingReport, SweepTable
from robustness import EvalReport

logger = logging.getLogger(__name__)

MAPPING_HEADER = [
    "layer_id",
    "rows",
    "cols",
    "passes",
    "utilization",
    "input_reads",
    "output_writes",
    "psum_updates",
]
EVAL_HEADER = ["axis_value", "accuracy_mean", "accuracy_std", "trials", "master_seed"]
COUNT_HEADER = ["layer_id", "kind", *COUNT_FIELDS]

COLORS = ["#007AFF", "#FF9500", "#34C759", "#AF52DE", "#FF2D55", "#5AC8FA"]

Series = Dict[str, List[Tuple[float, float]]]


def fmt_float(value: float) -> str:
    return f"{value:.6g}"


def _write(header: Sequence[str], rows: List[List[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def counts_csv(report: CountReport) -> str:
    rows = []
    for row in report.layers + [report.total]:
        rows.append([row.layer_id, row.kind] + [getattr(row, f) for f in COUNT_FIELDS])
    return _write(COUNT_HEADER, rows)


def _cost_row(cost: LayerCost) -> List[object]:
    return [
        cost.layer_id,
        cost.rows,
        cost.cols,
        cost.passes,
        fmt_float(cost.utilization),
        cost.input_reads,
        cost.output_writes,
        cost.psum_updates,
    ]


def mapping_csv(reports: Sequence[MappingReport]) -> str:
    """Weighted-layer rows plus a TOTAL row for each array size, in order."""
    rows = []
    for rep in reports:
        rows.extend(_cost_row(cost) for cost in rep.layers)
        rows.append(_cost_row(rep.total))
    return _write(MAPPING_HEADER, rows)


def mapping_json(reports: Sequence[MappingReport]) -> str:
    """Mapping reports with per-layer activation reuse and the weighting note."""
    out = []
    for rep in reports:
        data = rep.model_dump()
        rows = data["layers"] + [data["total"]]
        for cost, row in zip(rep.layers + [rep.total], rows):
            row["activation_reuse"] = cost.activation_reuse
        out.append(data)
    return json.dumps(out, indent=2)


def eval_csv(report: EvalReport) -> str:
    rows = [
        [
            fmt_float(p.axis_value),
            fmt_float(p.accuracy_mean),
            fmt_float(p.accuracy_std),
            p.trials,
            p.master_seed,
        ]
        for p in report.points
    ]
    return _write(EVAL_HEADER, rows)


def line_chart(
    title: str,
    x_label: str,
    y_label: str,
    series: Series,
    log_x: bool = False,
    width: int = 800,
    height: int = 500,
) -> str:
    """Minimal SVG line plot: axes, one polyline per series, labels, legend."""
    margin = {"top": 50, "right": 180, "bottom": 70, "left": 90}
    chart_w = width - margin["left"] - margin["right"]
    chart_h = height - margin["top"] - margin["bottom"]

    def tx(x: float) -> float:
        return math.log2(x) if log_x and x > 0 else x

    points = [(tx(x), y) for pts in series.values() for x, y in pts]
    if not points:
        points = [(0.0, 0.0)]
    x_min, x_max = min(p[0] for p in points), max(p[0] for p in points)
    y_min, y_max = min(0.0, min(p[1] for p in points)), max(p[1] for p in points)
    x_span = (x_max - x_min) or 1.0
    y_span = (y_max - y_min) or 1.0

    def px(x: float) -> float:
        return margin["left"] + (tx(x) - x_min) / x_span * chart_w

    def py(y: float) -> float:
        return margin["top"] + chart_h - (y - y_min) / y_span * chart_h

    left, bottom = margin["left"], margin["top"] + chart_h
    svg = f'<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">\n'  # noqa: E501
    svg += (
        f'  <text x="{width / 2}" y="25" text-anchor="middle" font-size="16" '
        f'font-weight="bold">{escape(title)}</text>\n'
    )
    svg += f'  <line x1="{left}" y1="{margin["top"]}" x2="{left}" y2="{bottom}" stroke="#333"/>\n'  # noqa: E501
    svg += f'  <line x1="{left}" y1="{bottom}" x2="{left + chart_w}" y2="{bottom}" stroke="#333"/>\n'  # noqa: E501

    xs = sorted({x for pts in series.values() for x, _ in pts})
    for x in xs:
        svg += (
            f'  <text x="{px(x):.1f}" y="{bottom + 18}" text-anchor="middle" '
            f'font-size="11" fill="#666">{fmt_float(x)}</text>\n'
        )
    for i in range(5):
        y = y_min + y_span * i / 4
        svg += (
            f'  <text x="{left - 8}" y="{py(y) + 4:.1f}" text-anchor="end" '
            f'font-size="11" fill="#666">{fmt_float(y)}</text>\n'
        )
    svg += (
        f'  <text x="{left + chart_w / 2}" y="{height - 20}" text-anchor="middle" '
        f'font-size="13">{escape(x_label)}</text>\n'
    )
    svg += (
        f'  <text x="20" y="{margin["top"] + chart_h / 2}" text-anchor="middle" '
        f'font-size="13" transform="rotate(-90 20 {margin["top"] + chart_h / 2})">'
        f"{escape(y_label)}</text>\n"
    )

    for i, (name, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        svg += f'  <polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>\n'  # noqa: E501
        ly = margin["top"] + 20 * i
        lx = left + chart_w + 20
        svg += f'  <rect x="{lx}" y="{ly}" width="12" height="12" fill="{color}"/>\n'
        svg += f'  <text x="{lx + 18}" y="{ly + 11}" font-size="12">{escape(name)}</text>\n'  # noqa: E501

    svg += "</svg>\n"
    return svg


def sweep_charts(tables: Sequence[SweepTable]) -> Dict[str, str]:
    """Latency (passes), input reads and utilization against square array size.

    Rectangular sizes stay in the CSV but have no place on an N x N axis.
    """
    metrics = {
        "latency": ("passes", "estimated latency (passes)"),
        "reads": ("input_reads", "input activation reads"),
        "utilization": ("utilization", "averaged utilization"),
    }
    square = {
        t.network: sorted(
            (rep for rep in t.reports if rep.rows == rep.cols), key=lambda r: r.rows
        )
        for t in tables
    }
    skipped = sorted(
        {f"{rep.rows}x{rep.cols}" for t in tables for rep in t.reports}
        - {f"{rep.rows}x{rep.cols}" for reps in square.values() for rep in reps}
    )
    if skipped:
        logger.info(f"Charts skip non-square sizes: {', '.join(skipped)}")

    charts = {}
    for key, (attr, label) in metrics.items():
        series: Series = {
            name: [(rep.rows, getattr(rep.total, attr)) for rep in reps]
            for name, reps in square.items()
        }
        charts[f"{key}.svg"] = line_chart(
            f"Impact of array size on {label}",
            "array size (N x N)",
            label,
            series,
            log_x=True,
        )
    return charts


def eval_chart(reports: Sequence[EvalReport]) -> str:
    axis = reports[0].axis if reports else "sigma"
    series: Series = {
        r.network: [(p.axis_value, p.accuracy_mean) for p in r.points] for r in reports
    }
    return line_chart(f"Accuracy vs {axis}", axis, "accuracy", series)
