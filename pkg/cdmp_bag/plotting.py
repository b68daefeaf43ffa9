"""Line charts as plain SVG text, derived from the CSV outputs"""

from xml.sax.saxutils import escape

from cdmp_bag.exceptions import FormatError
from cdmp_bag.utils import write_atomic

WIDTH = 640
HEIGHT = 360
PAD = 48
PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)


def _bounds(values, extra=()):
    values = [float(v) for v in values] + [float(v) for v in extra]
    if not values:
        return 0.0, 1.0
    lo, hi = min(values), max(values)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(
    series: dict,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    rules: dict = None,
    width: int = WIDTH,
    height: int = HEIGHT,
) -> str:
    """SVG document with one polyline per series.

    Args:
        series (dict): label -> (xs, ys).
        title, xlabel, ylabel (str): Text.
        rules (dict): label -> y of a dashed horizontal line, e.g. a target.

    Returns:
        str: SVG text, identical for identical input.
    """
    rules = rules or {}
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x_lo, x_hi = _bounds(xs_all)
    y_lo, y_hi = _bounds(ys_all, rules.values())

    def sx(x):
        return PAD + (float(x) - x_lo) * (width - 2 * PAD) / (x_hi - x_lo)

    def sy(y):
        return height - PAD - (float(y) - y_lo) * (height - 2 * PAD) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{PAD}" y1="{height - PAD}" x2="{width - PAD}" y2="{height - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{height - PAD}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{PAD / 2:.1f}" font-size="14" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{escape(ylabel)}</text>',
        f'<text x="{PAD - 4}" y="{height - PAD:.1f}" font-size="10" text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4:.1f}" font-size="10" text-anchor="end">{y_hi:.3g}</text>',
        f'<text x="{PAD}" y="{height - PAD + 14:.1f}" font-size="10" text-anchor="middle">{x_lo:.3g}</text>',
        f'<text x="{width - PAD}" y="{height - PAD + 14:.1f}" font-size="10" text-anchor="middle">{x_hi:.3g}</text>',
    ]
    for label, y in rules.items():
        parts.append(
            f'<line x1="{PAD}" y1="{sy(y):.2f}" x2="{width - PAD}" y2="{sy(y):.2f}" '
            'stroke="black" stroke-dasharray="6 4"/>'
        )
        parts.append(
            f'<text x="{width - PAD}" y="{sy(y) - 4:.2f}" font-size="10" text-anchor="end">{escape(label)}</text>'
        )
    for i, (label, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - PAD + 4}" y="{PAD + 12 * (i + 1)}" font-size="10" fill="{colour}">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, svg: str) -> None:
    try:
        write_atomic(path, svg)
    except OSError as e:
        raise FormatError(f"Cannot write file: {e.strerror}", path) from e


def episode_charts(traces: list, area_target: float = 0.6, volume_target: float = 0.7, delta_e_target: float = 0.2) -> dict:
    """Area ratio, volume ratio and elongation error against action index.

    Returns:
        dict: file stem -> SVG text.
    """
    charts = {}
    for key, title, target in (
        ("area_ratio", "Opening area ratio", area_target),
        ("volume_ratio", "Volume ratio", volume_target),
        ("delta_elongation", "Elongation error", delta_e_target),
    ):
        series = {}
        for trace in traces:
            xs = [record.index for record in trace.records]
            ys = [getattr(record.report, key) for record in trace.records]
            series[f"seed {trace.seed}"] = (xs, ys)
        charts[key] = line_chart(series, title, "action", key, {"target": target})
    return charts
