"""Standalone SVG emission for accuracy curves.

Hand-rolled rather than delegated to a plotting library so that the output
is a minimal, predictable document: one <polyline> per series with exactly
one point per phase (or per sweep position), which downstream tooling can
parse with any XML reader.
"""

from __future__ import annotations

from .errors import DataError

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 60, 20, 30, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _svg_document(series: list[tuple[str, list[float], list[float]]],
                  x_label: str, y_label: str, title: str) -> str:
    """series: (label, xs, ys) triples; returns a complete SVG document."""
    if not series:
        raise DataError("nothing to plot")
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(0.0, min(all_y)), max(1.0, max(all_y))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="16" y="{_H / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2:.1f})" text-anchor="middle">{y_label}</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _H - _MB - (tick - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)
        parts.append(
            f'<text x="{_ML - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{tick:g}</text>'
        )
    for i, (label, xs, ys) in enumerate(series):
        px = _scale(xs, x_lo, x_hi, _ML, _W - _MR)
        py = _scale(ys, y_lo, y_hi, _H - _MB, _MT)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        color = _COLORS[i % len(_COLORS)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 4}" y="{_MT + 16 * (i + 1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def accuracy_curve_svg(curves: list[tuple[str, list[float]]]) -> str:
    """Accuracy versus phase; one polyline per labeled run, K+1 points each."""
    series = [
        (label, list(range(len(accs))), [float(a) for a in accs])
        for label, accs in curves
    ]
    return _svg_document(series, "phase", "accuracy", "accuracy by phase")


def lambda_sweep_svg(cells: list[dict]) -> str:
    """Last-phase accuracy versus the blend weight, one polyline per epoch count.

    Each cell is a dict with keys ``lambda``, ``epochs``, ``last_accuracy``.
    """
    if not cells:
        raise DataError("nothing to plot")
    by_epochs: dict[int, list[tuple[float, float]]] = {}
    for cell in cells:
        by_epochs.setdefault(int(cell["epochs"]), []).append(
            (float(cell["lambda"]), float(cell["last_accuracy"]))
        )
    series = []
    for epochs in sorted(by_epochs):
        pts = sorted(by_epochs[epochs])
        series.append(
            (f"e={epochs}", [p[0] for p in pts], [p[1] for p in pts])
        )
    return _svg_document(series, "lambda", "last-phase accuracy", "blend weight sweep")
