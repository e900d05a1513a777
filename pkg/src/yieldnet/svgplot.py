"""Dependency-free SVG scatter plots of actual vs predicted yield."""

from xml.sax.saxutils import escape

WIDTH = 480
HEIGHT = 480
MARGIN = 56


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_scatter_svg(pairs, mae: float | None = None, r: float | None = None,
                       title: str = "") -> bytes:
    """One circle marker per (actual, predicted) pair plus the identity line.

    Both axes share one range, so perfect predictions land exactly on the
    drawn diagonal.
    """
    pairs = [(float(a), float(b)) for a, b in pairs]
    if not pairs:
        raise ValueError("scatter plot needs at least one pair")
    lo = min(min(a, b) for a, b in pairs)
    hi = max(max(a, b) for a, b in pairs)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    span = hi - lo
    inner = WIDTH - 2 * MARGIN

    def sx(v):
        return MARGIN + (v - lo) / span * inner

    def sy(v):
        return HEIGHT - MARGIN - (v - lo) / span * inner

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        # frame
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        # identity line
        f'<line class="identity" x1="{_fmt(sx(lo))}" y1="{_fmt(sy(lo))}" '
        f'x2="{_fmt(sx(hi))}" y2="{_fmt(sy(hi))}" stroke="#999" '
        'stroke-dasharray="4 3" stroke-width="1"/>',
    ]
    ticks = 5
    for i in range(ticks):
        v = lo + span * i / (ticks - 1)
        x = sx(v)
        y = sy(v)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{HEIGHT - MARGIN}" x2="{_fmt(x)}" '
            f'y2="{HEIGHT - MARGIN + 5}" stroke="#333" stroke-width="1"/>')
        parts.append(
            f'<text x="{_fmt(x)}" y="{HEIGHT - MARGIN + 18}" font-size="10" '
            f'text-anchor="middle" font-family="sans-serif">{v:.4g}</text>')
        parts.append(
            f'<line x1="{MARGIN - 5}" y1="{_fmt(y)}" x2="{MARGIN}" '
            f'y2="{_fmt(y)}" stroke="#333" stroke-width="1"/>')
        parts.append(
            f'<text x="{MARGIN - 8}" y="{_fmt(y + 3)}" font-size="10" '
            f'text-anchor="end" font-family="sans-serif">{v:.4g}</text>')
    for actual, predicted in pairs:
        parts.append(
            f'<circle class="marker" cx="{_fmt(sx(actual))}" '
            f'cy="{_fmt(sy(predicted))}" r="3" fill="#2b6cb0" fill-opacity="0.6"/>')
    if title:
        parts.append(
            f'<text x="{WIDTH / 2:.0f}" y="{MARGIN - 28}" font-size="14" '
            f'text-anchor="middle" font-family="sans-serif">{escape(title)}</text>')
    legend = []
    if mae is not None:
        legend.append(f"MAE = {mae:.4g}")
    legend.append("r = n/a" if r is None else f"r = {r:.4g}")
    parts.append(
        f'<text class="legend" x="{MARGIN + 6}" y="{MARGIN - 8}" font-size="11" '
        f'font-family="sans-serif">{escape(", ".join(legend))}</text>')
    parts.append(
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 14}" font-size="11" '
        'text-anchor="middle" font-family="sans-serif">actual yield (bu/acre)</text>')
    parts.append(
        f'<text x="14" y="{HEIGHT / 2:.0f}" font-size="11" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 14 {HEIGHT / 2:.0f})">'
        'predicted yield (bu/acre)</text>')
    parts.append("</svg>")
    return "\n".join(parts).encode("utf-8")
