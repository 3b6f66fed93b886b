"""Static SVG grouped-bar charts, written without plotting dependencies.

One chart: groups along the x axis (scenarios), one bar per series
(model) inside each group, optional whiskers for a (lo, hi) spread.
Geometry is fixed-size with a small margin budget; values are scaled
into the drawable band, with room for negative bars (DIC can be
negative).
"""

from __future__ import annotations

from pathlib import Path

_PALETTE = ("#4878a8", "#e49444", "#5fa05a", "#b65fa0", "#8a8a8a", "#c44e52")

_W, _H = 760, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 46, 64


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def grouped_bar_svg(
    path,
    title: str,
    group_labels: list[str],
    series_labels: list[str],
    values,
    whiskers=None,
    y_label: str = "",
) -> None:
    """values[g][s] is the bar height for series s in group g; whiskers,
    when given, holds (lo, hi) tuples of the same shape or None entries."""
    groups = len(group_labels)
    series = len(series_labels)
    flat = [values[g][s] for g in range(groups) for s in range(series)]
    if whiskers is not None:
        for g in range(groups):
            for s in range(series):
                if whiskers[g][s] is not None:
                    flat.extend(whiskers[g][s])
    vmax = max(max(flat), 0.0)
    vmin = min(min(flat), 0.0)
    if vmax == vmin:
        vmax = vmin + 1.0
    span = vmax - vmin

    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B

    def y_of(v: float) -> float:
        return _MARGIN_T + plot_h * (vmax - v) / span

    group_w = plot_w / groups
    bar_w = group_w * 0.8 / series

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15" font-weight="bold">{title}</text>',
    ]
    # y axis with 5 ticks
    for i in range(6):
        v = vmin + span * i / 5
        y = y_of(v)
        parts.append(f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{_W - _MARGIN_R}" '
                     f'y2="{y:.1f}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{_MARGIN_T + plot_h / 2}" '
                     f'font-family="sans-serif" font-size="12" text-anchor="middle" '
                     f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2})">{y_label}</text>')

    zero_y = y_of(0.0)
    for g in range(groups):
        gx = _MARGIN_L + g * group_w
        for s in range(series):
            x = gx + group_w * 0.1 + s * bar_w
            v = values[g][s]
            top = min(y_of(v), zero_y)
            height = abs(y_of(v) - zero_y)
            color = _PALETTE[s % len(_PALETTE)]
            parts.append(f'<rect x="{x:.1f}" y="{top:.1f}" width="{bar_w * 0.92:.1f}" '
                         f'height="{max(height, 0.5):.1f}" fill="{color}"/>')
            if whiskers is not None and whiskers[g][s] is not None:
                lo, hi = whiskers[g][s]
                cx = x + bar_w * 0.46
                parts.append(f'<line x1="{cx:.1f}" y1="{y_of(lo):.1f}" x2="{cx:.1f}" '
                             f'y2="{y_of(hi):.1f}" stroke="#333333" stroke-width="1.5"/>')
                for v_w in (lo, hi):
                    parts.append(f'<line x1="{cx - 4:.1f}" y1="{y_of(v_w):.1f}" '
                                 f'x2="{cx + 4:.1f}" y2="{y_of(v_w):.1f}" '
                                 f'stroke="#333333" stroke-width="1.5"/>')
        parts.append(f'<text x="{gx + group_w / 2:.1f}" y="{_H - _MARGIN_B + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="12">'
                     f'{group_labels[g]}</text>')

    parts.append(f'<line x1="{_MARGIN_L}" y1="{zero_y:.1f}" x2="{_W - _MARGIN_R}" '
                 f'y2="{zero_y:.1f}" stroke="#333333" stroke-width="1"/>')
    # legend
    lx = _MARGIN_L
    ly = _H - 22
    for s, label in enumerate(series_labels):
        color = _PALETTE[s % len(_PALETTE)]
        parts.append(f'<rect x="{lx}" y="{ly - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly}" font-family="sans-serif" '
                     f'font-size="12">{label}</text>')
        lx += 16 + 9 * len(label) + 22
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
