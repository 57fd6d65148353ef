"""Plain-SVG rendering of an embedding and, optionally, an optimizer trajectory."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#444444", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.4f}".rstrip("0").rstrip(".")


def render_svg(table, run_log=None, size: float = 800.0, margin: float = 20.0) -> str:
    """Disk outline, one dot per node coloured by level, and the run's mean path and samples.

    A ball of radius ``1/sqrt(c)`` is drawn as a circle of radius ``size/2 - margin``.
    """
    radius = size / 2.0 - margin
    scale = radius * math.sqrt(table.ball.c)
    cx = cy = size / 2.0

    def xy(z) -> tuple[str, str]:
        # SVG y grows downwards
        return _fmt(cx + scale * z[0]), _fmt(cy - scale * z[1])

    levels = sorted(set(table.levels.values())) or [0]
    colour = {lv: PALETTE[i % len(PALETTE)] for i, lv in enumerate(levels)}

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(size)}" height="{_fmt(size)}" '
        f'viewBox="0 0 {_fmt(size)} {_fmt(size)}">',
        f'<circle class="disk" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(radius)}" fill="none" stroke="black"/>',
        '<g class="nodes">',
    ]
    for i in table.ids:
        lv = table.levels.get(int(i), 0)
        x, y = xy(table[int(i)])
        out.append(f'<circle class="node" data-id="{int(i)}" data-level="{lv}" cx="{x}" cy="{y}" r="2" '
                   f'fill="{colour.get(lv, PALETTE[0])}"/>')
    out.append("</g>")

    if run_log is not None:
        start = run_log.header.get("z_mu_init")
        path = ([start] if start is not None else []) + [r["z_mu_after"] for r in run_log.records if "z_mu_after" in r]
        if path:
            pts = " ".join(",".join(xy(z)) for z in path)
            out.append(f'<polyline class="trajectory" points="{pts}" fill="none" stroke="crimson" stroke-width="1.5"/>')
        out.append('<g class="samples">')
        arm = 3.0
        for r in run_log.records:
            for s in r["samples"]:
                if "z_mapped" not in s:
                    continue
                x, y = (float(a) for a in xy(s["z_mapped"]))
                out.append(
                    f'<path class="sample" d="M{_fmt(x - arm)},{_fmt(y - arm)}L{_fmt(x + arm)},{_fmt(y + arm)}'
                    f'M{_fmt(x - arm)},{_fmt(y + arm)}L{_fmt(x + arm)},{_fmt(y - arm)}" stroke="black" '
                    f'stroke-width="0.5"/>'
                )
        out.append("</g>")

    legend_y = margin
    for lv in levels:
        out.append(f'<text x="{_fmt(margin)}" y="{_fmt(legend_y)}" font-size="10" fill="{colour[lv]}">'
                   f'{escape("k=" + str(lv))}</text>')
        legend_y += 12
    out.append("</svg>")
    return "\n".join(out) + "\n"
