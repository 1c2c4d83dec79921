"""SVG rendering of traced contours.

Two views: true scale (plane coordinates mapped linearly) and a rectified
view that sends the origin loops' mean log-radii to equally spaced radii so
loops many orders of magnitude apart are all visible.  The rectified view
is labelled on the figure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import gmpy2

from . import __version__

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]
OTHER = "#9a9a9a"


@dataclass
class RenderStyle:
    size: int = 800
    stroke_width: float = 1.5
    colors: list = field(default_factory=lambda: list(PALETTE))
    origin_only: bool = False
    rectified: Optional[bool] = None  # None: rectified when 3 or more origin loops
    max_points: int = 4000


def read_contours_csv(path) -> dict:
    """``contour_id -> {"chart", "closed", "wraps", "polar": [(rho, theta)]}``."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["contour_id"])
            c = out.setdefault(
                k,
                {"chart": row["chart"], "closed": bool(int(row["closed"])), "wraps": int(row["wraps_theta"]), "polar": []},
            )
            c["polar"].append(_polar(row["x"], row["y"]))
    return out


def _polar(xs: str, ys: str):
    # parse at 64 bits with unbounded exponent so tiny loops keep their log-radius
    with gmpy2.context(precision=64, emax=gmpy2.get_emax_max(), emin=gmpy2.get_emin_min()):
        x, y = gmpy2.mpfr(xs), gmpy2.mpfr(ys)
        r2 = x * x + y * y
        rho = float(gmpy2.log(r2) / 2) if r2 > 0 else -math.inf
        return rho, float(gmpy2.atan2(y, x))


def _radial_map(knots: list[float]):
    if len(knots) < 2:
        return None
    radii = list(range(1, len(knots) + 1))

    def f(rho: float) -> float:
        if rho <= knots[0]:
            slope = (radii[1] - radii[0]) / (knots[1] - knots[0])
            return max(0.05, radii[0] + slope * (rho - knots[0]))
        if rho >= knots[-1]:
            slope = (radii[-1] - radii[-2]) / (knots[-1] - knots[-2])
            return radii[-1] + slope * (rho - knots[-1])
        for a in range(len(knots) - 1):
            if knots[a] <= rho <= knots[a + 1]:
                t = (rho - knots[a]) / (knots[a + 1] - knots[a])
                return radii[a] + t * (radii[a + 1] - radii[a])
        return radii[-1]

    return f


def _radius_label(rho: float) -> str:
    # exp(rho) in decimal without overflowing a double
    e10 = rho / math.log(10)
    ex = math.floor(e10)
    return f"{10 ** (e10 - ex):.2f}e{ex}"


def render_svg(contours: dict, report: dict, style: RenderStyle = RenderStyle()) -> str:
    loops = report.get("per_loop", [])
    depth_of = {int(p["contour_id"]): d for d, p in enumerate(loops)}
    rectified = style.rectified if style.rectified is not None else len(loops) >= 3
    radial = _radial_map([p["mean_log_radius"] for p in loops]) if rectified else None
    if radial is None:
        rectified = False

    drawn = []
    for k in sorted(contours):
        if style.origin_only and k not in depth_of:
            continue
        pts = contours[k]["polar"]
        step = max(1, len(pts) // style.max_points)
        pts = pts[::step] + ([pts[-1]] if (len(pts) - 1) % step else [])
        xy = []
        for rho, th in pts:
            r = radial(rho) if rectified else (math.exp(rho) if rho > -745 else 0.0)
            xy.append((r * math.cos(th), r * math.sin(th)))
        drawn.append((k, xy))

    extent = max((max(abs(a), abs(b)) for _, xy in drawn for a, b in xy), default=1.0) or 1.0
    half = style.size / 2
    s = 0.92 * half / extent

    lines = [
        f'<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- biharmonic_nest {__version__} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.size}" height="{style.size}" '
        f'viewBox="0 0 {style.size} {style.size}">',
        f'<rect width="100%" height="100%" fill="white"/>',
    ]
    for k, xy in drawn:
        d = depth_of.get(k)
        color = style.colors[d % len(style.colors)] if d is not None else OTHER
        coords = " ".join(f"{half + s * a:.3f},{half - s * b:.3f}" for a, b in xy)
        lines.append(
            f'<polyline data-contour="{k}" fill="none" stroke="{color}" '
            f'stroke-width="{style.stroke_width}" points="{coords}"/>'
        )
    for d, p in enumerate(loops):
        color = style.colors[d % len(style.colors)]
        lines.append(
            f'<text x="10" y="{20 + 16 * d}" font-family="sans-serif" font-size="12" fill="{color}">'
            f"loop {d + 1}: r ~ {_radius_label(p['mean_log_radius'])}</text>"
        )
    label = "rectified view: radii rescaled between loops, not to scale" if rectified else "true scale"
    lines.append(f'<text x="10" y="{style.size - 12}" font-family="sans-serif" font-size="13">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
