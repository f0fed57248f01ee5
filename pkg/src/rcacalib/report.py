"""CSV and SVG renderings of reliability tables and score histograms.

Everything here is plain text formatting with fixed precision so repeated runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

import numpy as np

from .calib import ReliabilityTable, equal_width_bin

RELIABILITY_COLUMNS = ("bin_lo", "bin_hi", "count", "mean_conf", "accuracy", "band_lo", "band_hi")


def _fmt(x):
    return "" if x is None else f"{x:.6f}"


def reliability_csv(table: ReliabilityTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RELIABILITY_COLUMNS)
    for r in table.rows:
        w.writerow([_fmt(r.lo), _fmt(r.hi), r.count, _fmt(r.mean_conf), _fmt(r.accuracy),
                    _fmt(r.band_lo), _fmt(r.band_hi)])
    return buf.getvalue()


def reliability_svg(table: ReliabilityTable, title: str = "", width: int = 420,
                    height: int = 420) -> str:
    """Bar chart of per-bin accuracy next to mean confidence, with the Wilson
    band drawn as a shaded rectangle behind each bin."""
    pad = 48
    pw, ph = width - 2 * pad, height - 2 * pad

    def X(v):
        return pad + v * pw

    def Y(v):
        return pad + (1.0 - v) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{_escape(title)}</text>')
    out.append(f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" '
               f'stroke="black"/>')
    out.append(f'<line x1="{X(0):.1f}" y1="{Y(0):.1f}" x2="{X(1):.1f}" y2="{Y(1):.1f}" '
               f'stroke="#888" stroke-dasharray="4 3"/>')
    for r in table.rows:
        if not r.count:
            continue
        bw = (r.hi - r.lo) * pw
        x0 = X(r.lo)
        out.append(f'<rect x="{x0:.2f}" y="{Y(r.band_hi):.2f}" width="{bw:.2f}" '
                   f'height="{Y(r.band_lo) - Y(r.band_hi):.2f}" fill="#cccccc" '
                   f'fill-opacity="0.6"/>')
        half = bw / 2 - 2
        out.append(f'<rect x="{x0 + 1:.2f}" y="{Y(r.accuracy):.2f}" width="{half:.2f}" '
                   f'height="{Y(0) - Y(r.accuracy):.2f}" fill="#1f77b4"/>')
        out.append(f'<rect x="{x0 + bw / 2 + 1:.2f}" y="{Y(r.mean_conf):.2f}" '
                   f'width="{half:.2f}" height="{Y(0) - Y(r.mean_conf):.2f}" fill="#ff7f0e"/>')
    for k in range(6):
        v = k / 5
        out.append(f'<text x="{X(v):.1f}" y="{height - pad + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v:.1f}</text>')
        out.append(f'<text x="{pad - 6}" y="{Y(v) + 3:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{v:.1f}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="11">confidence</text>')
    out.append(f'<text x="12" y="{height / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="11" '
               f'transform="rotate(-90 12 {height / 2:.1f})">accuracy</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def histogram_csv(scores: Sequence[float], labels: Sequence[int], bins: int = 10) -> str:
    """Counts of correct and incorrect cases per equal-width score bin."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    idx = equal_width_bin(scores, bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin_lo", "bin_hi", "count_correct", "count_incorrect"))
    for b in range(bins):
        m = idx == b
        w.writerow([_fmt(b / bins), _fmt((b + 1) / bins), int(np.sum(m & (labels == 1))),
                    int(np.sum(m & (labels == 0)))])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
