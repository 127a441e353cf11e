"""
Minimal SVG line charts: one series, an optional threshold line and
shaded labeled seconds. Output is plain text so identical inputs give
identical files.
"""

import logging
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)


class SvgLineChart:
    """Render a per-second series the way detection results are usually inspected."""

    def __init__(self, width: int = 900, height: int = 320, margin: int = 48):
        self.width = width
        self.height = height
        self.margin = margin

    def render(self, values: Sequence[float], title: str = '',
               threshold: Optional[float] = None,
               labels: Optional[Sequence[bool]] = None,
               flagged: Optional[Sequence[int]] = None) -> str:
        """
        Build the SVG document.

        Args:
            values: Series indexed by second; NaN entries break the line
            title: Chart title
            threshold: Drawn as a solid horizontal line when given
            labels: Boolean per second; labeled seconds are shaded
            flagged: Seconds marked with a dot on the series

        Returns:
            str: SVG markup
        """
        y = np.asarray(values, dtype=float)
        n = y.shape[0]
        finite = y[np.isfinite(y)]
        lo = min(0.0, float(finite.min())) if finite.size else 0.0
        hi = float(finite.max()) if finite.size else 1.0
        if threshold is not None and np.isfinite(threshold):
            hi = max(hi, float(threshold))
        if hi <= lo:
            hi = lo + 1.0

        left, top = self.margin, self.margin // 2
        plot_w = self.width - left - self.margin // 2
        plot_h = self.height - top - self.margin

        def sx(t: float) -> float:
            return left + (t / max(n - 1, 1)) * plot_w

        def sy(v: float) -> float:
            return top + plot_h - (v - lo) / (hi - lo) * plot_h

        parts: List[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
            f'<text x="{left}" y="{top - 6}" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        ]

        if labels is not None:
            band = plot_w / max(n - 1, 1)
            for t in np.flatnonzero(np.asarray(labels, dtype=bool)):
                parts.append(
                    f'<rect x="{sx(t) - band / 2:.2f}" y="{top}" width="{band:.2f}" height="{plot_h}" '
                    f'fill="#d62728" fill-opacity="0.18"/>')

        # axes
        parts.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>')
        parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
        parts.append(f'<text x="{left - 4}" y="{top + plot_h}" font-family="sans-serif" font-size="10" '
                     f'text-anchor="end">{lo:.4g}</text>')
        parts.append(f'<text x="{left - 4}" y="{top + 10}" font-family="sans-serif" font-size="10" '
                     f'text-anchor="end">{hi:.4g}</text>')
        parts.append(f'<text x="{left + plot_w}" y="{top + plot_h + 14}" font-family="sans-serif" font-size="10" '
                     f'text-anchor="end">{n - 1} s</text>')

        for segment in self._segments(y):
            points = ' '.join(f'{sx(t):.2f},{sy(y[t]):.2f}' for t in segment)
            parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1" points="{points}"/>')

        if threshold is not None and np.isfinite(threshold):
            ty = sy(float(threshold))
            parts.append(f'<line x1="{left}" y1="{ty:.2f}" x2="{left + plot_w}" y2="{ty:.2f}" '
                         f'stroke="#2ca02c" stroke-width="1.5"/>')

        for t in flagged if flagged is not None else []:
            if 0 <= t < n and np.isfinite(y[t]):
                parts.append(f'<circle cx="{sx(t):.2f}" cy="{sy(y[t]):.2f}" r="2.5" fill="#d62728"/>')

        parts.append('</svg>')
        return '\n'.join(parts) + '\n'

    @staticmethod
    def _segments(y: np.ndarray) -> List[List[int]]:
        segments, current = [], []
        for t, v in enumerate(y):
            if np.isfinite(v):
                current.append(t)
            elif current:
                segments.append(current)
                current = []
        if current:
            segments.append(current)
        return segments

    def save(self, path: str, values: Sequence[float], **kwargs) -> str:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.render(values, **kwargs))
        logger.debug("Wrote chart %s", path)
        return path
