"""Shared figure style and deterministic PNG rendering.

Figures follow the house style: 8 pt serif text, 1 pt axis borders. PNG
bytes must be reproducible for identical inputs, so the savefig metadata
is pinned and no timestamps enter the canvas.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FONT_SIZE = 8.0
BORDER_PT = 1.0

STYLE = {
    "font.family": "serif",
    "font.size": FONT_SIZE,
    "axes.titlesize": FONT_SIZE,
    "axes.labelsize": FONT_SIZE,
    "xtick.labelsize": FONT_SIZE,
    "ytick.labelsize": FONT_SIZE,
    "legend.fontsize": FONT_SIZE,
    "axes.linewidth": BORDER_PT,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def style_context():
    return plt.rc_context(STYLE)


def fig_to_png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": "shm-agents"})
    plt.close(fig)
    return buf.getvalue()
