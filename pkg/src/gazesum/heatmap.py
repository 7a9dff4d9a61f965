"""HTML heatmaps of per-token attention over method source."""
from __future__ import annotations

import html
import math
import re
from typing import Sequence

import numpy as np

from .codeparse import AstGraph, _visible_pieces, linearize, tokenize

NEUTRAL = (255, 255, 255)
COLD = (49, 54, 149)
HOT = (165, 0, 38)
N_BUCKETS = 10


def attention_color(value: float, mean: float) -> str:
    """Blue below the mean, white at it, red above; log10 scale clipped at 10x."""
    if mean <= 0:
        raise ValueError("attention mean must be positive")
    if value <= 0:
        x = -1.0
    else:
        x = max(-1.0, min(1.0, math.log10(value / mean)))
    # quantize so colors form discrete buckets; 0 stays exactly neutral
    x = round(x * N_BUCKETS) / N_BUCKETS
    end = HOT if x > 0 else COLD
    a = abs(x)
    rgb = tuple(round(n + (e - n) * a) for n, e in zip(NEUTRAL, end))
    return "#%02x%02x%02x" % rgb


def _token_spans(source: str):
    """(start, end) character offsets of every visible piece, in source order."""
    lines = source.split("\n")
    starts = np.cumsum([0] + [len(line) + 1 for line in lines])
    spans = []
    for tok in tokenize(source):
        for _, (line, col, length) in _visible_pieces(tok):
            off = int(starts[line - 1]) + col - 1
            spans.append((off, off + length))
    return spans


def render_heatmap(source: str, values: Sequence[float], title: str = "",
                   graph: AstGraph | None = None, node_values: Sequence[float] | None = None) -> str:
    """Source text with each visible token's background set by its attention.

    ``values`` are aligned to the visible tokens. When ``graph`` and
    ``node_values`` (aligned to preorder) are given, structural nodes are
    listed beside the code with their own colors.
    """
    spans = _token_spans(source)
    values = [float(v) for v in values]
    if len(values) != len(spans):
        raise KeyError(f"{len(values)} attention values for {len(spans)} visible tokens")
    mean = float(np.mean(values)) if values else 1.0
    out = []
    pos = 0
    for (start, end), v in zip(spans, values):
        out.append(html.escape(source[pos:start]))
        out.append(f'<span class="tok" style="background:{attention_color(v, mean)}" '
                   f'title="{v:.4g}">{html.escape(source[start:end])}</span>')
        pos = end
    out.append(html.escape(source[pos:]))
    side = ""
    if graph is not None and node_values is not None:
        order = linearize(graph)
        nmean = float(np.mean(node_values[: len(order)])) or 1.0
        rows = []
        for depth_label, i, v in zip(_depths(graph, order), order, node_values):
            if graph.nodes[i].visible:
                continue
            rows.append(f'<li style="background:{attention_color(float(v), nmean)}">'
                        f'{"&nbsp;" * 2 * depth_label}{html.escape(graph.nodes[i].label)}</li>')
        side = '<ul class="nodes">' + "".join(rows) + "</ul>"
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>"
        "pre{font-family:monospace;display:inline-block;vertical-align:top}"
        ".nodes{display:inline-block;list-style:none;font-family:monospace;font-size:small}"
        "</style></head><body>\n"
        f"<h3>{html.escape(title)}</h3>\n<pre>{''.join(out)}</pre>{side}\n</body></html>\n")


def _depths(graph: AstGraph, order):
    depth = {graph.root: 0}
    for i in order:
        if i != graph.root:
            depth[i] = depth[graph.parent(i)] + 1
    return [depth[i] for i in order]


def heatmap_tokens(doc: str) -> list[str]:
    """Token texts in the order they appear in a rendered heatmap."""
    return [html.unescape(t) for t in re.findall(r'<span class="tok"[^>]*>(.*?)</span>', doc)]
