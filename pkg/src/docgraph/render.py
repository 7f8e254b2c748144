"""SVG overlays for document graphs.

Draws each entity box colored by class with a legend, and each non-"none"
link as an arrowed line with a green dot on the source node and a red dot
on the destination node.  Elements carry stable ``class`` attributes
(``node-box``, ``link-arrow``, ``src-dot``, ``dst-dot``) so the output is
both viewable and machine-checkable.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .doc_model import DocumentGraph, GraphError, TaskSchema
from .metrics import DocPrediction

#: Class colors, assigned by class index; "other"-like classes come first
#: in the schemas so the muted color lands on them.
PALETTE = [
    "#8c8c8c", "#1f77b4", "#2ca02c", "#d62728", "#9467bd",
    "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#bcbd22",
]

LEGEND_WIDTH = 190.0


def class_colors(class_names: Sequence[str]) -> dict[str, str]:
    """Stable color per class name, cycling through the palette."""
    return {name: PALETTE[i % len(PALETTE)] for i, name in enumerate(class_names)}


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def render_svg(
    graph: DocumentGraph,
    schema: TaskSchema,
    prediction: Optional[DocPrediction] = None,
    show_text: bool = False,
) -> str:
    """Render one document to an SVG string.

    With ``prediction`` given its classes are drawn, otherwise the graph's
    ground truth.  Links of the "none" class are not drawn.
    """
    page = graph.page
    if prediction is not None and len(prediction.edge_classes) != graph.n_edges:
        raise GraphError(
            f"prediction has {len(prediction.edge_classes)} edge classes, "
            f"graph has {graph.n_edges} edges"
        )
    colors = class_colors(schema.node_classes)
    fallback = colors.get(schema.fallback_node_class, PALETTE[0])

    def node_class(i: int) -> Optional[str]:
        if prediction is not None and schema.use_node_head:
            return schema.node_classes[int(prediction.node_classes[i])]
        gt = graph.nodes[i].gt_class
        return schema.node_classes[gt] if gt is not None else None

    def edge_class(k: int) -> int:
        if prediction is not None:
            return int(prediction.edge_classes[k])
        gt = graph.edges[k].gt_class
        return gt if gt is not None else schema.none_edge_index

    out = []
    width = page.width + LEGEND_WIDTH
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {width:g} {page.height:g}" '
        f'width="{width:g}" height="{page.height:g}">'
    )
    out.append(
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" '
        'markerWidth="7" markerHeight="7" orient="auto-start-reverse">'
        '<path d="M 0 0 L 10 5 L 0 10 z" fill="#333333"/></marker></defs>'
    )
    out.append(f'<rect x="0" y="0" width="{page.width:g}" height="{page.height:g}" '
               f'fill="#ffffff" stroke="#cccccc"/>')

    for i, node in enumerate(graph.nodes):
        cls = node_class(i)
        color = colors[cls] if cls is not None else fallback
        slug = (cls or "unlabeled").replace("_", "-")
        b = node.box
        out.append(
            f'<rect class="node-box cls-{slug}" x="{b.x0:.2f}" y="{b.y0:.2f}" '
            f'width="{b.width:.2f}" height="{b.height:.2f}" fill="{color}" '
            f'fill-opacity="0.25" stroke="{color}" stroke-width="1.5"/>'
        )
        if show_text and node.text:
            out.append(
                f'<text x="{b.x0 + 3:.2f}" y="{b.y1 - 5:.2f}" font-size="12" '
                f'fill="#222222">{_esc(node.text)}</text>'
            )

    for k, edge in enumerate(graph.edges):
        if edge_class(k) == schema.none_edge_index:
            continue
        sx, sy = graph.nodes[edge.src].box.center
        dx, dy = graph.nodes[edge.dst].box.center
        out.append(
            f'<line class="link-arrow" x1="{sx:.2f}" y1="{sy:.2f}" '
            f'x2="{dx:.2f}" y2="{dy:.2f}" stroke="#333333" stroke-width="1.5" '
            f'marker-end="url(#arrow)"/>'
        )
        out.append(f'<circle class="src-dot" cx="{sx:.2f}" cy="{sy:.2f}" r="4" '
                   f'fill="#2ca02c"/>')
        out.append(f'<circle class="dst-dot" cx="{dx:.2f}" cy="{dy:.2f}" r="4" '
                   f'fill="#d62728"/>')

    lx = page.width + 15.0
    out.append(f'<text x="{lx:.2f}" y="24" font-size="14" font-weight="bold" '
               f'fill="#222222">classes</text>')
    for i, name in enumerate(schema.node_classes):
        y = 44.0 + i * 22.0
        out.append(f'<rect class="legend-swatch" x="{lx:.2f}" y="{y:.2f}" width="14" '
                   f'height="14" fill="{colors[name]}"/>')
        out.append(f'<text x="{lx + 20:.2f}" y="{y + 12:.2f}" font-size="13" '
                   f'fill="#222222">{_esc(name)}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"
