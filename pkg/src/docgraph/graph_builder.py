"""Turn raw annotations into labeled, featurized document graphs."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Optional, Sequence

from .doc_model import (
    BoundingBox,
    DocNode,
    DocumentGraph,
    GraphError,
    TaskSchema,
    new_document_graph,
)
from .features import DEFAULT_BINS, TextEncoder, featurize_graph
from .ingest import RawAnnotation, RawLink, RawRegion
from .metrics import iou

logger = logging.getLogger(__name__)


def build_graph(
    ann: RawAnnotation,
    schema: TaskSchema,
    encoder: TextEncoder,
    bins: int = DEFAULT_BINS,
    use_visual: bool = False,
    centered_bins: bool = True,
) -> DocumentGraph:
    """Fully-connected, labeled, featurized graph for one document.

    Nodes follow annotation order.  Edge ground truth is the annotation
    link class where a link exists and "none" everywhere else; undirected
    links are stored on the canonical ``src < dst`` edge.
    """
    nodes = []
    for i, ent in enumerate(ann.entities):
        gt_class = schema.node_index(ent.class_name) if ent.class_name is not None else None
        external = {"visual": ent.visual} if ent.visual is not None else None
        nodes.append(
            DocNode(id=i, box=ent.box, text=ent.text, gt_class=gt_class,
                    external_features=external)
        )

    graph = new_document_graph(ann.page, nodes, directed=schema.directed)

    labels: dict[tuple[int, int], int] = {}
    for link in ann.links:
        key = (link.src, link.dst)
        if not schema.directed:
            key = (min(key), max(key))
        cls = schema.edge_index(link.class_name)
        if key in labels and labels[key] != cls:
            raise GraphError(
                f"doc {ann.doc_id!r}: conflicting labels for edge {key}: "
                f"{schema.edge_classes[labels[key]]!r} vs {link.class_name!r}"
            )
        labels[key] = cls

    edges = [
        replace(edge, gt_class=labels.get((edge.src, edge.dst), schema.none_edge_index))
        for edge in graph.edges
    ]
    graph = graph.with_nodes_and_edges(graph.nodes, edges)
    return featurize_graph(graph, encoder, use_visual=use_visual, bins=bins,
                           centered_bins=centered_bins)


def assign_boxes_to_regions(
    boxes: Sequence[BoundingBox], regions: Sequence[RawRegion]
) -> list[Optional[int]]:
    """Region index for each box, by box-center containment.

    A center inside several (overlapping) regions resolves to the region
    with the larger box/region overlap area; a center inside none maps to
    ``None``.
    """
    out: list[Optional[int]] = []
    for box in boxes:
        cx, cy = box.center
        candidates = [i for i, r in enumerate(regions) if r.box.contains_point(cx, cy)]
        if not candidates:
            out.append(None)
        elif len(candidates) == 1:
            out.append(candidates[0])
        else:
            def overlap(i: int) -> float:
                r = regions[i].box
                ix = max(0.0, min(box.x1, r.x1) - max(box.x0, r.x0))
                iy = max(0.0, min(box.y1, r.y1) - max(box.y0, r.y0))
                return ix * iy

            out.append(max(candidates, key=lambda i: (overlap(i), -i)))
    return out


def links_from_regions(
    ann: RawAnnotation, region_class: str = "table", link_class: str = "table"
) -> list[RawLink]:
    """Derive same-region links: every pair of entities whose box centers
    fall inside the same ``region_class`` region is linked with
    ``link_class``.  Pairs are emitted canonically (src < dst).
    """
    regions = [r for r in ann.regions if r.class_name == region_class]
    if not regions:
        return []
    assignment = assign_boxes_to_regions([e.box for e in ann.entities], regions)
    links = []
    n = len(ann.entities)
    for i in range(n):
        if assignment[i] is None:
            continue
        for j in range(i + 1, n):
            if assignment[j] == assignment[i]:
                links.append(RawLink(src=i, dst=j, class_name=link_class))
    return links


def with_region_links(ann: RawAnnotation, region_class: str = "table",
                      link_class: str = "table") -> RawAnnotation:
    """Annotation with derived same-region links appended (existing links
    with the same endpoints win)."""
    existing = {(l.src, l.dst) for l in ann.links} | {(l.dst, l.src) for l in ann.links}
    derived = [
        l for l in links_from_regions(ann, region_class, link_class)
        if (l.src, l.dst) not in existing
    ]
    return replace(ann, links=ann.links + tuple(derived))
