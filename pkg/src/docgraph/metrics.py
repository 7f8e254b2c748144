"""Evaluation: classification reports, AUC-PR, IoU and table detection.

All metrics operate on plain arrays so they can score any model, not just
the one shipped here.  Boxes follow the half-open area convention of
:mod:`docgraph.doc_model`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .doc_model import BoundingBox, DocumentGraph, TaskSchema

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    """Raised on empty or inconsistent metric inputs."""


def classification_report(
    pred: Sequence[int],
    gt: Sequence[int],
    n_classes: int,
    class_names: Optional[Sequence[str]] = None,
) -> dict:
    """Per-class precision/recall/F1 plus micro/macro F1 and accuracy.

    A class absent from both ``gt`` and ``pred`` is reported with zero
    scores and ``present=False``.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise MetricError(f"pred and gt must be equal-length 1-D, got {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise MetricError("empty inputs")
    if pred.min() < 0 or pred.max() >= n_classes or gt.min() < 0 or gt.max() >= n_classes:
        raise MetricError(f"class index out of range [0, {n_classes})")
    if class_names is None:
        class_names = [str(c) for c in range(n_classes)]

    per_class = {}
    f1s = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (gt == c)))
        fp = int(np.sum((pred == c) & (gt != c)))
        fn = int(np.sum((pred != c) & (gt == c)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[class_names[c]] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": int(np.sum(gt == c)),
            "present": bool(tp + fp + fn > 0),
        }
        f1s.append(f1)

    accuracy = float(np.mean(pred == gt))
    # With single-label multi-class inputs every FP is another class's FN,
    # so micro-F1 collapses to accuracy.
    return {
        "per_class": per_class,
        "accuracy": accuracy,
        "micro_f1": accuracy,
        "macro_f1": float(np.mean(f1s)),
    }


def auc_pr(scores: Sequence[float], gt_positive: Sequence[bool]) -> float:
    """Area under the precision-recall curve by step-wise summation
    ``sum_k (R_k - R_{k-1}) * P_k`` over a score-descending sweep, with
    tied scores grouped into one step.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt_positive = np.asarray(gt_positive, dtype=bool)
    if scores.shape != gt_positive.shape or scores.ndim != 1 or scores.size == 0:
        raise MetricError("scores and gt_positive must be equal-length, non-empty 1-D")
    n_pos = int(gt_positive.sum())
    if n_pos == 0:
        raise MetricError("AUC-PR undefined with zero positives")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = gt_positive[order].astype(np.float64)
    tp = np.cumsum(sorted_pos)
    k = np.arange(1, scores.size + 1, dtype=np.float64)
    # Last index of each tie group.
    boundary = np.ones(scores.size, dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tp_b = tp[boundary]
    k_b = k[boundary]
    precision = tp_b / k_b
    recall = tp_b / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def extract_table_regions(
    graph: DocumentGraph, edge_pred: Sequence[int], table_class: int
) -> list[BoundingBox]:
    """Enclosing rectangles of connected components of "table"-predicted
    edges (direction ignored).  Components of a single node are dropped.

    Components are returned in ascending order of their smallest member
    node id, so the output is independent of edge enumeration order.
    """
    edge_pred = np.asarray(edge_pred, dtype=np.int64)
    if edge_pred.shape[0] != graph.n_edges:
        raise MetricError(f"expected {graph.n_edges} edge predictions, got {edge_pred.shape[0]}")
    adjacency: dict[int, set[int]] = {}
    for edge, cls in zip(graph.edges, edge_pred):
        if cls == table_class:
            adjacency.setdefault(edge.src, set()).add(edge.dst)
            adjacency.setdefault(edge.dst, set()).add(edge.src)

    seen: set[int] = set()
    regions = []
    for start in sorted(adjacency):
        if start in seen:
            continue
        component = []
        stack = [start]
        seen.add(start)
        while stack:
            node = stack.pop()
            component.append(node)
            for neighbor in adjacency[node]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    stack.append(neighbor)
        if len(component) < 2:
            continue
        box = graph.nodes[component[0]].box
        for node in component[1:]:
            box = box.union(graph.nodes[node].box)
        regions.append(box)
    return regions


def detection_report(
    pred_boxes: Sequence[BoundingBox],
    gt_boxes: Sequence[BoundingBox],
    iou_threshold: float = 0.5,
) -> dict:
    """Greedy one-to-one box matching at ``IoU > iou_threshold``.

    Both sets empty counts as a perfect (if vacuous) detection and is
    flagged via ``"vacuous": True``.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise MetricError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    vacuous = not pred_boxes and not gt_boxes
    if vacuous:
        logger.warning("detection_report called with no predicted and no ground-truth boxes")
        return {"precision": 1.0, "recall": 1.0, "f1": 1.0,
                "iou_threshold": iou_threshold, "vacuous": True}

    pairs = []
    for pi, pbox in enumerate(pred_boxes):
        for gi, gbox in enumerate(gt_boxes):
            value = iou(pbox, gbox)
            if value > iou_threshold:
                pairs.append((value, pi, gi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    matches = 0
    for _, pi, gi in pairs:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        matches += 1

    precision = matches / len(pred_boxes) if pred_boxes else 0.0
    recall = matches / len(gt_boxes) if gt_boxes else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "iou_threshold": iou_threshold, "vacuous": False}


@dataclass
class DocPrediction:
    """Model output for one document."""

    doc_id: str
    node_classes: np.ndarray        # (n,) int, empty when the node head is off
    node_probs: np.ndarray          # (n, C_n) float, empty when off
    edge_classes: np.ndarray        # (E,) int
    edge_probs: np.ndarray          # (E, C_e) float


@dataclass
class EvalReport:
    """Aggregated evaluation over a set of documents."""

    node: Optional[dict] = None
    edge: Optional[dict] = None
    auc_pr: Optional[float] = None
    auc_pr_class: Optional[str] = None
    table_detection: Optional[dict] = None
    n_documents: int = 0

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "edge": self.edge,
            "auc_pr": self.auc_pr,
            "auc_pr_class": self.auc_pr_class,
            "table_detection": self.table_detection,
            "n_documents": self.n_documents,
        }

    def scalar(self, name: str) -> float:
        """Fetch a named summary value, e.g. "kv_f1" or "node_accuracy"."""
        if name == "node_accuracy":
            if self.node is None:
                raise MetricError("no node report available")
            return self.node["accuracy"]
        if name == "node_macro_f1":
            if self.node is None:
                raise MetricError("no node report available")
            return self.node["macro_f1"]
        if name == "edge_accuracy":
            return self.edge["accuracy"]
        if name == "auc_pr":
            if self.auc_pr is None:
                raise MetricError("no AUC-PR available")
            return self.auc_pr
        if name == "table_f1":
            if self.table_detection is None:
                raise MetricError("no table detection report available")
            return self.table_detection["f1"]
        if name.endswith("_f1") and self.edge is not None:
            cls = name[: -len("_f1")]
            if cls == "kv":
                cls = "key_value"
            for key, row in self.edge["per_class"].items():
                if key.replace("-", "_") == cls or key == cls:
                    return row["f1"]
        raise MetricError(f"unknown metric {name!r}")


def evaluate(
    schema: TaskSchema,
    graphs: Sequence[DocumentGraph],
    predictions: Sequence[DocPrediction],
    table_gt: Optional[dict[str, list[BoundingBox]]] = None,
    detection_iou: float = 0.5,
) -> EvalReport:
    """Pool per-document predictions against graph ground truth.

    ``table_gt`` maps doc_id to annotated table region boxes; when given
    and the schema has a "table" edge class, a table-detection report is
    included (predicted regions from :func:`extract_table_regions`).
    """
    if len(graphs) != len(predictions):
        raise MetricError(f"{len(graphs)} graphs vs {len(predictions)} predictions")
    if not graphs:
        raise MetricError("no documents to evaluate")

    node_pred: list[int] = []
    node_gt: list[int] = []
    edge_pred: list[int] = []
    edge_gt: list[int] = []
    pos_scores: list[float] = []
    pos_gt: list[bool] = []

    positive_idx = (
        schema.edge_index(schema.positive_edge_class)
        if schema.positive_edge_class is not None
        else None
    )
    table_idx = schema.edge_classes.index("table") if "table" in schema.edge_classes else None
    all_pred_boxes: list[BoundingBox] = []
    all_gt_boxes: list[BoundingBox] = []

    for graph, pred in zip(graphs, predictions):
        if schema.use_node_head:
            for node, cls in zip(graph.nodes, pred.node_classes):
                if node.gt_class is not None:
                    node_pred.append(int(cls))
                    node_gt.append(node.gt_class)
        for i, (edge, cls) in enumerate(zip(graph.edges, pred.edge_classes)):
            if edge.gt_class is None:
                continue
            edge_pred.append(int(cls))
            edge_gt.append(edge.gt_class)
            if positive_idx is not None:
                pos_scores.append(float(pred.edge_probs[i, positive_idx]))
                pos_gt.append(edge.gt_class == positive_idx)
        if table_idx is not None and table_gt is not None:
            all_pred_boxes.extend(extract_table_regions(graph, pred.edge_classes, table_idx))
            all_gt_boxes.extend(table_gt.get(graph.page.doc_id, []))

    report = EvalReport(n_documents=len(graphs))
    if node_gt:
        report.node = classification_report(
            node_pred, node_gt, schema.n_node_classes, schema.node_classes
        )
    if edge_gt:
        report.edge = classification_report(
            edge_pred, edge_gt, schema.n_edge_classes, schema.edge_classes
        )
    if positive_idx is not None and any(pos_gt):
        report.auc_pr = auc_pr(pos_scores, pos_gt)
        report.auc_pr_class = schema.positive_edge_class
    if table_idx is not None and table_gt is not None:
        report.table_detection = detection_report(all_pred_boxes, all_gt_boxes, detection_iou)
    return report


def summarize_reports(reports: Sequence[EvalReport]) -> dict:
    """Mean and standard deviation of every scalar leaf across reports."""
    dicts = [r.to_dict() for r in reports]

    def reduce(path_values: list) -> dict:
        arr = np.array([v for v in path_values if v is not None], dtype=np.float64)
        if arr.size == 0:
            return {"mean": None, "std": None}
        return {"mean": float(arr.mean()), "std": float(arr.std())}

    def walk(values: list):
        template = next((v for v in values if v is not None), None)
        if template is None:
            return None
        if isinstance(template, dict):
            return {
                key: walk([v.get(key) if isinstance(v, dict) else None for v in values])
                for key in template
            }
        if isinstance(template, (int, float, np.floating)) and not isinstance(template, bool):
            return reduce(values)
        return template

    return {"folds": dicts, "summary": walk(dicts)}
