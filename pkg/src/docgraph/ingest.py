"""Dataset loading, ground-truth projection onto detections, fold plans
and graph (de)serialization.

Dataset format (one JSON file per split)::

    {"documents": [{
        "id": str, "width": int, "height": int,
        "entities": [{"box": [x0, y0, x1, y1], "text": str,
                      "class": str | null, "visual": [float, ...]?}],
        "links":    [{"src": int, "dst": int, "class": str}],
        "regions":  [{"box": [x0, y0, x1, y1], "class": str}]?   # optional
    }]}

``regions`` is an optional extension carrying annotated region boxes
(e.g. table regions) used for detection evaluation and for deriving
same-region links.  Detections and predictions are JSON Lines files, one
object per document (see README for the exact schemas).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .doc_model import (
    BoundingBox,
    DocEdge,
    DocNode,
    DocumentGraph,
    EdgeFeatures,
    GraphError,
    Page,
    TaskSchema,
)
from .features import FeatureBundle
from .metrics import iou

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised when an annotation file violates the documented schema."""


@dataclass(frozen=True)
class RawEntity:
    box: BoundingBox
    text: str = ""
    class_name: Optional[str] = None
    visual: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RawLink:
    src: int
    dst: int
    class_name: str


@dataclass(frozen=True)
class RawRegion:
    box: BoundingBox
    class_name: str


@dataclass(frozen=True)
class RawAnnotation:
    """One annotated document, classes still by name."""

    doc_id: str
    width: float
    height: float
    entities: tuple[RawEntity, ...] = ()
    links: tuple[RawLink, ...] = ()
    regions: tuple[RawRegion, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "regions", tuple(self.regions))
        n = len(self.entities)
        for link in self.links:
            if not (0 <= link.src < n and 0 <= link.dst < n):
                raise DatasetError(
                    f"doc {self.doc_id!r}: link ({link.src}, {link.dst}) "
                    f"references a missing entity (have {n})"
                )
            if link.src == link.dst:
                raise DatasetError(f"doc {self.doc_id!r}: self-link on entity {link.src}")

    @property
    def page(self) -> Page:
        return Page(width=self.width, height=self.height, doc_id=self.doc_id)


def _parse_box(raw, doc_id: str) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise DatasetError(f"doc {doc_id!r}: box must be [x0, y0, x1, y1], got {raw!r}")
    try:
        return BoundingBox(*[float(v) for v in raw])
    except (TypeError, ValueError, GraphError) as exc:
        raise DatasetError(f"doc {doc_id!r}: bad box {raw!r}: {exc}") from None


def annotation_from_dict(doc: dict, schema: Optional[TaskSchema] = None) -> RawAnnotation:
    """Parse one document record, validating class names against ``schema``
    when given."""
    doc_id = str(doc.get("id", ""))
    if not doc_id:
        raise DatasetError("document record without an 'id'")
    if "width" not in doc or "height" not in doc:
        raise DatasetError(f"doc {doc_id!r}: missing page dimensions")

    entities = []
    for i, ent in enumerate(doc.get("entities", [])):
        class_name = ent.get("class")
        if class_name is not None and schema is not None and class_name not in schema.node_classes:
            raise DatasetError(
                f"doc {doc_id!r}: entity {i} has unknown node class {class_name!r} "
                f"(schema knows {schema.node_classes})"
            )
        visual = ent.get("visual")
        entities.append(
            RawEntity(
                box=_parse_box(ent.get("box"), doc_id),
                text=str(ent.get("text", "")),
                class_name=class_name,
                visual=np.asarray(visual, dtype=np.float64) if visual is not None else None,
            )
        )

    links = []
    for raw in doc.get("links", []):
        class_name = raw.get("class")
        if class_name is None:
            raise DatasetError(f"doc {doc_id!r}: link without a class")
        if schema is not None and class_name not in schema.edge_classes:
            raise DatasetError(
                f"doc {doc_id!r}: unknown edge class {class_name!r} "
                f"(schema knows {schema.edge_classes})"
            )
        links.append(RawLink(src=int(raw["src"]), dst=int(raw["dst"]), class_name=class_name))

    regions = []
    for raw in doc.get("regions", []):
        regions.append(
            RawRegion(box=_parse_box(raw.get("box"), doc_id), class_name=str(raw.get("class", "")))
        )

    try:
        return RawAnnotation(
            doc_id=doc_id,
            width=float(doc["width"]),
            height=float(doc["height"]),
            entities=tuple(entities),
            links=tuple(links),
            regions=tuple(regions),
        )
    except GraphError as exc:
        raise DatasetError(f"doc {doc_id!r}: {exc}") from None


def annotation_to_dict(ann: RawAnnotation) -> dict:
    doc: dict = {
        "id": ann.doc_id,
        "width": ann.width,
        "height": ann.height,
        "entities": [
            {
                "box": list(e.box.as_tuple()),
                "text": e.text,
                "class": e.class_name,
                **({"visual": list(map(float, e.visual))} if e.visual is not None else {}),
            }
            for e in ann.entities
        ],
        "links": [{"src": l.src, "dst": l.dst, "class": l.class_name} for l in ann.links],
    }
    if ann.regions:
        doc["regions"] = [{"box": list(r.box.as_tuple()), "class": r.class_name} for r in ann.regions]
    return doc


def load_dataset(path: str | Path, schema: Optional[TaskSchema] = None) -> list[RawAnnotation]:
    """Load and validate a dataset file; results sorted by doc_id."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file {path} does not exist")
    with path.open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "documents" not in payload:
        raise DatasetError(f"{path}: expected a top-level object with a 'documents' list")
    annotations = [annotation_from_dict(doc, schema) for doc in payload["documents"]]
    ids = [a.doc_id for a in annotations]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate document ids")
    return sorted(annotations, key=lambda a: a.doc_id)


def save_dataset(annotations: Sequence[RawAnnotation], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"documents": [annotation_to_dict(a) for a in annotations]}
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_detections(path: str | Path) -> dict[str, list[BoundingBox]]:
    """Read a JSON Lines detections file: one ``{"id", "boxes"}`` object
    per line."""
    path = Path(path)
    out: dict[str, list[BoundingBox]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            doc_id = str(record.get("id", ""))
            if not doc_id:
                raise DatasetError(f"{path}:{lineno}: detection record without an 'id'")
            if doc_id in out:
                raise DatasetError(f"{path}:{lineno}: duplicate detections for doc {doc_id!r}")
            out[doc_id] = [_parse_box(b, doc_id) for b in record.get("boxes", [])]
    return out


def project_ground_truth(
    detections: Sequence[BoundingBox],
    gt: RawAnnotation,
    iou_threshold: float = 0.5,
    fallback_class: str = "other",
) -> RawAnnotation:
    """Project ground truth onto noisy detections.

    Each detection is greedily matched (descending IoU, one-to-one) to a
    ground-truth entity with ``IoU > iou_threshold``.  Matched detections
    inherit the entity's class, text and external features but keep the
    detection box; unmatched detections become ``fallback_class`` with
    empty text.  Links survive only when both endpoints matched; every
    other pair is implicitly "none" in the rebuilt graph.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise DatasetError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not detections:
        logger.warning("doc %r: no detections; projecting to an empty annotation", gt.doc_id)
        return replace(gt, entities=(), links=(), regions=gt.regions)

    pairs = []
    for di, det in enumerate(detections):
        for gi, ent in enumerate(gt.entities):
            value = iou(det, ent.box)
            if value > iou_threshold:
                pairs.append((value, di, gi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))

    det_match: dict[int, int] = {}
    gt_match: dict[int, int] = {}
    for _, di, gi in pairs:
        if di in det_match or gi in gt_match:
            continue
        det_match[di] = gi
        gt_match[gi] = di

    entities = []
    for di, det in enumerate(detections):
        if di in det_match:
            src = gt.entities[det_match[di]]
            entities.append(replace(src, box=det))
        else:
            entities.append(RawEntity(box=det, text="", class_name=fallback_class))

    links = []
    for link in gt.links:
        if link.src in gt_match and link.dst in gt_match:
            links.append(
                RawLink(src=gt_match[link.src], dst=gt_match[link.dst], class_name=link.class_name)
            )
        else:
            logger.debug("doc %r: link (%d, %d) dropped, endpoint undetected",
                         gt.doc_id, link.src, link.dst)
    return replace(gt, entities=tuple(entities), links=tuple(links))


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of documents to cross-validation folds or to a fixed
    train/val/test split.

    In k-fold mode, run ``f`` tests on fold ``f``, validates on fold
    ``(f+1) % k`` and trains on the rest.  In fixed-split mode there is a
    single run with folds 0/1/2 meaning train/val/test.
    """

    k: int
    assignments: dict[str, int] = field(default_factory=dict)
    fixed_split: Optional[tuple[int, int, int]] = None

    def __post_init__(self) -> None:
        folds = set(self.assignments.values())
        if self.fixed_split is not None:
            if sum(self.fixed_split) != len(self.assignments):
                raise DatasetError(
                    f"fixed split {self.fixed_split} does not sum to corpus size "
                    f"{len(self.assignments)}"
                )
            counts = [sum(1 for f in self.assignments.values() if f == i) for i in range(3)]
            if tuple(counts) != self.fixed_split:
                raise DatasetError(f"fold sizes {counts} do not match fixed split {self.fixed_split}")
        else:
            if self.k < 2:
                raise DatasetError(f"need k >= 2 folds, got {self.k}")
            sizes = [sum(1 for f in self.assignments.values() if f == i) for i in range(self.k)]
            if folds - set(range(self.k)):
                raise DatasetError(f"fold index out of range in {sorted(folds)}")
            if max(sizes) - min(sizes) > 1:
                raise DatasetError(f"fold sizes {sizes} differ by more than 1")

    @property
    def n_runs(self) -> int:
        return 1 if self.fixed_split is not None else self.k

    def _docs_in(self, fold: int) -> list[str]:
        return sorted(d for d, f in self.assignments.items() if f == fold)

    def split(self, run: int) -> tuple[list[str], list[str], list[str]]:
        """(train, val, test) doc ids for one run."""
        if self.fixed_split is not None:
            if run != 0:
                raise DatasetError("fixed-split plans have a single run")
            return self._docs_in(0), self._docs_in(1), self._docs_in(2)
        if not (0 <= run < self.k):
            raise DatasetError(f"run {run} out of range [0, {self.k})")
        test = self._docs_in(run)
        val = self._docs_in((run + 1) % self.k)
        train: list[str] = []
        for fold in range(self.k):
            if fold not in (run, (run + 1) % self.k):
                train.extend(self._docs_in(fold))
        return sorted(train), val, test


def make_folds(
    docs: Sequence[str],
    k: int,
    seed: int,
    fixed_split: Optional[tuple[int, int, int]] = None,
) -> FoldPlan:
    """Deterministically shuffle ``docs`` by ``seed`` and assign folds.

    Without ``fixed_split``, fold sizes are ``ceil(n/k)`` or ``floor(n/k)``.
    With it, documents are split into train/val/test of the given sizes
    (``k`` is ignored).
    """
    docs = sorted(set(docs))
    if len(docs) != len(list(docs)):
        raise DatasetError("duplicate doc ids")
    order = list(docs)
    random.Random(seed).shuffle(order)

    assignments: dict[str, int] = {}
    if fixed_split is not None:
        n_train, n_val, n_test = fixed_split
        if n_train + n_val + n_test != len(order):
            raise DatasetError(
                f"fixed split {fixed_split} does not sum to corpus size {len(order)}"
            )
        for i, doc in enumerate(order):
            assignments[doc] = 0 if i < n_train else (1 if i < n_train + n_val else 2)
        return FoldPlan(k=3, assignments=assignments, fixed_split=tuple(fixed_split))

    if k < 2:
        raise DatasetError(f"need k >= 2 folds, got {k}")
    if k > len(order):
        raise DatasetError(f"cannot split {len(order)} documents into {k} folds")
    base, extra = divmod(len(order), k)
    cursor = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        for doc in order[cursor : cursor + size]:
            assignments[doc] = fold
        cursor += size
    return FoldPlan(k=k, assignments=assignments)


# ---------------------------------------------------------------------------
# Graph serialization (featurized-graph cache)

def graph_to_dict(graph: DocumentGraph) -> dict:
    nodes = []
    for node in graph.nodes:
        rec: dict = {"id": node.id, "box": list(node.box.as_tuple()), "text": node.text,
                     "gt_class": node.gt_class}
        if node.external_features:
            rec["external"] = {k: list(map(float, v)) for k, v in node.external_features.items()}
        if node.features is not None:
            rec["features"] = {
                "geometric": list(map(float, node.features.geometric)),
                "textual": list(map(float, node.features.textual)),
                "visual": list(map(float, node.features.visual))
                if node.features.visual is not None
                else None,
            }
        nodes.append(rec)
    edges = []
    for edge in graph.edges:
        rec = {"src": edge.src, "dst": edge.dst, "gt_class": edge.gt_class}
        if edge.features is not None:
            rec["features"] = {
                "distance": edge.features.distance,
                "angle_bin": edge.features.angle_bin,
                "polar": list(map(float, edge.features.polar)),
            }
        edges.append(rec)
    return {
        "id": graph.page.doc_id,
        "width": graph.page.width,
        "height": graph.page.height,
        "directed": graph.directed,
        "nodes": nodes,
        "edges": edges,
    }


def graph_from_dict(payload: dict) -> DocumentGraph:
    page = Page(width=payload["width"], height=payload["height"], doc_id=payload["id"])
    nodes = []
    for rec in payload["nodes"]:
        features = None
        if rec.get("features") is not None:
            feats = rec["features"]
            features = FeatureBundle(
                geometric=np.array(feats["geometric"]),
                textual=np.array(feats["textual"]),
                visual=np.array(feats["visual"]) if feats.get("visual") is not None else None,
            )
        external = rec.get("external")
        nodes.append(
            DocNode(
                id=rec["id"],
                box=BoundingBox(*rec["box"]),
                text=rec["text"],
                gt_class=rec.get("gt_class"),
                external_features={k: np.array(v) for k, v in external.items()}
                if external
                else None,
                features=features,
            )
        )
    edges = []
    for rec in payload["edges"]:
        features = None
        if rec.get("features") is not None:
            feats = rec["features"]
            features = EdgeFeatures(
                distance=feats["distance"],
                angle_bin=feats["angle_bin"],
                polar=np.array(feats["polar"]),
            )
        edges.append(
            DocEdge(src=rec["src"], dst=rec["dst"], gt_class=rec.get("gt_class"), features=features)
        )
    return DocumentGraph(page=page, nodes=tuple(nodes), edges=tuple(edges),
                         directed=payload["directed"])


def save_graphs(graphs: Sequence[DocumentGraph], path: str | Path) -> None:
    """Write a JSON Lines graph cache, one document graph per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for graph in graphs:
            json.dump(graph_to_dict(graph), fh, sort_keys=True)
            fh.write("\n")


def load_graphs(path: str | Path) -> list[DocumentGraph]:
    path = Path(path)
    graphs = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                graphs.append(graph_from_dict(json.loads(line)))
    return graphs
