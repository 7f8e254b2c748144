"""Core immutable data types shared across the toolkit.

A document page is modelled as a fully-connected graph: every text entity
(or word) is a node, and every ordered (directed) or unordered (undirected)
pair of nodes is an edge.  Tasks are described by a :class:`TaskSchema`
naming the node and edge class vocabularies.

Conventions
-----------
* Coordinates are page pixels, origin top-left, y grows downward.
* Boxes are half-open regions ``[x0, x1) x [y0, y1)``; the area of an
  integer box ``[0, 0, 2, 2]`` is 4 pixels.
* Undirected graphs store one canonical edge per pair with ``src < dst``.
* The edge class ``"none"`` (no relation) always sits at index 0.
* For the built-in ``form`` schema, links run key to value: the source of
  a ``key-value`` edge is the question entity, the destination its answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Mapping, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import only for annotations
    from .features import FeatureBundle

#: Fixed, documented index of the "none" edge class in every schema.
NONE_EDGE_INDEX = 0


class GraphError(ValueError):
    """Raised when a graph, node or schema invariant is violated."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in page-pixel coordinates (y grows downward)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise GraphError(f"box coordinates must be finite, got {coords}")
        if any(c < 0 for c in coords):
            raise GraphError(f"box coordinates must be >= 0, got {coords}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise GraphError(f"box must satisfy x0 <= x1 and y0 <= y1, got {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        """Smallest box enclosing both boxes."""
        return BoundingBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class Page:
    """Page dimensions plus the owning document id."""

    width: float
    height: float
    doc_id: str = ""

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise GraphError(
                f"page dimensions must be positive, got {self.width}x{self.height}"
            )

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class EdgeFeatures:
    """Relative-position features stored on an edge.

    ``polar`` is ``[distance] ++ one_hot(angle_bin, B)``: the normalized
    minimum box distance followed by a one-hot angular bin of the
    source-to-destination direction.
    """

    distance: float
    angle_bin: int
    polar: np.ndarray

    def __post_init__(self) -> None:
        polar = np.asarray(self.polar, dtype=np.float64)
        object.__setattr__(self, "polar", polar)
        if not (0.0 <= self.distance <= 1.0):
            raise GraphError(f"edge distance must be in [0, 1], got {self.distance}")
        if polar.ndim != 1 or polar.shape[0] < 3:
            raise GraphError(f"polar vector must be 1-D of length 1+B, B >= 2")
        if polar[0] != self.distance:
            raise GraphError("polar[0] must equal the stored distance")
        onehot = polar[1:]
        bins = onehot.shape[0]
        if not (0 <= self.angle_bin < bins):
            raise GraphError(f"angle_bin {self.angle_bin} out of range [0, {bins})")
        ones = np.flatnonzero(onehot == 1.0)
        if len(ones) != 1 or ones[0] != self.angle_bin or np.count_nonzero(onehot) != 1:
            raise GraphError("polar[1:] must one-hot encode angle_bin")
        polar.flags.writeable = False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeFeatures):
            return NotImplemented
        return (
            self.distance == other.distance
            and self.angle_bin == other.angle_bin
            and np.array_equal(self.polar, other.polar)
        )


@dataclass(frozen=True)
class DocNode:
    """One text entity (or word) on a page.

    ``external_features`` carries externally computed per-modality vectors
    (e.g. a visual embedding supplied by an upstream encoder); ``features``
    is filled by the feature pipeline and left ``None`` until then.
    """

    id: int
    box: BoundingBox
    text: str = ""
    gt_class: Optional[int] = None
    external_features: Optional[Mapping[str, np.ndarray]] = None
    features: Optional["FeatureBundle"] = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise GraphError(f"node id must be >= 0, got {self.id}")
        if self.external_features is not None:
            frozen = {}
            for key, vec in self.external_features.items():
                arr = np.asarray(vec, dtype=np.float64)
                if arr.ndim != 1:
                    raise GraphError(f"external feature {key!r} must be a 1-D vector")
                arr.flags.writeable = False
                frozen[key] = arr
            object.__setattr__(self, "external_features", frozen)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DocNode):
            return NotImplemented
        if (self.id, self.text, self.gt_class, self.box) != (
            other.id,
            other.text,
            other.gt_class,
            other.box,
        ):
            return False
        mine, theirs = self.external_features, other.external_features
        if (mine is None) != (theirs is None):
            return False
        if mine is not None:
            if set(mine) != set(theirs):
                return False
            if not all(np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return self.features == other.features


@dataclass(frozen=True)
class DocEdge:
    """A directed (or canonical undirected) connection between two nodes."""

    src: int
    dst: int
    gt_class: Optional[int] = None
    features: Optional[EdgeFeatures] = None

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise GraphError(f"self-loop edge on node {self.src}")
        if self.src < 0 or self.dst < 0:
            raise GraphError("edge endpoints must be >= 0")


@dataclass(frozen=True)
class TaskSchema:
    """Node and edge class vocabularies defining a task.

    ``fallback_node_class`` names the class assigned to detections that
    match no ground-truth entity; ``positive_edge_class`` names the edge
    class scored with AUC-PR in evaluation reports.
    """

    node_classes: tuple[str, ...]
    edge_classes: tuple[str, ...]
    directed: bool
    use_node_head: bool = True
    fallback_node_class: str = "other"
    positive_edge_class: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_classes", tuple(self.node_classes))
        object.__setattr__(self, "edge_classes", tuple(self.edge_classes))
        if not self.edge_classes:
            raise GraphError("edge_classes must not be empty")
        if self.edge_classes.count("none") != 1 or self.edge_classes[NONE_EDGE_INDEX] != "none":
            raise GraphError(
                f"edge_classes must contain 'none' exactly once at index {NONE_EDGE_INDEX}"
            )
        if self.use_node_head and not self.node_classes:
            raise GraphError("node_classes must not be empty when the node head is enabled")
        if len(set(self.node_classes)) != len(self.node_classes):
            raise GraphError("duplicate node class names")
        if len(set(self.edge_classes)) != len(self.edge_classes):
            raise GraphError("duplicate edge class names")
        if self.positive_edge_class is not None and self.positive_edge_class not in self.edge_classes:
            raise GraphError(f"unknown positive edge class {self.positive_edge_class!r}")
        if self.node_classes and self.fallback_node_class not in self.node_classes:
            raise GraphError(
                f"fallback node class {self.fallback_node_class!r} is not in "
                f"{self.node_classes}"
            )

    @property
    def n_node_classes(self) -> int:
        return len(self.node_classes)

    @property
    def n_edge_classes(self) -> int:
        return len(self.edge_classes)

    @property
    def none_edge_index(self) -> int:
        return NONE_EDGE_INDEX

    def node_index(self, name: str) -> int:
        try:
            return self.node_classes.index(name)
        except ValueError:
            raise GraphError(f"unknown node class {name!r}; known: {self.node_classes}") from None

    def edge_index(self, name: str) -> int:
        try:
            return self.edge_classes.index(name)
        except ValueError:
            raise GraphError(f"unknown edge class {name!r}; known: {self.edge_classes}") from None


#: Form understanding: semantic entity labeling plus key-value linking.
#: Links are directed key -> value (question -> answer).
FORM_SCHEMA = TaskSchema(
    node_classes=("question", "answer", "header", "other"),
    edge_classes=("none", "key-value"),
    directed=True,
    use_node_head=True,
    positive_edge_class="key-value",
)

#: Invoice layout analysis plus table detection. Two nodes are linked with
#: a "table" edge when they belong to the same table region; membership is
#: symmetric, so the graph is undirected.
INVOICE_SCHEMA = TaskSchema(
    node_classes=("supplier", "invoice_info", "receiver", "table", "total", "other"),
    edge_classes=("none", "table"),
    directed=False,
    use_node_head=True,
    positive_edge_class="table",
)

_SCHEMAS = {"form": FORM_SCHEMA, "invoice": INVOICE_SCHEMA}


def get_schema(name: str) -> TaskSchema:
    """Look up a built-in schema by name ("form" or "invoice")."""
    try:
        return _SCHEMAS[name]
    except KeyError:
        raise GraphError(f"unknown schema {name!r}; known: {sorted(_SCHEMAS)}") from None


def schema_name(schema: TaskSchema) -> Optional[str]:
    """Inverse of :func:`get_schema` for built-in schemas, else ``None``."""
    for name, known in _SCHEMAS.items():
        if known == schema:
            return name
    return None


@dataclass(frozen=True)
class DocumentGraph:
    """A page with its nodes and (typically fully-connected) edges."""

    page: Page
    nodes: tuple[DocNode, ...]
    edges: tuple[DocEdge, ...]
    directed: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        n = len(self.nodes)
        ids = [node.id for node in self.nodes]
        if ids != list(range(n)):
            raise GraphError("node ids must be exactly 0..n-1 in order")
        seen: set[tuple[int, int]] = set()
        for edge in self.edges:
            if edge.src >= n or edge.dst >= n:
                raise GraphError(f"edge ({edge.src}, {edge.dst}) references a missing node")
            if not self.directed and edge.src > edge.dst:
                raise GraphError(
                    f"undirected edge ({edge.src}, {edge.dst}) must be canonical src < dst"
                )
            key = (edge.src, edge.dst)
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index_map(self) -> dict[tuple[int, int], int]:
        """Position of each (src, dst) pair in the edge tuple."""
        return {(e.src, e.dst): i for i, e in enumerate(self.edges)}

    def with_nodes_and_edges(
        self, nodes: Iterable[DocNode], edges: Iterable[DocEdge]
    ) -> "DocumentGraph":
        return replace(self, nodes=tuple(nodes), edges=tuple(edges))


def new_document_graph(
    page: Page, nodes: Iterable[DocNode], directed: bool
) -> DocumentGraph:
    """Build a fully-connected graph over ``nodes``.

    Edges are generated in lexicographic (src, dst) order: all ordered
    pairs for a directed graph, canonical ``src < dst`` pairs otherwise.
    Edge features and labels are left unset.
    """
    nodes = tuple(nodes)
    if not nodes:
        raise GraphError("cannot build a graph with no nodes")
    n = len(nodes)
    ids = [node.id for node in nodes]
    if len(set(ids)) != n:
        raise GraphError(f"duplicate node ids in {ids}")
    if ids != list(range(n)):
        raise GraphError("node ids must be exactly 0..n-1 in order")
    edges = []
    for i in range(n):
        start = 0 if directed else i + 1
        for j in range(start, n):
            if i != j and (directed or i < j):
                edges.append(DocEdge(src=i, dst=j))
    return DocumentGraph(page=page, nodes=nodes, edges=tuple(edges), directed=directed)


def graphs_equal(a: DocumentGraph, b: DocumentGraph) -> bool:
    """Field-by-field equality, including features and labels."""
    if a.directed != b.directed or a.page != b.page:
        return False
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    if any(x != y for x, y in zip(a.nodes, b.nodes)):
        return False
    for ea, eb in zip(a.edges, b.edges):
        if (ea.src, ea.dst, ea.gt_class) != (eb.src, eb.dst, eb.gt_class):
            return False
        if (ea.features is None) != (eb.features is None):
            return False
        if ea.features is not None and ea.features != eb.features:
            return False
    return True
