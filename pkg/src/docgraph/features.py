"""Node and edge feature computation.

Per-node features are kept in separate modality vectors (geometric,
textual, optional visual) until the model projects them; per-edge features
encode the relative position of the destination node with respect to the
source node as a normalized distance plus a one-hot angular bin.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .doc_model import (
    BoundingBox,
    DocumentGraph,
    EdgeFeatures,
    GraphError,
    Page,
)

logger = logging.getLogger(__name__)

DEFAULT_TEXT_DIM = 300
DEFAULT_BINS = 8


@dataclass(frozen=True)
class FeatureBundle:
    """Per-node modality vectors, kept separate until projection."""

    geometric: np.ndarray
    textual: np.ndarray
    visual: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        geo = np.asarray(self.geometric, dtype=np.float64)
        txt = np.asarray(self.textual, dtype=np.float64)
        object.__setattr__(self, "geometric", geo)
        object.__setattr__(self, "textual", txt)
        if geo.shape != (4,):
            raise GraphError(f"geometric features must have shape (4,), got {geo.shape}")
        if not np.all(np.isfinite(geo)) or geo.min() < 0.0 or geo.max() > 1.0:
            raise GraphError("geometric features must be finite and in [0, 1]")
        if txt.ndim != 1 or not np.all(np.isfinite(txt)):
            raise GraphError("textual features must be a finite 1-D vector")
        geo.flags.writeable = False
        txt.flags.writeable = False
        if self.visual is not None:
            vis = np.asarray(self.visual, dtype=np.float64)
            if vis.ndim != 1 or not np.all(np.isfinite(vis)):
                raise GraphError("visual features must be a finite 1-D vector")
            vis.flags.writeable = False
            object.__setattr__(self, "visual", vis)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        if not np.array_equal(self.geometric, other.geometric):
            return False
        if not np.array_equal(self.textual, other.textual):
            return False
        if (self.visual is None) != (other.visual is None):
            return False
        return self.visual is None or np.array_equal(self.visual, other.visual)


class TextEncoder:
    """Maps entity text to a fixed-size vector.

    Two modes:

    * ``"table"`` -- mean of per-token vectors looked up in an external
      embedding table; out-of-vocabulary tokens contribute a zero vector.
    * ``"hashing"`` -- signed character-trigram hashing into ``dim``
      buckets, L2-normalized.  Dependency-free fallback when no table is
      available.

    Tokenization is shared by both modes: lowercase, split on whitespace.
    """

    def __init__(self, mode: str, dim: int, table: Optional[Mapping[str, np.ndarray]] = None):
        if mode not in ("table", "hashing"):
            raise GraphError(f"unknown text encoder mode {mode!r}")
        if dim < 1:
            raise GraphError(f"text dimension must be >= 1, got {dim}")
        if mode == "table" and table is None:
            raise GraphError("table mode requires an embedding table")
        self.mode = mode
        self.dim = dim
        self.table = dict(table) if table is not None else None

    @classmethod
    def hashing(cls, dim: int = DEFAULT_TEXT_DIM) -> "TextEncoder":
        return cls("hashing", dim)

    @classmethod
    def from_table(cls, table: Mapping[str, np.ndarray], dim: int) -> "TextEncoder":
        for token, vec in table.items():
            if np.asarray(vec).shape != (dim,):
                raise GraphError(f"embedding for {token!r} does not have dimension {dim}")
        return cls("table", dim, table)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.lower().split()

    def encode(self, text: str) -> np.ndarray:
        tokens = self.tokenize(text)
        if not tokens:
            return np.zeros(self.dim)
        if self.mode == "table":
            return self._encode_table(tokens)
        return self._encode_hashing(tokens)

    def _encode_table(self, tokens: list[str]) -> np.ndarray:
        # OOV tokens fall back to the zero vector and stay in the mean's
        # denominator, so "total xyz" != "total" when xyz is unknown.
        acc = np.zeros(self.dim)
        for token in tokens:
            vec = self.table.get(token)
            if vec is not None:
                acc += np.asarray(vec, dtype=np.float64)
        return acc / len(tokens)

    def _encode_hashing(self, tokens: list[str]) -> np.ndarray:
        acc = np.zeros(self.dim)
        for token in tokens:
            padded = f"#{token}#"
            grams = [padded[i : i + 3] for i in range(max(1, len(padded) - 2))]
            for gram in grams:
                h = int.from_bytes(
                    hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "little"
                )
                sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
                acc[h % self.dim] += sign
        norm = np.linalg.norm(acc)
        if norm == 0.0:
            return acc
        return acc / norm


def encode_text(encoder: TextEncoder, text: str) -> np.ndarray:
    """Functional alias for :meth:`TextEncoder.encode`."""
    return encoder.encode(text)


def load_embedding_table(path: str | Path) -> TextEncoder:
    """Load a word2vec-text embedding table: header ``N D``, then one
    ``token v1 ... vD`` line per token, UTF-8.

    Malformed lines are skipped with a logged warning; a count mismatch
    against the header is also only a warning.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphError(f"{path}: malformed header, expected 'N D'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise GraphError(f"{path}: malformed header, expected 'N D'") from None
        if dim < 1 or count < 0:
            raise GraphError(f"{path}: header declares invalid sizes {count} {dim}")
        table: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                logger.warning("%s:%d: expected %d fields, got %d; line skipped",
                               path, lineno, dim + 1, len(parts))
                continue
            token = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                logger.warning("%s:%d: non-numeric vector entry; line skipped", path, lineno)
                continue
            if token in table:
                logger.warning("%s:%d: duplicate token %r; keeping first", path, lineno, token)
                continue
            table[token] = vec
    if len(table) != count:
        logger.warning("%s: header declares %d tokens but %d were read", path, count, len(table))
    return TextEncoder.from_table(table, dim)


def geometric_features(box: BoundingBox, page: Page) -> np.ndarray:
    """Absolute normalized position: ``[x0/W, y0/H, x1/W, y1/H]``.

    Boxes protruding past the page are clamped with a warning.
    """
    x0, y0, x1, y1 = box.as_tuple()
    if x1 > page.width or y1 > page.height:
        logger.warning(
            "box %s exceeds page %gx%g (doc %r); clamping",
            box.as_tuple(), page.width, page.height, page.doc_id,
        )
        x0 = min(x0, page.width)
        x1 = min(x1, page.width)
        y0 = min(y0, page.height)
        y1 = min(y1, page.height)
    return np.array([x0 / page.width, y0 / page.height, x1 / page.width, y1 / page.height])


def min_box_distance(a: BoundingBox, b: BoundingBox, page: Page) -> float:
    """Minimum Euclidean gap between two boxes, normalized by the page
    diagonal and clamped to [0, 1].  Zero iff the boxes touch or overlap.
    """
    dx = max(0.0, a.x0 - b.x1, b.x0 - a.x1)
    dy = max(0.0, a.y0 - b.y1, b.y0 - a.y1)
    return min(1.0, math.hypot(dx, dy) / page.diagonal)


def angle_bin(theta_deg: float, bins: int, centered: bool = True) -> int:
    """Map an angle in [0, 360) to one of ``bins`` sectors.

    With ``centered=True`` (default) sectors are offset by half a width so
    that bin 0 is centered on due east; horizontally aligned pairs then
    fall stably into one bin.  ``centered=False`` floor-bins the raw angle.
    """
    width = 360.0 / bins
    if centered:
        shifted = (theta_deg + width / 2.0) % 360.0
    else:
        shifted = theta_deg % 360.0
    return min(bins - 1, int(shifted // width))


def polar_edge_features(
    src: BoundingBox,
    dst: BoundingBox,
    page: Page,
    bins: int = DEFAULT_BINS,
    centered: bool = True,
) -> EdgeFeatures:
    """Distance plus one-hot angular bin from src to dst.

    The angle is measured center-to-center in image coordinates (y grows
    downward, so due south is 90 degrees); the distance is the normalized
    minimum box distance, shared with the aggregation threshold.
    """
    if bins < 2:
        raise GraphError(f"need at least 2 angular bins, got {bins}")
    distance = min_box_distance(src, dst, page)
    sx, sy = src.center
    dx_, dy_ = dst.center
    dx, dy = dx_ - sx, dy_ - sy
    if dx == 0.0 and dy == 0.0:
        logger.warning("coincident box centers %s; angle defaults to 0", src.center)
        theta = 0.0
    else:
        theta = math.degrees(math.atan2(dy, dx)) % 360.0
    b = angle_bin(theta, bins, centered)
    polar = np.zeros(1 + bins)
    polar[0] = distance
    polar[1 + b] = 1.0
    return EdgeFeatures(distance=distance, angle_bin=b, polar=polar)


def featurize_graph(
    graph: DocumentGraph,
    encoder: TextEncoder,
    use_visual: bool = False,
    bins: int = DEFAULT_BINS,
    centered_bins: bool = True,
) -> DocumentGraph:
    """Attach a complete :class:`FeatureBundle` to every node and
    :class:`EdgeFeatures` to every edge; returns a new graph.
    """
    nodes = []
    visual_dim: Optional[int] = None
    for node in graph.nodes:
        visual = None
        if use_visual:
            ext = node.external_features or {}
            if "visual" not in ext:
                raise GraphError(
                    f"node {node.id} of doc {graph.page.doc_id!r} has no visual vector"
                )
            visual = ext["visual"]
            if visual_dim is None:
                visual_dim = visual.shape[0]
            elif visual.shape[0] != visual_dim:
                raise GraphError(
                    f"node {node.id} visual dimension {visual.shape[0]} != {visual_dim}"
                )
        bundle = FeatureBundle(
            geometric=geometric_features(node.box, graph.page),
            textual=encoder.encode(node.text),
            visual=visual,
        )
        nodes.append(replace(node, features=bundle))
    edges = []
    for edge in graph.edges:
        feats = polar_edge_features(
            graph.nodes[edge.src].box,
            graph.nodes[edge.dst].box,
            graph.page,
            bins=bins,
            centered=centered_bins,
        )
        edges.append(replace(edge, features=feats))
    return graph.with_nodes_and_edges(nodes, edges)
