"""The document graph network.

Per-modality input projectors bring node features to a common dimension;
one or more graph layers aggregate neighbors closer than a distance
threshold with a scaled mean; a linear node head yields class logits; an
edge head classifies each edge from the triplet of endpoint embeddings,
endpoint class softmaxes and the edge's polar features.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .doc_model import DocumentGraph, GraphError, TaskSchema, get_schema, schema_name

#: Fixed fusion order of projected modalities.
MODALITY_ORDER = ("geometric", "textual", "visual")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters plus the task schema."""

    schema: TaskSchema
    input_dims: dict[str, int]
    modalities: tuple[str, ...] = ("geometric", "textual")
    ip_dim: int = 300
    ep_inner: int = 300
    gnn_layers: int = 1
    threshold: float = 0.9
    scale: float = 0.1
    bins: int = 8
    dropout: float = 0.2
    gnn_update: str = "sum"

    def __post_init__(self) -> None:
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "input_dims", dict(self.input_dims))
        if not self.modalities:
            raise GraphError("at least one modality must be enabled")
        for m in self.modalities:
            if m not in MODALITY_ORDER:
                raise GraphError(f"unknown modality {m!r}; known: {MODALITY_ORDER}")
            if m not in self.input_dims or self.input_dims[m] < 1:
                raise GraphError(f"missing or invalid input dimension for modality {m!r}")
        if list(self.modalities) != [m for m in MODALITY_ORDER if m in self.modalities]:
            raise GraphError(f"modalities must follow the fixed order {MODALITY_ORDER}")
        if not (0.0 < self.threshold <= 1.0):
            raise GraphError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.scale <= 0.0:
            raise GraphError(f"scale must be > 0, got {self.scale}")
        if self.gnn_layers < 1:
            raise GraphError(f"need at least one graph layer, got {self.gnn_layers}")
        if self.ip_dim < 1 or self.ep_inner < 1:
            raise GraphError("projection and edge-predictor dimensions must be >= 1")
        if self.bins < 2:
            raise GraphError(f"need at least 2 angular bins, got {self.bins}")
        if not (0.0 <= self.dropout < 1.0):
            raise GraphError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gnn_update not in ("sum", "concat"):
            raise GraphError(f"gnn_update must be 'sum' or 'concat', got {self.gnn_update!r}")

    @property
    def hidden_dim(self) -> int:
        return len(self.modalities) * self.ip_dim

    @property
    def edge_input_dim(self) -> int:
        endpoint = self.hidden_dim * (2 if self.schema.directed else 1)
        cls = 2 * self.schema.n_node_classes if self.schema.use_node_head else 0
        return endpoint + cls + 1 + self.bins

    def to_dict(self) -> dict:
        name = schema_name(self.schema)
        schema = name if name is not None else {
            "node_classes": list(self.schema.node_classes),
            "edge_classes": list(self.schema.edge_classes),
            "directed": self.schema.directed,
            "use_node_head": self.schema.use_node_head,
            "fallback_node_class": self.schema.fallback_node_class,
            "positive_edge_class": self.schema.positive_edge_class,
        }
        return {
            "schema": schema,
            "input_dims": dict(self.input_dims),
            "modalities": list(self.modalities),
            "ip_dim": self.ip_dim,
            "ep_inner": self.ep_inner,
            "gnn_layers": self.gnn_layers,
            "threshold": self.threshold,
            "scale": self.scale,
            "bins": self.bins,
            "dropout": self.dropout,
            "gnn_update": self.gnn_update,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        raw_schema = payload["schema"]
        if isinstance(raw_schema, str):
            schema = get_schema(raw_schema)
        else:
            schema = TaskSchema(
                node_classes=tuple(raw_schema["node_classes"]),
                edge_classes=tuple(raw_schema["edge_classes"]),
                directed=raw_schema["directed"],
                use_node_head=raw_schema["use_node_head"],
                fallback_node_class=raw_schema.get("fallback_node_class", "other"),
                positive_edge_class=raw_schema.get("positive_edge_class"),
            )
        return cls(
            schema=schema,
            input_dims={k: int(v) for k, v in payload["input_dims"].items()},
            modalities=tuple(payload["modalities"]),
            ip_dim=payload["ip_dim"],
            ep_inner=payload["ep_inner"],
            gnn_layers=payload["gnn_layers"],
            threshold=payload["threshold"],
            scale=payload["scale"],
            bins=payload["bins"],
            dropout=payload["dropout"],
            gnn_update=payload.get("gnn_update", "sum"),
        )


def modality_matrices(
    graph: DocumentGraph, modalities: Sequence[str], dtype=np.float64
) -> dict[str, np.ndarray]:
    """Stack per-node feature bundles into one matrix per modality."""
    out: dict[str, np.ndarray] = {}
    for m in modalities:
        rows = []
        for node in graph.nodes:
            if node.features is None:
                raise GraphError(f"node {node.id} of doc {graph.page.doc_id!r} is not featurized")
            vec = getattr(node.features, m if m != "visual" else "visual")
            if vec is None:
                raise GraphError(
                    f"node {node.id} of doc {graph.page.doc_id!r} has no {m!r} features"
                )
            rows.append(vec)
        out[m] = np.asarray(np.stack(rows), dtype=dtype)
    return out


def neighbor_lists(graph: DocumentGraph, threshold: float) -> list[np.ndarray]:
    """Per-node sorted arrays of neighbors strictly closer than
    ``threshold`` (edge direction ignored)."""
    sets: list[set[int]] = [set() for _ in range(graph.n_nodes)]
    for edge in graph.edges:
        if edge.features is None:
            raise GraphError(f"edge ({edge.src}, {edge.dst}) has no features")
        if edge.features.distance < threshold:
            sets[edge.src].add(edge.dst)
            sets[edge.dst].add(edge.src)
    return [np.array(sorted(s), dtype=np.int64) for s in sets]


def thresholded_mean_aggregate(
    h: Tensor, neighbors: Sequence[np.ndarray], scale: float
) -> Tensor:
    """Scaled-mean neighbor aggregation.

    Row i of the result is ``(scale / k_i) * sum_j h[j]`` over the k_i
    neighbors of node i, or zero when the node has none.  The sum runs
    sequentially in ascending neighbor order so results are reproducible
    bit-for-bit.
    """
    if h.data.ndim != 2 or len(neighbors) != h.shape[0]:
        raise ad.AutodiffError(
            f"aggregation expects (n, d) embeddings and n neighbor lists, "
            f"got {h.shape} and {len(neighbors)}"
        )
    out = np.zeros_like(h.data)
    for i, nbrs in enumerate(neighbors):
        if len(nbrs) == 0:
            continue
        acc = np.zeros(h.shape[1], dtype=h.data.dtype)
        for j in nbrs:
            acc = acc + h.data[j]
        out[i] = (scale / len(nbrs)) * acc

    def backward(grad):
        gh = np.zeros_like(h.data)
        for i, nbrs in enumerate(neighbors):
            if len(nbrs):
                gh[nbrs] += (scale / len(nbrs)) * grad[i]
        return (gh,)

    return Tensor(ad._checked(out, "aggregate"), (h,), backward, "aggregate")


class DocModel:
    """Parameter store plus forward pass for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.store = ParamStore(seed=seed, dtype=dtype)
        hidden = config.hidden_dim
        for m in config.modalities:
            self.store.kaiming_uniform(f"ip.{m}.W", (config.input_dims[m], config.ip_dim))
            self.store.zeros(f"ip.{m}.b", (config.ip_dim,))
        for layer in range(config.gnn_layers):
            if config.gnn_update == "sum":
                self.store.kaiming_uniform(f"gnn.{layer}.W_self", (hidden, hidden))
                self.store.kaiming_uniform(f"gnn.{layer}.W_neigh", (hidden, hidden))
            else:
                self.store.kaiming_uniform(f"gnn.{layer}.W", (2 * hidden, hidden))
        if config.schema.use_node_head:
            self.store.kaiming_uniform("node.W", (hidden, config.schema.n_node_classes))
            self.store.zeros("node.b", (config.schema.n_node_classes,))
        self.store.kaiming_uniform("edge.0.W", (config.edge_input_dim, config.ep_inner))
        self.store.zeros("edge.0.b", (config.ep_inner,))
        self.store.kaiming_uniform("edge.1.W", (config.ep_inner, config.schema.n_edge_classes))
        self.store.zeros("edge.1.b", (config.schema.n_edge_classes,))

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return ad.add(ad.matmul(x, self.store[f"{name}.W"]), self.store[f"{name}.b"])

    def project_inputs(self, feats: dict[str, np.ndarray]) -> Tensor:
        """Per-modality FC + ReLU to ``ip_dim``, concatenated in the fixed
        modality order."""
        parts = []
        for m in self.config.modalities:
            if m not in feats:
                raise GraphError(f"missing modality {m!r} in inputs")
            x = ad.constant(feats[m], dtype=self.store.dtype)
            parts.append(ad.relu(self._linear(x, f"ip.{m}")))
        return ad.concat(parts) if len(parts) > 1 else parts[0]

    def gnn_layer(self, h: Tensor, neighbors: Sequence[np.ndarray], layer: int = 0) -> Tensor:
        """One message-passing update:
        ``h' = ReLU(W_self h + W_neigh h_N)`` (sum form) where ``h_N`` is
        the thresholded scaled-mean aggregation."""
        agg = thresholded_mean_aggregate(h, neighbors, self.config.scale)
        if self.config.gnn_update == "sum":
            pre = ad.add(
                ad.matmul(h, self.store[f"gnn.{layer}.W_self"]),
                ad.matmul(agg, self.store[f"gnn.{layer}.W_neigh"]),
            )
        else:
            pre = ad.matmul(ad.concat([h, agg]), self.store[f"gnn.{layer}.W"])
        return ad.relu(pre)

    def node_logits(self, h: Tensor) -> Tensor:
        if not self.config.schema.use_node_head:
            raise GraphError("node head is disabled in this schema")
        return self._linear(h, "node")

    def edge_logits(
        self,
        h: Tensor,
        node_logits: Optional[Tensor],
        graph: DocumentGraph,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Two-layer edge classifier over the edge triplet representation;
        dropout sits on the input of the last layer during training."""
        schema = self.config.schema
        if not graph.edges:
            return ad.constant(
                np.zeros((0, schema.n_edge_classes), dtype=self.store.dtype)
            )
        src = np.array([e.src for e in graph.edges], dtype=np.int64)
        dst = np.array([e.dst for e in graph.edges], dtype=np.int64)
        polar_rows = []
        for edge in graph.edges:
            if edge.features is None:
                raise GraphError(f"edge ({edge.src}, {edge.dst}) has no features")
            polar_rows.append(edge.features.polar)
        polar = ad.constant(np.stack(polar_rows), dtype=self.store.dtype)
        if polar.shape[1] != 1 + self.config.bins:
            raise GraphError(
                f"edge polar length {polar.shape[1]} != 1+{self.config.bins} bins"
            )

        h_src = ad.gather_rows(h, src)
        h_dst = ad.gather_rows(h, dst)
        parts = [h_src, h_dst] if schema.directed else [ad.add(h_src, h_dst)]
        if schema.use_node_head:
            if node_logits is None:
                raise GraphError("node logits required when the node head is enabled")
            probs = ad.softmax_rows(node_logits)
            parts.append(ad.gather_rows(probs, src))
            parts.append(ad.gather_rows(probs, dst))
        parts.append(polar)

        e = ad.concat(parts)
        inner = ad.relu(self._linear(e, "edge.0"))
        inner = ad.dropout(inner, self.config.dropout, training, rng)
        return self._linear(inner, "edge.1")

    def forward(
        self,
        graph: DocumentGraph,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> tuple[Optional[Tensor], Tensor]:
        """Full pass: (node logits or None, edge logits)."""
        if graph.directed != self.config.schema.directed:
            raise GraphError(
                f"graph directedness {graph.directed} does not match schema "
                f"{self.config.schema.directed}"
            )
        feats = modality_matrices(graph, self.config.modalities, dtype=self.store.dtype)
        for m in self.config.modalities:
            expected = self.config.input_dims[m]
            if feats[m].shape[1] != expected:
                raise GraphError(
                    f"modality {m!r} has dimension {feats[m].shape[1]}, expected {expected}"
                )
        neighbors = neighbor_lists(graph, self.config.threshold)
        h = self.project_inputs(feats)
        for layer in range(self.config.gnn_layers):
            h = self.gnn_layer(h, neighbors, layer)
        nlogits = self.node_logits(h) if self.config.schema.use_node_head else None
        elogits = self.edge_logits(h, nlogits, graph, training=training, rng=rng)
        return nlogits, elogits
