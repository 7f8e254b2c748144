"""Input validation helpers for the estimator API."""

from __future__ import annotations

from typing import Optional, Sequence

from .doc_model import DocumentGraph, GraphError, TaskSchema


class NotFittedError(RuntimeError):
    """Estimator used before ``fit`` (mirrors the sklearn exception)."""


def check_is_fitted(estimator, attribute: str = "model_") -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def check_graphs(
    X: Sequence[DocumentGraph],
    schema: Optional[TaskSchema] = None,
    require_features: bool = True,
    require_labels: bool = False,
) -> list[DocumentGraph]:
    """Validate a list of document graphs for fit/predict.

    Checks type, featurization, schema directedness and (optionally) the
    presence and range of ground-truth labels.
    """
    if not isinstance(X, (list, tuple)) or not X:
        raise GraphError("expected a non-empty list of DocumentGraph")
    for graph in X:
        if not isinstance(graph, DocumentGraph):
            raise GraphError(f"expected DocumentGraph, got {type(graph).__name__}")
        doc = graph.page.doc_id
        if schema is not None and graph.directed != schema.directed:
            raise GraphError(
                f"doc {doc!r}: graph directedness {graph.directed} does not match schema"
            )
        if require_features:
            for node in graph.nodes:
                if node.features is None:
                    raise GraphError(f"doc {doc!r}: node {node.id} is not featurized")
            for edge in graph.edges:
                if edge.features is None:
                    raise GraphError(
                        f"doc {doc!r}: edge ({edge.src}, {edge.dst}) is not featurized"
                    )
        if schema is not None:
            for node in graph.nodes:
                if node.gt_class is not None and not (
                    0 <= node.gt_class < schema.n_node_classes
                ):
                    raise GraphError(
                        f"doc {doc!r}: node {node.id} class {node.gt_class} out of range"
                    )
            for edge in graph.edges:
                if edge.gt_class is not None and not (
                    0 <= edge.gt_class < schema.n_edge_classes
                ):
                    raise GraphError(
                        f"doc {doc!r}: edge ({edge.src}, {edge.dst}) class out of range"
                    )
        if require_labels:
            if any(e.gt_class is None for e in graph.edges):
                raise GraphError(f"doc {doc!r}: unlabeled edges; cannot train on this graph")
    return list(X)
