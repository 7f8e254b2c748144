"""Sklearn-style estimator wrapping the graph network and its trainer.

``GraphNetClassifier`` follows the fit/predict convention: ``fit`` takes a
list of featurized, labeled :class:`~docgraph.doc_model.DocumentGraph`
objects (one per page), ``predict`` returns one
:class:`~docgraph.metrics.DocPrediction` per graph.  All hyperparameters
are plain constructor arguments, so ``get_params``/``set_params`` and
``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import adamw_step, load_checkpoint, save_checkpoint
from .doc_model import BoundingBox, DocumentGraph, TaskSchema, get_schema, schema_name
from .metrics import DocPrediction, EvalReport, evaluate
from .model import DocModel, ModelConfig
from .training import (
    edge_class_weights,
    edge_gt_array,
    joint_loss,
    node_gt_array,
)
from .validation import check_graphs, check_is_fitted

logger = logging.getLogger(__name__)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class GraphNetClassifier(BaseEstimator):
    """Joint node and edge classifier over fully-connected page graphs.

    Parameters mirror the architecture defaults: 300-dimensional modality
    projections, a single graph layer with distance threshold 0.9 and
    neighbor scale 0.1, 8 angular bins, dropout 0.2 on the edge head,
    AdamW with learning rate 1e-3 and decoupled weight decay 1e-4.
    """

    def __init__(
        self,
        schema: Union[str, TaskSchema] = "form",
        modalities: tuple[str, ...] = ("geometric", "textual"),
        ip_dim: int = 300,
        ep_inner: int = 300,
        gnn_layers: int = 1,
        threshold: float = 0.9,
        scale: float = 0.1,
        bins: int = 8,
        dropout: float = 0.2,
        gnn_update: str = "sum",
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        epochs: int = 50,
        seed: int = 0,
        edge_weighting: str = "inverse-frequency",
        patience: Optional[int] = None,
        selection_metric: str = "auto",
        dtype: str = "float64",
    ):
        self.schema = schema
        self.modalities = modalities
        self.ip_dim = ip_dim
        self.ep_inner = ep_inner
        self.gnn_layers = gnn_layers
        self.threshold = threshold
        self.scale = scale
        self.bins = bins
        self.dropout = dropout
        self.gnn_update = gnn_update
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed
        self.edge_weighting = edge_weighting
        self.patience = patience
        self.selection_metric = selection_metric
        self.dtype = dtype

    # ------------------------------------------------------------------
    def _resolved_schema(self) -> TaskSchema:
        return get_schema(self.schema) if isinstance(self.schema, str) else self.schema

    def _metric_name(self, schema: TaskSchema) -> str:
        if self.selection_metric != "auto":
            return self.selection_metric
        if schema.directed and schema.positive_edge_class is not None:
            if schema.positive_edge_class == "key-value":
                return "kv_f1"
            return f"{schema.positive_edge_class}_f1"
        if schema.use_node_head:
            return "node_accuracy"
        return "edge_accuracy"

    def _build_config(self, schema: TaskSchema, X: Sequence[DocumentGraph]) -> ModelConfig:
        first = X[0].nodes[0]
        input_dims = {}
        for m in self.modalities:
            if m == "geometric":
                input_dims[m] = 4
            elif m == "textual":
                input_dims[m] = int(first.features.textual.shape[0])
            elif m == "visual":
                if first.features.visual is None:
                    raise ad.AutodiffError(
                        "visual modality enabled but graphs carry no visual features"
                    )
                input_dims[m] = int(first.features.visual.shape[0])
        return ModelConfig(
            schema=schema,
            input_dims=input_dims,
            modalities=tuple(self.modalities),
            ip_dim=self.ip_dim,
            ep_inner=self.ep_inner,
            gnn_layers=self.gnn_layers,
            threshold=self.threshold,
            scale=self.scale,
            bins=self.bins,
            dropout=self.dropout,
            gnn_update=self.gnn_update,
        )

    # ------------------------------------------------------------------
    def fit(
        self,
        X: Sequence[DocumentGraph],
        y=None,
        val: Optional[Sequence[DocumentGraph]] = None,
    ) -> "GraphNetClassifier":
        """Train on ``X``; with ``val`` given, keep the parameters of the
        epoch with the best validation metric (early-stopping after
        ``patience`` stale epochs when set)."""
        schema = self._resolved_schema()
        X = check_graphs(X, schema=schema, require_labels=True)
        if val is not None:
            val = check_graphs(val, schema=schema)
        trainable = [g for g in X if g.n_edges > 0]
        skipped = len(X) - len(trainable)
        if skipped:
            logger.warning("skipping %d single-node document(s) with no edges", skipped)
        if not trainable:
            raise ad.AutodiffError("no trainable documents (all graphs have zero edges)")

        self.config_ = self._build_config(schema, trainable)
        self.model_ = DocModel(self.config_, seed=self.seed, dtype=np.dtype(self.dtype))
        self.edge_weights_ = edge_class_weights(
            trainable, schema.n_edge_classes, self.edge_weighting
        )
        metric_name = self._metric_name(schema)
        rng = np.random.default_rng(self.seed + 1)

        self.history_ = []
        best_metric = -np.inf
        best_state = None
        self.best_epoch_ = self.epochs - 1
        stale = 0
        for epoch in range(self.epochs):
            order = rng.permutation(len(trainable))
            losses, node_losses, edge_losses = [], [], []
            for idx in order:
                graph = trainable[idx]
                self.model_.store.zero_grad()
                nlogits, elogits = self.model_.forward(graph, training=True, rng=rng)
                loss, ln, le = joint_loss(
                    nlogits,
                    node_gt_array(graph) if nlogits is not None else None,
                    elogits,
                    edge_gt_array(graph),
                    edge_weights=self.edge_weights_,
                )
                loss.backward()
                adamw_step(
                    self.model_.store,
                    lr=self.lr,
                    weight_decay=self.weight_decay,
                )
                losses.append(float(loss.data))
                node_losses.append(ln)
                edge_losses.append(le)

            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "node_loss": float(np.mean(node_losses)),
                "edge_loss": float(np.mean(edge_losses)),
            }
            if val:
                report = self.evaluate(val)
                metric = report.scalar(metric_name)
                entry["val_metric"] = metric
                entry["val_metric_name"] = metric_name
                if metric > best_metric:
                    best_metric = metric
                    best_state = self.model_.store.state_dict()
                    self.best_epoch_ = epoch
                    stale = 0
                else:
                    stale += 1
            self.history_.append(entry)
            logger.debug("epoch %d: %s", epoch, entry)
            if val and self.patience is not None and stale > self.patience:
                logger.info("early stop at epoch %d (patience %d)", epoch, self.patience)
                break

        if best_state is not None:
            self.model_.store.load_state_dict(best_state)
        return self

    # ------------------------------------------------------------------
    def predict(self, X: Sequence[DocumentGraph]) -> list[DocPrediction]:
        """Per-document argmax classes and softmax probabilities."""
        check_is_fitted(self)
        schema = self.config_.schema
        X = check_graphs(X, schema=schema)
        out = []
        for graph in X:
            nlogits, elogits = self.model_.forward(graph, training=False)
            if nlogits is not None:
                node_probs = _softmax(nlogits.data)
                node_classes = node_probs.argmax(axis=1)
            else:
                node_probs = np.zeros((graph.n_nodes, 0))
                node_classes = np.zeros(graph.n_nodes, dtype=np.int64)
            if graph.n_edges:
                edge_probs = _softmax(elogits.data)
                edge_classes = edge_probs.argmax(axis=1)
            else:
                edge_probs = np.zeros((0, schema.n_edge_classes))
                edge_classes = np.zeros(0, dtype=np.int64)
            out.append(
                DocPrediction(
                    doc_id=graph.page.doc_id,
                    node_classes=node_classes,
                    node_probs=node_probs,
                    edge_classes=edge_classes,
                    edge_probs=edge_probs,
                )
            )
        return out

    def evaluate(
        self,
        X: Sequence[DocumentGraph],
        table_gt: Optional[dict[str, list[BoundingBox]]] = None,
        detection_iou: float = 0.5,
    ) -> EvalReport:
        check_is_fitted(self)
        return evaluate(
            self.config_.schema, X, self.predict(X), table_gt=table_gt,
            detection_iou=detection_iou,
        )

    def score(self, X: Sequence[DocumentGraph], y=None) -> float:
        """Selection metric on ``X`` (key-value F1 for the form task)."""
        check_is_fitted(self)
        return self.evaluate(X).scalar(self._metric_name(self.config_.schema))

    # ------------------------------------------------------------------
    def config_snapshot(self) -> dict:
        """JSON-serializable snapshot of estimator parameters."""
        params = self.get_params()
        schema = params["schema"]
        if isinstance(schema, TaskSchema):
            name = schema_name(schema)
            params["schema"] = name if name is not None else {
                "node_classes": list(schema.node_classes),
                "edge_classes": list(schema.edge_classes),
                "directed": schema.directed,
                "use_node_head": schema.use_node_head,
                "fallback_node_class": schema.fallback_node_class,
                "positive_edge_class": schema.positive_edge_class,
            }
        params["modalities"] = list(params["modalities"])
        return params

    def save(self, path: str | Path) -> None:
        """Write parameters and the config snapshot as a checkpoint."""
        check_is_fitted(self)
        save_checkpoint(
            path,
            self.model_.store.state_dict(),
            {"model": self.config_.to_dict(), "estimator": self.config_snapshot()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "GraphNetClassifier":
        """Rebuild a fitted estimator from a checkpoint."""
        params, config = load_checkpoint(path)
        est_params = config.get("estimator", {})
        model_config = ModelConfig.from_dict(config["model"])
        known = cls().get_params()
        est = cls(**{k: v for k, v in est_params.items() if k in known})
        if isinstance(est.schema, dict):
            est.schema = model_config.schema
        if isinstance(est.modalities, list):
            est.modalities = tuple(est.modalities)
        est.config_ = model_config
        est.model_ = DocModel(model_config, seed=est.seed, dtype=np.dtype(est.dtype))
        est.model_.store.load_state_dict(params)
        est.history_ = []
        est.best_epoch_ = -1
        est.edge_weights_ = None
        return est
