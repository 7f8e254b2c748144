"""Joint-loss training utilities and the cross-validation driver.

The loss is the sum of a node-classification and an edge-classification
cross-entropy, each an optionally class-weighted mean.  Cross-validation
trains one estimator per fold, selects the checkpoint with the best
validation metric and evaluates it once on the fold's test split.

Run directory layout::

    <out_dir>/fold<k>/checkpoint.dgc   model parameters + config snapshot
    <out_dir>/fold<k>/config.json      estimator parameters
    <out_dir>/fold<k>/metrics.json     val/test reports for the fold
    <out_dir>/fold<k>/log              per-epoch training log
    <out_dir>/metrics.json             per-fold reports plus mean/std
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import clone

from . import autodiff as ad
from .autodiff import Tensor
from .doc_model import BoundingBox, DocumentGraph
from .ingest import FoldPlan
from .metrics import EvalReport, summarize_reports

logger = logging.getLogger(__name__)

#: Sentinel for unlabeled entries in ground-truth index arrays.
UNLABELED = -1


def joint_loss(
    node_logits: Optional[Tensor],
    node_gt: Optional[np.ndarray],
    edge_logits: Tensor,
    edge_gt: np.ndarray,
    node_weights: Optional[np.ndarray] = None,
    edge_weights: Optional[np.ndarray] = None,
) -> tuple[Tensor, float, float]:
    """Total loss plus its node/edge components as floats.

    Entries equal to :data:`UNLABELED` are excluded from their component.
    A disabled node head (``node_logits is None``) contributes zero.
    """
    edge_gt = np.asarray(edge_gt, dtype=np.int64)
    if edge_gt.size == 0:
        raise ad.AutodiffError("joint_loss with an empty edge set")
    labeled_edges = np.flatnonzero(edge_gt != UNLABELED)
    if labeled_edges.size == 0:
        raise ad.AutodiffError("joint_loss with no labeled edges")
    if labeled_edges.size < edge_gt.size:
        edge_logits = ad.gather_rows(edge_logits, labeled_edges)
        edge_gt = edge_gt[labeled_edges]
    edge_loss = ad.cross_entropy(edge_logits, edge_gt, edge_weights)

    node_loss: Optional[Tensor] = None
    if node_logits is not None and node_gt is not None:
        node_gt = np.asarray(node_gt, dtype=np.int64)
        labeled = np.flatnonzero(node_gt != UNLABELED)
        if labeled.size:
            logits = node_logits
            gt = node_gt
            if labeled.size < node_gt.size:
                logits = ad.gather_rows(node_logits, labeled)
                gt = node_gt[labeled]
            node_loss = ad.cross_entropy(logits, gt, node_weights)

    if node_loss is None:
        return edge_loss, 0.0, float(edge_loss.data)
    total = ad.add(node_loss, edge_loss)
    return total, float(node_loss.data), float(edge_loss.data)


def node_gt_array(graph: DocumentGraph) -> np.ndarray:
    return np.array(
        [node.gt_class if node.gt_class is not None else UNLABELED for node in graph.nodes],
        dtype=np.int64,
    )


def edge_gt_array(graph: DocumentGraph) -> np.ndarray:
    return np.array(
        [edge.gt_class if edge.gt_class is not None else UNLABELED for edge in graph.edges],
        dtype=np.int64,
    )


def edge_class_weights(
    graphs: Sequence[DocumentGraph], n_classes: int, mode: str = "inverse-frequency"
) -> Optional[np.ndarray]:
    """Per-class loss weights for the edge head.

    ``inverse-frequency`` uses ``total / (C * count_c)`` computed on the
    given (training) graphs, so the dominant "none" class of a
    fully-connected graph stops swamping the loss.  Classes that never
    occur get weight zero; ``uniform`` returns ``None``.
    """
    if mode == "uniform":
        return None
    if mode != "inverse-frequency":
        raise ValueError(f"unknown edge weighting mode {mode!r}")
    counts = np.zeros(n_classes, dtype=np.float64)
    for graph in graphs:
        gt = edge_gt_array(graph)
        labeled = gt[gt != UNLABELED]
        counts += np.bincount(labeled, minlength=n_classes)
    total = counts.sum()
    if total == 0:
        return None
    weights = np.zeros(n_classes)
    nonzero = counts > 0
    weights[nonzero] = total / (n_classes * counts[nonzero])
    return weights


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    val_report: EvalReport
    test_report: EvalReport
    checkpoint_path: Path


def cross_validate(
    estimator,
    graphs: Sequence[DocumentGraph],
    plan: FoldPlan,
    out_dir: str | Path,
    table_gt: Optional[dict[str, list[BoundingBox]]] = None,
    detection_iou: float = 0.5,
) -> dict:
    """Train/evaluate ``estimator`` on every run of ``plan``.

    Fold ``f`` uses seed ``estimator.seed + f`` so folds differ but the
    whole procedure stays reproducible.  Returns the summary dict also
    written to ``<out_dir>/metrics.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {g.page.doc_id: g for g in graphs}
    missing = [d for d in plan.assignments if d not in by_id]
    if missing:
        raise ValueError(f"fold plan references unknown documents: {missing[:5]}")

    results: list[FoldResult] = []
    for run in range(plan.n_runs):
        train_ids, val_ids, test_ids = plan.split(run)
        if not train_ids:
            raise ValueError(f"fold {run} has an empty training split")
        fold_dir = out_dir / f"fold{run}"
        fold_dir.mkdir(parents=True, exist_ok=True)

        est = clone(estimator)
        est.set_params(seed=estimator.seed + run)
        train = [by_id[d] for d in train_ids]
        val = [by_id[d] for d in val_ids] if val_ids else None
        test = [by_id[d] for d in test_ids]

        est.fit(train, val=val)
        val_report = est.evaluate(val, table_gt=table_gt, detection_iou=detection_iou) if val else None
        test_report = est.evaluate(test, table_gt=table_gt, detection_iou=detection_iou)

        checkpoint_path = fold_dir / "checkpoint.dgc"
        est.save(checkpoint_path)
        (fold_dir / "config.json").write_text(
            json.dumps(est.config_snapshot(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        fold_metrics = {
            "fold": run,
            "best_epoch": est.best_epoch_,
            "val": val_report.to_dict() if val_report else None,
            "test": test_report.to_dict(),
        }
        (fold_dir / "metrics.json").write_text(
            json.dumps(fold_metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        with (fold_dir / "log").open("w", encoding="utf-8") as fh:
            for entry in est.history_:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        logger.info("fold %d: best epoch %d", run, est.best_epoch_)
        results.append(
            FoldResult(
                fold=run,
                best_epoch=est.best_epoch_,
                val_report=val_report,
                test_report=test_report,
                checkpoint_path=checkpoint_path,
            )
        )

    summary = summarize_reports([r.test_report for r in results])
    summary["n_folds"] = plan.n_runs
    (out_dir / "metrics.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return summary
