"""Joint node and edge classification over document layout graphs.

Pages become fully-connected graphs of text entities; a small graph
network (built on an internal reverse-mode autodiff core) classifies
entities into form roles and entity pairs into link types such as
key-value.  Includes dataset plumbing, synthetic corpora, evaluation
metrics and an SVG renderer, tied together by the ``docgraph`` CLI.
"""

from .autodiff import (
    AutodiffError,
    NonFiniteError,
    ParamStore,
    Tensor,
    adamw_step,
    load_checkpoint,
    save_checkpoint,
)
from .doc_model import (
    FORM_SCHEMA,
    INVOICE_SCHEMA,
    BoundingBox,
    DocEdge,
    DocNode,
    DocumentGraph,
    EdgeFeatures,
    GraphError,
    Page,
    TaskSchema,
    get_schema,
    new_document_graph,
)
from .estimator import GraphNetClassifier
from .features import (
    FeatureBundle,
    TextEncoder,
    encode_text,
    featurize_graph,
    geometric_features,
    load_embedding_table,
    min_box_distance,
    polar_edge_features,
)
from .graph_builder import build_graph, links_from_regions, with_region_links
from .ingest import (
    DatasetError,
    FoldPlan,
    RawAnnotation,
    RawEntity,
    RawLink,
    RawRegion,
    load_dataset,
    load_detections,
    load_graphs,
    make_folds,
    project_ground_truth,
    save_dataset,
    save_graphs,
)
from .metrics import (
    DocPrediction,
    EvalReport,
    MetricError,
    auc_pr,
    classification_report,
    detection_report,
    evaluate,
    extract_table_regions,
    iou,
)
from .model import DocModel, ModelConfig
from .render import render_svg
from .synth import form_corpus, invoice_corpus, table_ground_truth
from .training import cross_validate, edge_class_weights, joint_loss
from .validation import NotFittedError, check_graphs, check_is_fitted

__version__ = "0.1.0"

__all__ = [
    "AutodiffError",
    "BoundingBox",
    "DatasetError",
    "DocEdge",
    "DocModel",
    "DocNode",
    "DocPrediction",
    "DocumentGraph",
    "EdgeFeatures",
    "EvalReport",
    "FORM_SCHEMA",
    "FeatureBundle",
    "FoldPlan",
    "GraphError",
    "GraphNetClassifier",
    "INVOICE_SCHEMA",
    "MetricError",
    "ModelConfig",
    "NonFiniteError",
    "NotFittedError",
    "Page",
    "ParamStore",
    "RawAnnotation",
    "RawEntity",
    "RawLink",
    "RawRegion",
    "TaskSchema",
    "Tensor",
    "TextEncoder",
    "adamw_step",
    "auc_pr",
    "build_graph",
    "check_graphs",
    "check_is_fitted",
    "classification_report",
    "cross_validate",
    "detection_report",
    "edge_class_weights",
    "encode_text",
    "evaluate",
    "extract_table_regions",
    "featurize_graph",
    "form_corpus",
    "geometric_features",
    "get_schema",
    "invoice_corpus",
    "iou",
    "joint_loss",
    "links_from_regions",
    "load_checkpoint",
    "load_dataset",
    "load_detections",
    "load_embedding_table",
    "load_graphs",
    "make_folds",
    "min_box_distance",
    "new_document_graph",
    "polar_edge_features",
    "project_ground_truth",
    "render_svg",
    "save_checkpoint",
    "save_dataset",
    "save_graphs",
    "table_ground_truth",
    "with_region_links",
]
