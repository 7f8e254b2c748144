"""Command-line interface.

Subcommands cover the whole pipeline::

    docgraph synth    generate a synthetic corpus (dataset JSON)
    docgraph build    dataset JSON -> featurized graph cache (JSON lines)
    docgraph train    graph cache -> cross-validated run directory
    docgraph predict  checkpoint + graph cache -> predictions (JSON lines)
    docgraph eval     predictions or checkpoint -> metrics JSON
    docgraph render   graph (+ predictions) -> SVG overlay

Options may come from an INI config file (sections ``[model]``,
``[train]``, ``[paths]``; values use the same spelling as the flags);
command-line flags override file values.  Every subcommand writes a
``*.run.json`` snapshot of its resolved options next to its output, and
all outputs are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .doc_model import DocumentGraph, TaskSchema, get_schema
from .estimator import GraphNetClassifier
from .features import DEFAULT_BINS, DEFAULT_TEXT_DIM, TextEncoder, load_embedding_table
from .graph_builder import build_graph, with_region_links
from .ingest import (
    load_dataset,
    load_graphs,
    make_folds,
    save_dataset,
    save_graphs,
)
from .metrics import DocPrediction, evaluate
from .render import render_svg
from .synth import form_corpus, invoice_corpus, table_ground_truth
from .training import cross_validate

logger = logging.getLogger(__name__)


def _modalities(value) -> tuple[str, ...]:
    if isinstance(value, tuple):
        return value
    return tuple(part.strip() for part in str(value).split(",") if part.strip())


def _patience(value) -> Optional[int]:
    if value is None or str(value).lower() in ("none", ""):
        return None
    return int(value)


#: name -> (cast, config section); the flag spelling is --name with
#: underscores turned into dashes.
TRAIN_PARAMS: dict[str, tuple] = {
    "schema": (str, "model"),
    "modalities": (_modalities, "model"),
    "ip_dim": (int, "model"),
    "ep_inner": (int, "model"),
    "gnn_layers": (int, "model"),
    "threshold": (float, "model"),
    "scale": (float, "model"),
    "bins": (int, "model"),
    "dropout": (float, "model"),
    "gnn_update": (str, "model"),
    "lr": (float, "train"),
    "weight_decay": (float, "train"),
    "epochs": (int, "train"),
    "seed": (int, "train"),
    "edge_weighting": (str, "train"),
    "patience": (_patience, "train"),
    "selection_metric": (str, "train"),
}


def read_config(path: str | Path) -> dict[str, dict[str, str]]:
    """Parse an INI config file into a {section: {key: value}} dict."""
    parser = configparser.ConfigParser()
    with Path(path).open("r", encoding="utf-8") as fh:
        parser.read_file(fh)
    return {section: dict(parser[section]) for section in parser.sections()}


def resolve_params(args: argparse.Namespace) -> dict:
    """Estimator parameters: defaults, then config file, then flags."""
    params = GraphNetClassifier().get_params()
    config = read_config(args.config) if getattr(args, "config", None) else {}
    for name, (cast, section) in TRAIN_PARAMS.items():
        if section in config and name in config[section]:
            params[name] = cast(config[section][name])
        flag = getattr(args, name, None)
        if flag is not None:
            params[name] = cast(flag)
    return params


def _config_path(args: argparse.Namespace, key: str) -> Optional[str]:
    value = getattr(args, key, None)
    if value is not None:
        return value
    if getattr(args, "config", None):
        return read_config(args.config).get("paths", {}).get(key)
    return None


def write_run_snapshot(out: Path, command: str, options: dict) -> None:
    """Record the resolved options so the run can be reproduced."""
    target = out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")
    payload = {"command": command, "options": options}
    target.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                      encoding="utf-8")


def _encoder_from_args(args: argparse.Namespace) -> TextEncoder:
    if args.encoder == "hashing":
        return TextEncoder.hashing(args.text_dim)
    return load_embedding_table(args.encoder)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args: argparse.Namespace) -> int:
    if args.kind == "form":
        corpus = form_corpus(args.docs, seed=args.seed)
    else:
        corpus = invoice_corpus(args.docs, seed=args.seed, n_tables=args.tables)
    out = Path(args.out)
    save_dataset(corpus, out)
    write_run_snapshot(out, "synth", {
        "kind": args.kind, "docs": args.docs, "seed": args.seed,
        "tables": args.tables, "out": str(out),
    })
    logger.info("wrote %d %s documents to %s", len(corpus), args.kind, out)
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    schema = get_schema(args.schema)
    encoder = _encoder_from_args(args)
    annotations = load_dataset(args.dataset, schema)
    if args.region_links:
        annotations = [with_region_links(ann) for ann in annotations]
    empty = [ann.doc_id for ann in annotations if not ann.entities]
    if empty:
        logger.warning("skipping %d document(s) with no entities: %s",
                       len(empty), empty[:5])
        annotations = [ann for ann in annotations if ann.entities]
    graphs = [
        build_graph(ann, schema, encoder, bins=args.bins, use_visual=args.visual,
                    centered_bins=args.bin_mode == "centered")
        for ann in annotations
    ]
    out = Path(args.out)
    save_graphs(graphs, out)
    write_run_snapshot(out, "build", {
        "dataset": str(args.dataset), "schema": args.schema, "encoder": args.encoder,
        "text_dim": args.text_dim, "bins": args.bins, "bin_mode": args.bin_mode,
        "visual": args.visual, "region_links": args.region_links, "out": str(out),
    })
    logger.info("wrote %d graphs to %s", len(graphs), out)
    return 0


def _load_table_gt(args: argparse.Namespace, schema: TaskSchema):
    dataset = _config_path(args, "dataset")
    if dataset is None:
        return None
    return table_ground_truth(load_dataset(dataset, schema))


def cmd_train(args: argparse.Namespace) -> int:
    params = resolve_params(args)
    graphs_path = _config_path(args, "graphs")
    out = _config_path(args, "out")
    if graphs_path is None or out is None:
        raise SystemExit("train requires --graphs and --out (flags or [paths] config)")
    graphs = load_graphs(graphs_path)
    est = GraphNetClassifier(**params)
    doc_ids = [g.page.doc_id for g in graphs]
    fixed = tuple(int(v) for v in args.fixed_split.split(",")) if args.fixed_split else None
    plan = make_folds(doc_ids, k=args.folds, seed=params["seed"], fixed_split=fixed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_snapshot(out_dir, "train", {
        **{k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()},
        "graphs": str(graphs_path), "out": str(out), "folds": args.folds,
        "fixed_split": args.fixed_split,
        "detection_iou": args.detection_iou,
    })
    summary = cross_validate(
        est, graphs, plan, out_dir,
        table_gt=_load_table_gt(args, est._resolved_schema()),
        detection_iou=args.detection_iou,
    )
    logger.info("cross-validation done: %s", json.dumps(summary.get("n_folds")))
    return 0


def _predictions_to_records(
    graphs: Sequence[DocumentGraph],
    predictions: Sequence[DocPrediction],
    schema: TaskSchema,
) -> list[dict]:
    records = []
    for graph, pred in zip(graphs, predictions):
        nodes = []
        if schema.use_node_head:
            for node in graph.nodes:
                cls = int(pred.node_classes[node.id])
                nodes.append({
                    "id": node.id,
                    "class": schema.node_classes[cls],
                    "probs": [float(p) for p in pred.node_probs[node.id]],
                })
        edges = []
        for k, edge in enumerate(graph.edges):
            cls = int(pred.edge_classes[k])
            edges.append({
                "src": edge.src, "dst": edge.dst,
                "class": schema.edge_classes[cls],
                "probs": [float(p) for p in pred.edge_probs[k]],
            })
        records.append({"doc_id": pred.doc_id, "nodes": nodes, "edges": edges})
    return records


def load_predictions(
    path: str | Path, graphs: Sequence[DocumentGraph], schema: TaskSchema
) -> list[DocPrediction]:
    """Read a predictions file back, aligned to the given graphs."""
    by_id = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                by_id[rec["doc_id"]] = rec
    out = []
    for graph in graphs:
        rec = by_id.get(graph.page.doc_id)
        if rec is None:
            raise SystemExit(f"no predictions for document {graph.page.doc_id!r}")
        n = graph.n_nodes
        node_classes = np.zeros(n, dtype=np.int64)
        node_probs = np.zeros((n, schema.n_node_classes if schema.use_node_head else 0))
        for entry in rec.get("nodes", []):
            node_classes[entry["id"]] = schema.node_index(entry["class"])
            node_probs[entry["id"]] = entry["probs"]
        index = graph.edge_index_map()
        edge_classes = np.zeros(graph.n_edges, dtype=np.int64)
        edge_probs = np.zeros((graph.n_edges, schema.n_edge_classes))
        for entry in rec.get("edges", []):
            key = (entry["src"], entry["dst"])
            if key not in index and not schema.directed:
                key = (key[1], key[0])
            k = index[key]
            edge_classes[k] = schema.edge_index(entry["class"])
            edge_probs[k] = entry["probs"]
        out.append(DocPrediction(
            doc_id=graph.page.doc_id, node_classes=node_classes,
            node_probs=node_probs, edge_classes=edge_classes, edge_probs=edge_probs,
        ))
    return out


def cmd_predict(args: argparse.Namespace) -> int:
    est = GraphNetClassifier.load(args.checkpoint)
    graphs = load_graphs(args.graphs)
    predictions = est.predict(graphs)
    records = _predictions_to_records(graphs, predictions, est.config_.schema)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_run_snapshot(out, "predict", {
        "checkpoint": str(args.checkpoint), "graphs": str(args.graphs), "out": str(out),
    })
    logger.info("wrote predictions for %d documents to %s", len(records), out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    graphs = load_graphs(args.graphs)
    if args.checkpoint:
        est = GraphNetClassifier.load(args.checkpoint)
        schema = est.config_.schema
        predictions = est.predict(graphs)
    elif args.predictions:
        schema = get_schema(args.schema)
        predictions = load_predictions(args.predictions, graphs, schema)
    else:
        raise SystemExit("eval requires --checkpoint or --predictions")
    report = evaluate(
        schema, graphs, predictions,
        table_gt=_load_table_gt(args, schema),
        detection_iou=args.detection_iou,
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
                   encoding="utf-8")
    write_run_snapshot(out, "eval", {
        "graphs": str(args.graphs), "checkpoint": args.checkpoint,
        "predictions": args.predictions, "schema": args.schema,
        "dataset": getattr(args, "dataset", None), "detection_iou": args.detection_iou,
        "out": str(out),
    })
    logger.info("wrote metrics to %s", out)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    graphs = load_graphs(args.graphs)
    schema = get_schema(args.schema)
    if args.doc is not None:
        graphs = [g for g in graphs if g.page.doc_id == args.doc]
        if not graphs:
            raise SystemExit(f"document {args.doc!r} not found")
    graph = graphs[0]
    prediction = None
    if args.predictions:
        prediction = load_predictions(args.predictions, [graph], schema)[0]
    out = Path(args.out)
    out.write_text(render_svg(graph, schema, prediction, show_text=args.show_text),
                   encoding="utf-8")
    write_run_snapshot(out, "render", {
        "graphs": str(args.graphs), "doc": graph.page.doc_id, "schema": args.schema,
        "predictions": args.predictions, "show_text": args.show_text, "out": str(out),
    })
    logger.info("wrote %s", out)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docgraph",
        description="document graphs: build, train, evaluate, render",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="dataset JSON to write")
    p.add_argument("--docs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("form", "invoice"), default="form")
    p.add_argument("--tables", type=int, default=1, help="tables per invoice page")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="featurize a dataset into a graph cache")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="graph cache (JSON lines) to write")
    p.add_argument("--schema", default="form")
    p.add_argument("--encoder", default="hashing",
                   help='"hashing" or a path to an embedding table file')
    p.add_argument("--text-dim", type=int, default=DEFAULT_TEXT_DIM,
                   help="hashing encoder dimension")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--bin-mode", choices=("centered", "floor"), default="centered")
    p.add_argument("--visual", action="store_true",
                   help="require and attach per-entity visual vectors")
    p.add_argument("--region-links", action="store_true",
                   help="derive same-region links from region annotations")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--config", help="INI config file ([model]/[train]/[paths])")
    p.add_argument("--graphs", help="graph cache from `build`")
    p.add_argument("--out", help="run directory to write")
    p.add_argument("--dataset", help="dataset JSON with regions, for table scoring")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--fixed-split", help="train,val,test sizes instead of k-fold")
    p.add_argument("--detection-iou", type=float, default=0.5)
    for name in TRAIN_PARAMS:
        p.add_argument("--" + name.replace("_", "-"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a checkpoint over a graph cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True, help="predictions (JSON lines) to write")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--schema", default="form",
                   help="schema name when scoring a predictions file")
    p.add_argument("--dataset", help="dataset JSON with regions, for table scoring")
    p.add_argument("--detection-iou", type=float, default=0.5)
    p.add_argument("--out", required=True, help="metrics JSON to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw a document as SVG")
    p.add_argument("--graphs", required=True)
    p.add_argument("--doc", help="document id (default: first in the cache)")
    p.add_argument("--schema", default="form")
    p.add_argument("--predictions", help="draw predicted classes instead of ground truth")
    p.add_argument("--show-text", action="store_true")
    p.add_argument("--out", required=True, help="SVG file to write")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
