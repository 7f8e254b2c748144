"""Dataset IO, ground-truth projection and fold planning."""

import json
import logging

import numpy as np
import pytest

from docgraph.doc_model import FORM_SCHEMA, BoundingBox, graphs_equal
from docgraph.features import TextEncoder
from docgraph.graph_builder import build_graph
from docgraph.ingest import (
    DatasetError,
    FoldPlan,
    RawAnnotation,
    RawEntity,
    RawLink,
    RawRegion,
    annotation_from_dict,
    annotation_to_dict,
    load_dataset,
    load_detections,
    load_graphs,
    make_folds,
    project_ground_truth,
    save_dataset,
    save_graphs,
)
from docgraph.metrics import iou
from docgraph.synth import form_corpus


def pixel_grid_iou(a, b):
    """IoU recomputed by counting integer pixels, valid for integer boxes
    read as half-open [x0, x1) x [y0, y1) ranges."""
    cells_a = {(x, y) for x in range(int(a.x0), int(a.x1)) for y in range(int(a.y0), int(a.y1))}
    cells_b = {(x, y) for x in range(int(b.x0), int(b.x1)) for y in range(int(b.y0), int(b.y1))}
    union = cells_a | cells_b
    if not union:
        return 0.0
    return len(cells_a & cells_b) / len(union)


def small_annotation():
    return RawAnnotation(
        doc_id="doc-a",
        width=100.0,
        height=100.0,
        entities=(
            RawEntity(box=BoundingBox(10, 10, 30, 18), text="name", class_name="question"),
            RawEntity(box=BoundingBox(50, 10, 80, 18), text="alice", class_name="answer"),
            RawEntity(box=BoundingBox(10, 40, 40, 48), text="notes", class_name="header"),
        ),
        links=(RawLink(src=0, dst=1, class_name="key-value"),),
    )


class TestAnnotationParsing:
    def test_round_trip(self):
        ann = small_annotation()
        again = annotation_from_dict(annotation_to_dict(ann), FORM_SCHEMA)
        assert again == ann

    def test_round_trip_with_regions_and_visual(self):
        ann = RawAnnotation(
            doc_id="d",
            width=50.0,
            height=50.0,
            entities=(
                RawEntity(box=BoundingBox(0, 0, 10, 10), text="x",
                          class_name="other", visual=np.array([0.5, -1.0, 2.0])),
            ),
            regions=(RawRegion(box=BoundingBox(0, 0, 20, 20), class_name="table"),),
        )
        again = annotation_from_dict(annotation_to_dict(ann))
        assert again.regions == ann.regions
        assert again.entities[0].box == ann.entities[0].box
        assert again.entities[0].class_name == "other"
        np.testing.assert_array_equal(again.entities[0].visual, ann.entities[0].visual)

    def test_missing_id_rejected(self):
        with pytest.raises(DatasetError):
            annotation_from_dict({"width": 10, "height": 10})

    def test_missing_dimensions_rejected(self):
        with pytest.raises(DatasetError):
            annotation_from_dict({"id": "d", "width": 10})

    def test_unknown_node_class_rejected(self):
        doc = {"id": "d", "width": 10, "height": 10,
               "entities": [{"box": [0, 0, 1, 1], "text": "", "class": "wibble"}]}
        with pytest.raises(DatasetError):
            annotation_from_dict(doc, FORM_SCHEMA)
        # without a schema the class name passes through unchecked
        assert annotation_from_dict(doc).entities[0].class_name == "wibble"

    def test_unknown_edge_class_rejected(self):
        doc = {"id": "d", "width": 10, "height": 10,
               "entities": [{"box": [0, 0, 1, 1]}, {"box": [2, 0, 3, 1]}],
               "links": [{"src": 0, "dst": 1, "class": "sibling"}]}
        with pytest.raises(DatasetError):
            annotation_from_dict(doc, FORM_SCHEMA)

    def test_link_without_class_rejected(self):
        doc = {"id": "d", "width": 10, "height": 10,
               "entities": [{"box": [0, 0, 1, 1]}, {"box": [2, 0, 3, 1]}],
               "links": [{"src": 0, "dst": 1}]}
        with pytest.raises(DatasetError):
            annotation_from_dict(doc)

    def test_bad_box_rejected(self):
        for box in ([0, 0, 1], "box", [0, 0, "a", 1], [5, 0, 1, 1]):
            doc = {"id": "d", "width": 10, "height": 10,
                   "entities": [{"box": box}]}
            with pytest.raises(DatasetError):
                annotation_from_dict(doc)

    def test_dangling_link_rejected(self):
        with pytest.raises(DatasetError):
            RawAnnotation(doc_id="d", width=10, height=10,
                          entities=(RawEntity(box=BoundingBox(0, 0, 1, 1)),),
                          links=(RawLink(src=0, dst=1, class_name="key-value"),))

    def test_self_link_rejected(self):
        with pytest.raises(DatasetError):
            RawAnnotation(doc_id="d", width=10, height=10,
                          entities=(RawEntity(box=BoundingBox(0, 0, 1, 1)),),
                          links=(RawLink(src=0, dst=0, class_name="key-value"),))


class TestDatasetFiles:
    def test_save_load_round_trip(self, tmp_path):
        corpus = form_corpus(5, seed=2)
        path = tmp_path / "train.json"
        save_dataset(corpus, path)
        loaded = load_dataset(path, FORM_SCHEMA)
        assert loaded == sorted(corpus, key=lambda a: a.doc_id)

    def test_save_is_deterministic(self, tmp_path):
        corpus = form_corpus(3, seed=7)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(corpus, a)
        save_dataset(corpus, b)
        assert a.read_bytes() == b.read_bytes()

    def test_load_sorts_by_doc_id(self, tmp_path):
        docs = [annotation_to_dict(a) for a in form_corpus(3, seed=0)]
        docs.reverse()
        path = tmp_path / "d.json"
        path.write_text(json.dumps({"documents": docs}))
        loaded = load_dataset(path)
        assert [a.doc_id for a in loaded] == sorted(a.doc_id for a in loaded)

    def test_duplicate_ids_rejected(self, tmp_path):
        doc = annotation_to_dict(small_annotation())
        path = tmp_path / "d.json"
        path.write_text(json.dumps({"documents": [doc, doc]}))
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope.json")

    def test_wrong_top_level_rejected(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(json.dumps([1, 2, 3]))
        with pytest.raises(DatasetError):
            load_dataset(path)


class TestDetectionsFile:
    def test_load(self, tmp_path):
        path = tmp_path / "det.jsonl"
        lines = [
            json.dumps({"id": "a", "boxes": [[0, 0, 5, 5], [10, 0, 20, 5]]}),
            "",
            json.dumps({"id": "b", "boxes": []}),
        ]
        path.write_text("\n".join(lines) + "\n")
        out = load_detections(path)
        assert out["a"] == [BoundingBox(0, 0, 5, 5), BoundingBox(10, 0, 20, 5)]
        assert out["b"] == []

    def test_duplicate_doc_rejected(self, tmp_path):
        path = tmp_path / "det.jsonl"
        line = json.dumps({"id": "a", "boxes": []})
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(DatasetError):
            load_detections(path)

    def test_missing_id_rejected(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text(json.dumps({"boxes": []}) + "\n")
        with pytest.raises(DatasetError):
            load_detections(path)


class TestProjectGroundTruth:
    def test_perfect_detector_is_identity(self):
        gt = small_annotation()
        projected = project_ground_truth([e.box for e in gt.entities], gt)
        assert projected == gt

    def test_missed_endpoint_drops_link_keeps_entity(self):
        gt = small_annotation()
        # answer (entity 1) goes undetected
        projected = project_ground_truth([gt.entities[0].box, gt.entities[2].box], gt)
        assert len(projected.entities) == 2
        assert projected.entities[0].class_name == "question"
        assert projected.entities[0].text == "name"
        assert projected.entities[1].class_name == "header"
        assert projected.links == ()

    def test_low_overlap_detection_becomes_fallback(self):
        gt = RawAnnotation(
            doc_id="d", width=10, height=10,
            entities=(RawEntity(box=BoundingBox(0, 0, 2, 2), text="q",
                                class_name="question"),),
        )
        det = BoundingBox(1, 1, 3, 3)
        expected_iou = pixel_grid_iou(gt.entities[0].box, det)
        assert expected_iou == 1.0 / 7.0
        assert iou(gt.entities[0].box, det) == expected_iou

        projected = project_ground_truth([det], gt, iou_threshold=0.5)
        assert projected.entities[0].class_name == "other"
        assert projected.entities[0].text == ""
        assert projected.entities[0].box == det

    def test_matched_detection_keeps_its_own_box(self):
        gt = small_annotation()
        det = BoundingBox(11, 10, 31, 18)        # question box shifted by 1
        projected = project_ground_truth([det], gt)
        assert projected.entities[0].box == det
        assert projected.entities[0].class_name == "question"
        assert projected.entities[0].text == "name"

    def test_one_to_one_greedy(self):
        gt = RawAnnotation(
            doc_id="d", width=10, height=10,
            entities=(RawEntity(box=BoundingBox(0, 0, 8, 8), text="q",
                                class_name="question"),),
        )
        # both detections clear the threshold; only the better one matches
        dets = [BoundingBox(0, 0, 8, 8), BoundingBox(0, 0, 8, 7)]
        projected = project_ground_truth(dets, gt)
        assert projected.entities[0].class_name == "question"
        assert projected.entities[1].class_name == "other"

    def test_threshold_is_strict(self):
        gt = RawAnnotation(
            doc_id="d", width=10, height=10,
            entities=(RawEntity(box=BoundingBox(0, 0, 2, 2), text="q",
                                class_name="question"),),
        )
        det = BoundingBox(0, 0, 2, 1)
        assert iou(det, gt.entities[0].box) == 0.5
        projected = project_ground_truth([det], gt, iou_threshold=0.5)
        assert projected.entities[0].class_name == "other"

    def test_no_detections_empties_annotation(self, caplog):
        gt = small_annotation()
        with caplog.at_level(logging.WARNING, logger="docgraph.ingest"):
            projected = project_ground_truth([], gt)
        assert projected.entities == ()
        assert projected.links == ()
        assert any("no detections" in r.message for r in caplog.records)

    def test_bad_threshold_rejected(self):
        gt = small_annotation()
        for threshold in (0.0, -0.1, 1.5):
            with pytest.raises(DatasetError):
                project_ground_truth([], gt, iou_threshold=threshold)

    def test_projection_invariants_random(self):
        rng = np.random.default_rng(5)
        for ann in form_corpus(10, seed=9):
            dets = []
            for ent in ann.entities:
                if rng.uniform() < 0.7:
                    dx, dy = rng.uniform(-2, 2, 2)
                    box = ent.box
                    dets.append(BoundingBox(
                        max(0.0, box.x0 + dx), max(0.0, box.y0 + dy),
                        box.x1 + dx + 2.0, box.y1 + dy + 2.0))
            for _ in range(rng.integers(0, 3)):
                x0, y0 = rng.uniform(0, 900, 2)
                dets.append(BoundingBox(x0, y0, x0 + 30, y0 + 10))
            projected = project_ground_truth(dets, ann)

            assert len(projected.entities) == len(dets)
            assert [e.box for e in projected.entities] == dets
            valid = set(FORM_SCHEMA.node_classes)
            assert all(e.class_name in valid for e in projected.entities)
            for link in projected.links:
                assert 0 <= link.src < len(dets)
                assert 0 <= link.dst < len(dets)
                assert link.class_name == "key-value"
            assert len(projected.links) <= len(ann.links)


class TestFoldPlans:
    def test_uneven_fold_sizes(self):
        docs = [f"doc-{i:03d}" for i in range(199)]
        plan = make_folds(docs, k=10, seed=0)
        sizes = sorted(
            (sum(1 for f in plan.assignments.values() if f == i) for i in range(10)),
            reverse=True,
        )
        assert sizes == [20] * 9 + [19]

    def test_split_disjoint_and_complete(self):
        docs = [f"d{i}" for i in range(20)]
        plan = make_folds(docs, k=4, seed=1)
        for run in range(plan.n_runs):
            train, val, test = plan.split(run)
            assert not (set(train) & set(val))
            assert not (set(train) & set(test))
            assert not (set(val) & set(test))
            assert sorted(train + val + test) == sorted(docs)
            assert set(test) == {d for d, f in plan.assignments.items() if f == run}
            assert set(val) == {d for d, f in plan.assignments.items()
                                if f == (run + 1) % 4}

    def test_same_seed_same_plan(self):
        docs = [f"d{i}" for i in range(30)]
        assert make_folds(docs, 5, seed=3) == make_folds(docs, 5, seed=3)
        assert make_folds(docs, 5, seed=3) != make_folds(docs, 5, seed=4)

    def test_input_order_irrelevant(self):
        docs = [f"d{i}" for i in range(12)]
        assert make_folds(docs, 3, seed=0) == make_folds(list(reversed(docs)), 3, seed=0)

    def test_fixed_split(self):
        docs = [f"d{i:03d}" for i in range(518)]
        plan = make_folds(docs, k=3, seed=0, fixed_split=(362, 52, 104))
        assert plan.n_runs == 1
        train, val, test = plan.split(0)
        assert (len(train), len(val), len(test)) == (362, 52, 104)
        with pytest.raises(DatasetError):
            plan.split(1)

    def test_fixed_split_sum_mismatch(self):
        with pytest.raises(DatasetError):
            make_folds(["a", "b", "c"], k=3, seed=0, fixed_split=(1, 1, 2))

    def test_bad_k(self):
        with pytest.raises(DatasetError):
            make_folds(["a", "b", "c"], k=1, seed=0)
        with pytest.raises(DatasetError):
            make_folds(["a", "b", "c"], k=4, seed=0)

    def test_plan_validation(self):
        with pytest.raises(DatasetError):
            FoldPlan(k=2, assignments={"a": 0, "b": 0, "c": 0, "d": 1, "e": 0})
        with pytest.raises(DatasetError):
            FoldPlan(k=2, assignments={"a": 0, "b": 5})
        with pytest.raises(DatasetError):
            FoldPlan(k=1, assignments={"a": 0})


class TestGraphCache:
    def test_round_trip_featurized(self, tmp_path):
        encoder = TextEncoder.hashing(dim=16)
        graphs = [build_graph(ann, FORM_SCHEMA, encoder) for ann in form_corpus(4, seed=1)]
        path = tmp_path / "graphs.jsonl"
        save_graphs(graphs, path)
        loaded = load_graphs(path)
        assert len(loaded) == len(graphs)
        for a, b in zip(graphs, loaded):
            assert graphs_equal(a, b)

    def test_round_trip_with_visual(self, tmp_path):
        ann = RawAnnotation(
            doc_id="v", width=50, height=50,
            entities=(
                RawEntity(box=BoundingBox(0, 0, 10, 10), text="a", class_name="question",
                          visual=np.array([1.0, 0.25])),
                RawEntity(box=BoundingBox(20, 0, 30, 10), text="b", class_name="answer",
                          visual=np.array([-0.5, 3.0])),
            ),
            links=(RawLink(src=0, dst=1, class_name="key-value"),),
        )
        graph = build_graph(ann, FORM_SCHEMA, TextEncoder.hashing(dim=8), use_visual=True)
        path = tmp_path / "graphs.jsonl"
        save_graphs([graph], path)
        loaded = load_graphs(path)
        assert graphs_equal(graph, loaded[0])
        np.testing.assert_array_equal(
            loaded[0].nodes[0].features.visual, graph.nodes[0].features.visual
        )
