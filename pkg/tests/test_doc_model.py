"""Core graph types: boxes, pages, schemas, graphs."""

import numpy as np
import pytest

from docgraph.doc_model import (
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
    graphs_equal,
    new_document_graph,
    schema_name,
)


class TestBoundingBox:
    def test_accessors(self):
        box = BoundingBox(1.0, 2.0, 4.0, 8.0)
        assert box.width == 3.0
        assert box.height == 6.0
        assert box.area == 18.0
        assert box.center == (2.5, 5.0)
        assert box.as_tuple() == (1.0, 2.0, 4.0, 8.0)

    def test_rejects_inverted_corners(self):
        with pytest.raises(GraphError):
            BoundingBox(2.0, 0.0, 1.0, 1.0)
        with pytest.raises(GraphError):
            BoundingBox(0.0, 2.0, 1.0, 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(GraphError):
            BoundingBox(0.0, 0.0, float("nan"), 1.0)
        with pytest.raises(GraphError):
            BoundingBox(0.0, 0.0, float("inf"), 1.0)

    def test_degenerate_box_allowed(self):
        box = BoundingBox(1.0, 1.0, 1.0, 1.0)
        assert box.area == 0.0

    def test_union(self):
        a = BoundingBox(0.0, 1.0, 2.0, 2.0)
        b = BoundingBox(1.0, 0.0, 3.0, 1.5)
        assert a.union(b).as_tuple() == (0.0, 0.0, 3.0, 2.0)

    def test_rejects_negative_coordinates(self):
        with pytest.raises(GraphError):
            BoundingBox(-1.0, 0.0, 2.0, 2.0)

    def test_contains_point_closed(self):
        box = BoundingBox(0.0, 0.0, 2.0, 2.0)
        assert box.contains_point(0.0, 0.0)
        assert box.contains_point(2.0, 2.0)
        assert not box.contains_point(2.1, 1.0)
        assert not box.contains_point(1.0, 2.1)


class TestPage:
    def test_diagonal(self):
        assert Page(width=3.0, height=4.0, doc_id="d").diagonal == 5.0

    def test_rejects_non_positive_dims(self):
        with pytest.raises(GraphError):
            Page(width=0.0, height=4.0, doc_id="d")
        with pytest.raises(GraphError):
            Page(width=3.0, height=-1.0, doc_id="d")


class TestEdgeFeatures:
    def _polar(self, distance, bin_index, bins=8):
        polar = np.zeros(1 + bins)
        polar[0] = distance
        polar[1 + bin_index] = 1.0
        return polar

    def test_valid(self):
        f = EdgeFeatures(distance=0.25, angle_bin=3, polar=self._polar(0.25, 3))
        assert f.polar[0] == 0.25
        assert f.polar.flags.writeable is False

    def test_rejects_distance_mismatch(self):
        with pytest.raises(GraphError):
            EdgeFeatures(distance=0.5, angle_bin=3, polar=self._polar(0.25, 3))

    def test_rejects_bad_one_hot(self):
        polar = self._polar(0.25, 3)
        polar[2] = 1.0
        with pytest.raises(GraphError):
            EdgeFeatures(distance=0.25, angle_bin=3, polar=polar)

    def test_rejects_bin_mismatch(self):
        with pytest.raises(GraphError):
            EdgeFeatures(distance=0.25, angle_bin=2, polar=self._polar(0.25, 3))


class TestTaskSchema:
    def test_builtin_form(self):
        assert FORM_SCHEMA.directed
        assert FORM_SCHEMA.node_classes == ("question", "answer", "header", "other")
        assert FORM_SCHEMA.edge_classes == ("none", "key-value")
        assert FORM_SCHEMA.none_edge_index == 0
        assert FORM_SCHEMA.positive_edge_class == "key-value"

    def test_builtin_invoice(self):
        assert not INVOICE_SCHEMA.directed
        assert INVOICE_SCHEMA.node_classes == (
            "supplier", "invoice_info", "receiver", "table", "total", "other"
        )
        assert INVOICE_SCHEMA.edge_classes == ("none", "table")

    def test_lookup_by_name(self):
        assert get_schema("form") is FORM_SCHEMA
        assert get_schema("invoice") is INVOICE_SCHEMA
        assert schema_name(FORM_SCHEMA) == "form"
        with pytest.raises(GraphError):
            get_schema("receipts")

    def test_none_must_lead_edge_classes(self):
        with pytest.raises(GraphError):
            TaskSchema(node_classes=("a", "b", "other"),
                       edge_classes=("link", "none"), directed=True)
        with pytest.raises(GraphError):
            TaskSchema(node_classes=("a", "b", "other"),
                       edge_classes=("none", "link", "none"), directed=True)

    def test_class_index_lookup(self):
        assert FORM_SCHEMA.node_index("answer") == 1
        assert FORM_SCHEMA.edge_index("key-value") == 1
        with pytest.raises(GraphError):
            FORM_SCHEMA.node_index("total")
        with pytest.raises(GraphError):
            FORM_SCHEMA.edge_index("table")

    def test_fallback_class_must_exist(self):
        with pytest.raises(GraphError):
            TaskSchema(node_classes=("a", "b"), edge_classes=("none", "link"),
                       directed=True, fallback_node_class="other")


def _nodes(n):
    return [
        DocNode(id=i, box=BoundingBox(10.0 * i, 0.0, 10.0 * i + 5.0, 5.0), text=f"t{i}")
        for i in range(n)
    ]


class TestDocumentGraph:
    def test_fully_connected_directed(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        g = new_document_graph(page, _nodes(4), directed=True)
        assert g.n_nodes == 4
        assert g.n_edges == 12
        pairs = [(e.src, e.dst) for e in g.edges]
        assert pairs == sorted(pairs)
        assert all(s != d for s, d in pairs)

    def test_fully_connected_undirected(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        g = new_document_graph(page, _nodes(5), directed=False)
        assert g.n_edges == 10
        assert all(e.src < e.dst for e in g.edges)

    def test_node_ids_must_be_dense(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        nodes = _nodes(3)
        nodes[2] = DocNode(id=7, box=nodes[2].box, text="x")
        with pytest.raises(GraphError):
            DocumentGraph(page=page, nodes=tuple(nodes), edges=(), directed=True)

    def test_undirected_rejects_noncanonical_edge(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        with pytest.raises(GraphError):
            DocumentGraph(page=page, nodes=tuple(_nodes(2)),
                          edges=(DocEdge(src=1, dst=0),), directed=False)

    def test_rejects_duplicate_edges(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        with pytest.raises(GraphError):
            DocumentGraph(page=page, nodes=tuple(_nodes(2)),
                          edges=(DocEdge(src=0, dst=1), DocEdge(src=0, dst=1)),
                          directed=True)

    def test_rejects_self_edge(self):
        with pytest.raises(GraphError):
            DocEdge(src=1, dst=1)

    def test_edge_index_map(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        g = new_document_graph(page, _nodes(3), directed=True)
        index = g.edge_index_map()
        assert len(index) == 6
        for k, edge in enumerate(g.edges):
            assert index[(edge.src, edge.dst)] == k

    def test_graphs_equal(self):
        page = Page(width=100.0, height=50.0, doc_id="d")
        a = new_document_graph(page, _nodes(3), directed=True)
        b = new_document_graph(page, _nodes(3), directed=True)
        assert graphs_equal(a, b)
        c = new_document_graph(page, _nodes(4), directed=True)
        assert not graphs_equal(a, c)


class TestDocNode:
    def test_external_features_frozen(self):
        node = DocNode(id=0, box=BoundingBox(0, 0, 1, 1), text="x",
                       external_features={"visual": np.ones(3)})
        assert node.external_features["visual"].flags.writeable is False

    def test_external_features_must_be_1d(self):
        with pytest.raises(GraphError):
            DocNode(id=0, box=BoundingBox(0, 0, 1, 1), text="x",
                    external_features={"visual": np.ones((2, 2))})
