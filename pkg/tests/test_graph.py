import numpy as np
import pytest
from numpy.testing import assert_array_equal

from eeral.graph import (UNLABELED, AnnotationError, AnnotationPool, GraphError, LabelSpace, NodeRef,
                         commit_labels, format_records, make_truth, new_scene_graph, parse_records,
                         read_dataset, write_dataset)

from conftest import make_graphs, pool_from


@pytest.mark.parametrize("n, nodes, edges", [(3, 4, 6), (1, 2, 1), (12, 13, 78)])
def test_graph_size(n, nodes, edges):
    g = new_scene_graph("g", np.zeros(2), np.zeros((n, 2)))
    assert g.n_nodes == nodes
    assert g.n_edges == edges
    assert len(list(g.edges())) == edges


def test_single_person_has_no_person_pairs():
    g = new_scene_graph("g2", [1.0], [[0.5, 0.5]])
    assert list(g.edges()) == [(0, 1)]


def test_node_refs_and_types():
    g = new_scene_graph("g", np.zeros(2), np.zeros((2, 2)))
    refs = list(g.nodes())
    assert refs[0] == NodeRef("g", 0) and refs[0].node_type == "scene"
    assert [r.node_type for r in refs[1:]] == ["action", "action"]


def test_graph_errors():
    with pytest.raises(GraphError):
        new_scene_graph("g", np.zeros(2), [])
    with pytest.raises(GraphError):
        new_scene_graph("g", np.zeros(2), [np.zeros(2), np.zeros(3)])


def test_features_are_read_only():
    g = new_scene_graph("g", np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        g.person_features[0, 0] = 1.0


def test_label_space_validation():
    with pytest.raises(ValueError):
        LabelSpace(1, 3)
    with pytest.raises(ValueError):
        LabelSpace(3, 2, action_names=("a", "b"))


def test_make_truth_range(small_space):
    g = new_scene_graph("g", np.zeros(2), np.zeros((2, 2)))
    make_truth(g, [1, 2, 0], small_space)
    with pytest.raises(GraphError):
        make_truth(g, [2, 0, 0], small_space)  # scene alphabet is 2
    with pytest.raises(GraphError):
        make_truth(g, [0, 0], small_space)


class TestPool:
    def setup_method(self):
        self.ls = LabelSpace(3, 2)
        rng = np.random.default_rng(0)
        self.graphs = make_graphs(rng, [4, 4])  # 10 nodes
        self.pool = pool_from(self.ls, self.graphs, {"g0": {0: 1, 1: 2, 2: 0, 3: 1}})

    def test_counts(self):
        assert (self.pool.n_labeled(), self.pool.n_unlabeled()) == (4, 6)
        assert self.pool.labeled_split() == (1, 3)

    def test_commit_two(self):
        new = commit_labels(self.pool, [(NodeRef("g1", 0), 1), (NodeRef("g1", 3), 2)])
        assert (new.n_labeled(), new.n_unlabeled()) == (6, 4)
        assert self.pool.n_labeled() == 4  # original untouched
        assert new.label_of(NodeRef("g1", 3)) == 2

    def test_empty_commit_is_identity(self):
        assert commit_labels(self.pool, []) == self.pool

    def test_relabel_rejected(self):
        before = {g: self.pool.states(g).copy() for g in self.pool.graph_ids()}
        with pytest.raises(AnnotationError):
            commit_labels(self.pool, [(NodeRef("g1", 0), 0), (NodeRef("g0", 1), 0)])
        for g, s in before.items():
            assert_array_equal(self.pool.states(g), s)

    @pytest.mark.parametrize("ref, label", [(NodeRef("g1", 0), 2), (NodeRef("g1", 1), 3),
                                            (NodeRef("g1", 9), 0), (NodeRef("zz", 0), 0)])
    def test_bad_answers(self, ref, label):
        with pytest.raises(AnnotationError):
            commit_labels(self.pool, [(ref, label)])

    def test_duplicate_answer_in_one_batch(self):
        with pytest.raises(AnnotationError):
            commit_labels(self.pool, [(NodeRef("g1", 1), 0), (NodeRef("g1", 1), 1)])

    def test_listing_is_sorted(self):
        u = self.pool.unlabeled
        assert u == sorted(u)
        assert self.pool.unlabeled_in("g0") == [4]
        assert self.pool.clamps("g0") == {0: 1, 1: 2, 2: 0, 3: 1}

    def test_constructor_range_check(self):
        with pytest.raises(AnnotationError):
            AnnotationPool(self.ls, {"g": np.array([5, UNLABELED])})


def test_records_round_trip(tmp_path, small_space):
    rng = np.random.default_rng(3)
    graphs = make_graphs(rng, [1, 3, 2])
    truths = [make_truth(g, [1] + [2] * g.n_persons, small_space) for g in graphs]
    pool = pool_from(small_space, graphs, {"g1": {0: 1, 2: 2}})
    write_dataset(tmp_path / "d.txt", graphs, truths, pool)
    g2, t2, p2 = read_dataset(tmp_path / "d.txt", small_space)
    for a, b in zip(graphs, g2):
        assert a.graph_id == b.graph_id
        assert_array_equal(a.scene_feature, b.scene_feature)  # repr floats are exact
        assert_array_equal(a.person_features, b.person_features)
    for a, b in zip(truths, t2):
        assert_array_equal(a.labels, b.labels)
    assert p2 == pool
    assert format_records(g2, t2, p2) == format_records(graphs, truths, pool)


@pytest.mark.parametrize("text", [
    "graph g 1 1\n",
    "graph g 1 1 1\n0.0\n0.0\ntruth 0 0\n",
    "graph g 1 2 1\n0.0\n0.0\ntruth 0 0\nlabels ..\n",
    "graph g 1 1 1\n0.0\n0.0\ntruth 0\nlabels ..\n",
    "graph g 1 1 1\n0.0\n0.0\ntruth 0 0\nlabels .?\n",
])
def test_parse_errors(text):
    with pytest.raises(GraphError):
        parse_records(text)
