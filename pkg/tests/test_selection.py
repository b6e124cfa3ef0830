import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from eeral.graph import LabelSpace, NodeRef, new_scene_graph
from eeral.inference import EXACT, InferenceConfig, PotentialTables, entropies, infer
from eeral.selection import (EER, LC, MARGIN, RND, SA, SelectionError, SelectionScore,
                             clamped_average_entropy, clamped_sweep, expected_entropy_reduction,
                             least_confidence, negative_margin, score, score_eer,
                             score_expected_change, score_random, top_k, write_selections)
from eeral.verification import brute_force_eer, enumerate_joint

from conftest import make_graphs, pool_from, random_tables

EXACT_CFG = InferenceConfig(backend=EXACT)


def decoupled(pot):
    ts, ta = pot.scene_person.shape
    return PotentialTables(pot.scene_unary, pot.person_unary, np.zeros((ts, ta)), np.zeros((ta, ta)))


def correlated_pair(unary=(0.0, 0.0)):
    # scene and one person, both binary, forced equal
    big = 40.0
    return PotentialTables(np.array(unary, dtype=float), np.zeros((1, 2)),
                           np.array([[big, 0.0], [0.0, big]]), np.zeros((2, 2)))


# -- clamped average entropy -------------------------------------------------------

@pytest.mark.parametrize("cfg", [InferenceConfig(rounds=3), EXACT_CFG])
def test_clamped_entropy_decoupled(rng, cfg):
    pot = decoupled(random_tables(rng, 3, 3, 4))
    h = np.array([entropies(m) for m in infer(None, pot, cfg=cfg)])
    for i in range(4):
        for j in range(pot.alphabet(i)):
            want = (h.sum() - h[i]) / 4
            assert clamped_average_entropy(None, pot, {}, i, j, cfg) == pytest.approx(want, abs=1e-13)


def test_clamped_entropy_correlated_pair():
    pot = correlated_pair()
    for i in (0, 1):
        for j in (0, 1):
            assert clamped_average_entropy(None, pot, {}, i, j, EXACT_CFG) < 1e-12


def test_clamped_entropy_matches_enumeration(rng):
    pot = random_tables(rng, 3, 2, 3)
    assign, prob = enumerate_joint(pot, {2: 1})
    for i in (0, 1, 3):
        for j in range(pot.alphabet(i)):
            sel = assign[:, i] == j
            q = prob[sel] / prob[sel].sum()
            hs = []
            for n, t in enumerate([2, 3, 3, 3]):
                m = np.bincount(assign[sel][:, n], weights=q, minlength=t)
                hs.append(entropies(m))
            got = clamped_average_entropy(None, pot, {2: 1}, i, j, EXACT_CFG)
            assert got == pytest.approx(np.mean(hs), abs=1e-12)


def test_clamped_entropy_errors(rng):
    pot = random_tables(rng, 2, 2, 2)
    with pytest.raises(SelectionError):
        clamped_average_entropy(None, pot, {1: 0}, 1, 0, EXACT_CFG)
    with pytest.raises(ValueError):
        clamped_average_entropy(None, pot, {}, 0, 5, EXACT_CFG)


# -- expected reduction -----------------------------------------------------------------

@pytest.mark.parametrize("cfg", [InferenceConfig(rounds=3), EXACT_CFG])
def test_eer_decoupled_closed_form(rng, cfg):
    pot = decoupled(random_tables(rng, 4, 3, 3))
    m = infer(None, pot, cfg=cfg)
    for i in range(5):
        assert expected_entropy_reduction(None, pot, {}, i, cfg) == pytest.approx(entropies(m.node(i)) / 5,
                                                                                abs=1e-13)


def test_eer_correlated_pair_is_ln2():
    pot = correlated_pair()
    for i in (0, 1):
        assert expected_entropy_reduction(None, pot, {}, i, EXACT_CFG) == pytest.approx(np.log(2), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_eer_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    pot = random_tables(rng, n, 3, 3, scale=2.0)
    clamps = {1: int(rng.integers(3))} if n > 1 else {}
    ref = brute_force_eer(pot, clamps)
    for i, phi in ref.items():
        got = expected_entropy_reduction(None, pot, clamps, i, EXACT_CFG)
        assert got == pytest.approx(phi, abs=1e-10)
        assert got >= -1e-10


def test_sweep_matches_single_calls(rng):
    pot = random_tables(rng, 3, 3, 4)
    cfg = InferenceConfig(rounds=4)
    sw = clamped_sweep(pot, {2: 1}, [0, 1, 3], cfg)
    for k, i in enumerate([0, 1, 3]):
        for j in range(pot.alphabet(i)):
            m = infer(None, pot, {2: 1, i: j}, cfg)
            assert_allclose(sw.clamped_persons[k][j], m.persons, atol=1e-14)
            assert_allclose(sw.clamped_scene[k][j], m.scene, atol=1e-14)


# -- pool-level scoring ---------------------------------------------------------------------

@pytest.fixture
def three_graphs(rng):
    ls = LabelSpace(3, 2)
    graphs = make_graphs(rng, [2, 3, 1], d_s=2, d_a=2)
    tables = {g.graph_id: random_tables(rng, g.n_persons, 2, 3) for g in graphs}
    pool = pool_from(ls, graphs, {"g0": {1: 2}, "g1": {0: 1}})
    return graphs, (lambda g: tables[g.graph_id]), pool


def test_score_eer_is_per_node_reduction(three_graphs):
    graphs, fn, pool = three_graphs
    cfg = InferenceConfig(rounds=4)
    s = score_eer(graphs, fn, pool, cfg)
    assert set(s.scores) == set(pool.unlabeled)
    for ref, v in s.scores.items():
        g = next(g for g in graphs if g.graph_id == ref.graph_id)
        want = expected_entropy_reduction(g, fn(g), pool.clamps(g.graph_id), ref.node_index, cfg)
        assert v == pytest.approx(want, abs=1e-14)


def test_single_unlabeled_node(rng):
    ls = LabelSpace(2, 2)
    graphs = make_graphs(rng, [2])
    pool = pool_from(ls, graphs, {"g0": {0: 1, 2: 0}})
    pot = random_tables(rng, 2, 2, 2)
    assert list(score_eer(graphs, lambda g: pot, pool).scores) == [NodeRef("g0", 1)]


def test_identical_graphs_score_identically(rng):
    ls = LabelSpace(3, 2)
    x_s, x_a = rng.standard_normal(2), rng.standard_normal((3, 2))
    graphs = [new_scene_graph("a", x_s, x_a), new_scene_graph("b", x_s, x_a)]
    pot = random_tables(rng, 3, 2, 3)
    pool = pool_from(ls, graphs, {"a": {2: 1}, "b": {2: 1}})
    s = score_eer(graphs, lambda g: pot, pool).scores
    for i in (0, 1, 3):
        assert s[NodeRef("a", i)] == s[NodeRef("b", i)]


def test_nothing_to_score(rng):
    ls = LabelSpace(2, 2)
    graphs = make_graphs(rng, [1])
    pool = pool_from(ls, graphs, {"g0": {0: 0, 1: 1}})
    with pytest.raises(SelectionError):
        score_eer(graphs, lambda g: random_tables(rng, 1, 2, 2), pool)
    with pytest.raises(SelectionError):
        score_random(pool, 0)


# -- baselines ---------------------------------------------------------------------------------

def baseline_pool():
    """Two single-person graphs; the person of ``u`` is uniform, that of ``d`` ~ a 0.99 delta."""
    ls = LabelSpace(2, 2)
    graphs = [new_scene_graph("d", [0.0], [[0.0]]), new_scene_graph("u", [0.0], [[0.0]])]
    delta = np.log(np.array([0.99, 0.01]))
    tables = {"u": PotentialTables(np.zeros(2), np.zeros((1, 2)), np.zeros((2, 2)), np.zeros((2, 2))),
              "d": PotentialTables(np.zeros(2), delta[None], np.zeros((2, 2)), np.zeros((2, 2)))}
    pool = pool_from(ls, graphs, {"d": {0: 0}, "u": {0: 0}})
    return graphs, (lambda g: tables[g.graph_id]), pool


@pytest.mark.parametrize("strategy", [SA, LC, MARGIN, EER])
def test_uncertain_node_ranked_first(strategy):
    graphs, fn, pool = baseline_pool()
    sel = top_k(score(strategy, graphs, fn, pool), 1)
    assert sel.nodes == [NodeRef("u", 1)]


def test_entropy_of_uniform_four():
    ls = LabelSpace(4, 2)
    g = new_scene_graph("g", [0.0], [[0.0]])
    pot = PotentialTables(np.zeros(2), np.zeros((1, 4)), np.zeros((2, 4)), np.zeros((4, 4)))
    s = score(SA, [g], lambda _: pot, pool_from(ls, [g], {"g": {0: 1}}))
    assert s.scores[NodeRef("g", 1)] == pytest.approx(np.log(4), abs=1e-14)


@pytest.mark.parametrize("p, want", [([0.9, 0.1], 0.1), ([0.2] * 5, 0.8)])
def test_least_confidence(p, want):
    assert least_confidence(np.array(p)) == pytest.approx(want)


@pytest.mark.parametrize("p, want", [([0.5, 0.5, 0.0], 0.0), ([0.7, 0.2, 0.1], -0.5)])
def test_negative_margin(p, want):
    assert negative_margin(np.array(p)) == pytest.approx(want)


def test_baselines_match_direct_formulas(rng):
    for _ in range(20):
        p = rng.dirichlet(np.ones(5))
        assert least_confidence(p) == pytest.approx(1 - sorted(p)[-1])
        s = sorted(p)
        assert negative_margin(p) == pytest.approx(-(s[-1] - s[-2]))


def test_expected_change_zero_when_decoupled(rng):
    ls = LabelSpace(3, 3)
    graphs = make_graphs(rng, [3, 2])
    tables = {g.graph_id: decoupled(random_tables(rng, g.n_persons, 3, 3)) for g in graphs}
    pool = pool_from(ls, graphs, {})
    s = score_expected_change(graphs, lambda g: tables[g.graph_id], pool)
    assert all(v == 0.0 for v in s.scores.values())


def test_expected_change_correlated_pair():
    # base marginal [0.6, 0.4] on both nodes; fixing label 1 flips the other argmax, label 0 does not
    ls = LabelSpace(2, 2)
    g = new_scene_graph("g", [0.0], [[0.0]])
    pot = correlated_pair(unary=(np.log(0.6), np.log(0.4)))
    s = score_expected_change([g], lambda _: pot, pool_from(ls, [g], {}), EXACT_CFG)
    assert s.scores[NodeRef("g", 1)] == pytest.approx(0.4, abs=1e-12)


def test_expected_change_matches_flip_count(rng):
    ls = LabelSpace(3, 2)
    g = make_graphs(rng, [3])[0]
    pot = random_tables(rng, 3, 2, 3, scale=2.0)
    pool = pool_from(ls, [g], {"g0": {3: 0}})
    s = score_expected_change([g], lambda _: pot, pool, EXACT_CFG)
    assign, prob = enumerate_joint(pot, {3: 0})
    sizes = [2, 3, 3, 3]

    def argmaxes(a, w):
        return [int(np.argmax(np.bincount(a[:, n], weights=w, minlength=sizes[n]))) for n in range(4)]

    base = argmaxes(assign, prob)
    for i in (0, 1, 2):
        want = 0.0
        for j in range(sizes[i]):
            sel = assign[:, i] == j
            after = argmaxes(assign[sel], prob[sel])
            flips = sum(after[n] != base[n] for n in range(4) if n != i)
            want += prob[sel].sum() * flips
        assert s.scores[NodeRef("g0", i)] == pytest.approx(want, abs=1e-12)


def test_random_scores(rng):
    ls = LabelSpace(3, 2)
    graphs = make_graphs(rng, [4, 5])
    pool = pool_from(ls, graphs, {})
    a, b, c = score_random(pool, 3), score_random(pool, 3), score_random(pool, 4)
    assert a.scores == b.scores
    assert len(a) == pool.n_unlabeled()
    assert top_k(a, 10).nodes != top_k(c, 10).nodes


def test_unknown_strategy(three_graphs):
    graphs, fn, pool = three_graphs
    with pytest.raises(ValueError):
        score("bald", graphs, fn, pool)


# -- top-k ---------------------------------------------------------------------------------------

def test_top_k_example():
    s = SelectionScore(EER, {NodeRef("g1", 0): 0.5, NodeRef("g1", 1): 0.2, NodeRef("g2", 0): 0.4})
    assert top_k(s, 2).nodes == [NodeRef("g1", 0), NodeRef("g2", 0)]


def test_top_k_ties_by_id_then_index():
    s = SelectionScore(SA, {NodeRef("b", 0): 1.0, NodeRef("a", 2): 1.0, NodeRef("a", 1): 1.0})
    assert top_k(s, 2).nodes == [NodeRef("a", 1), NodeRef("a", 2)]


def test_top_k_large_pool():
    rng = np.random.default_rng(0)
    refs = [NodeRef(f"g{k // 10:05d}", k % 10) for k in range(35400)]
    s = SelectionScore(RND, dict(zip(refs, rng.random(len(refs)))))
    sel = top_k(s, 1000)
    assert len(sel) == 1000 and len(set(sel.nodes)) == 1000
    assert min(sel.scores) >= max(v for r, v in s.scores.items() if r not in set(sel.nodes))


def test_top_k_rejects_nonpositive_k():
    with pytest.raises(ValueError):
        top_k(SelectionScore(EER, {}), 0)


def test_selection_csv(tmp_path):
    s = SelectionScore(EER, {NodeRef("g1", 0): 0.5, NodeRef("g1", 2): 0.25})
    write_selections(tmp_path / "s.csv", [top_k(s, 2, iteration=1)])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines == ["iteration,graph_id,node_index,node_type,score,strategy",
                     "1,g1,0,scene,0.5,eer", "1,g1,2,action,0.25,eer"]
