"""Property tests over randomly generated query trees and graphs."""

import hypothesis.strategies as st
from hypothesis import given, settings

from cqakit.graph import KnowledgeGraph
from cqakit.linearize import LPAREN, RPAREN, Vocabulary, delinearize, linearize, sequence_length
from cqakit.queries import (
    anchor,
    intersection,
    negation,
    parse_grounded,
    projection,
    query_type_of,
    serialize_grounded,
    union,
)
from cqakit.symbolic import answer, answer_dnf, to_dnf

NUM_ENTITIES = 24
NUM_RELATIONS = 4
VOCAB = Vocabulary(num_relations=NUM_RELATIONS, num_entities=NUM_ENTITIES)

entities = st.integers(0, NUM_ENTITIES - 1)
relations = st.integers(0, NUM_RELATIONS - 1)

query_trees = st.recursive(
    st.builds(anchor, entities),
    lambda sub: st.one_of(
        st.builds(projection, relations, sub),
        st.builds(negation, sub),
        st.builds(intersection, sub, sub),
        st.builds(intersection, sub, sub, sub),
        st.builds(union, sub, sub),
        st.builds(union, sub, sub, sub),
    ),
    max_leaves=8,
)


@given(query_trees)
def test_serialize_parse_round_trip(tree):
    assert parse_grounded(serialize_grounded(tree)) == tree


@given(query_trees)
def test_linearize_delinearize_round_trip(tree):
    tokens = linearize(tree, VOCAB)
    assert delinearize(tokens, VOCAB) == tree
    assert len(tokens) == sequence_length(tree)


@given(query_trees)
def test_parentheses_balanced(tree):
    depth = 0
    for t in linearize(tree, VOCAB):
        depth += (t == LPAREN) - (t == RPAREN)
        assert depth >= 0
    assert depth == 0


@given(query_trees)
def test_type_erasure_is_stable(tree):
    t = query_type_of(tree)
    assert query_type_of(t.pattern).formula_text == t.formula_text


edge_lists = st.lists(
    st.tuples(entities, relations, entities), min_size=1, max_size=60, unique=True
)


@given(edge_lists)
def test_index_edge_bijection_random_graphs(edges):
    kg = KnowledgeGraph.from_edges(edges, NUM_ENTITIES, NUM_RELATIONS)
    for h, r, t in kg.edges:
        assert t in kg.successors(h, r)
        assert h in kg.predecessors(t, r)
    rebuilt = {(h, r, t) for (h, r), tails in kg.fwd_index.items() for t in tails}
    assert rebuilt == set(map(tuple, kg.edges))


@settings(deadline=2000, max_examples=40)
@given(edge_lists, query_trees)
def test_oracle_agreement_on_random_instances(edges, tree):
    kg = KnowledgeGraph.from_edges(edges, NUM_ENTITIES, NUM_RELATIONS)
    assert answer_dnf(kg, to_dnf(tree)) == answer(kg, tree)
