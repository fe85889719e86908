"""Knowledge-graph store: triple loading, adjacency indexes, graph layering.

Graphs are immutable after construction and safe to share across readers.
Entities and relations are dense integer ids; human-readable labels live in
optional dictionary sidecar files (``id<TAB>label`` per line).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

from .rng import make_rng

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for malformed triple or dictionary files."""


class EdgeTriple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entity/relation universe plus an indexed edge set.

    ``fwd_index[(head, relation)]`` lists tails sorted ascending;
    ``bwd_index[(tail, relation)]`` lists heads. Lookups on absent keys
    return the empty tuple. ``in_index[tail]`` lists all ``(head, relation)``
    pairs pointing at ``tail`` (used by the reverse sampler).
    """

    num_entities: int
    num_relations: int
    edges: frozenset[EdgeTriple]
    fwd_index: dict[tuple[int, int], tuple[int, ...]] = field(repr=False, compare=False)
    bwd_index: dict[tuple[int, int], tuple[int, ...]] = field(repr=False, compare=False)
    in_index: dict[int, tuple[tuple[int, int], ...]] = field(repr=False, compare=False)

    @staticmethod
    def from_edges(
        edges, num_entities: int | None = None, num_relations: int | None = None
    ) -> "KnowledgeGraph":
        edge_set = frozenset(EdgeTriple(*e) for e in edges)
        max_ent = max((max(e.head, e.tail) for e in edge_set), default=-1)
        max_rel = max((e.relation for e in edge_set), default=-1)
        if num_entities is None:
            num_entities = max_ent + 1
        if num_relations is None:
            num_relations = max_rel + 1
        if max_ent >= num_entities or max_rel >= num_relations:
            raise GraphFormatError(
                f"edge ids exceed declared universe ({max_ent} >= {num_entities} "
                f"or {max_rel} >= {num_relations})"
            )
        fwd: dict[tuple[int, int], list[int]] = {}
        bwd: dict[tuple[int, int], list[int]] = {}
        inc: dict[int, list[tuple[int, int]]] = {}
        for h, r, t in edge_set:
            fwd.setdefault((h, r), []).append(t)
            bwd.setdefault((t, r), []).append(h)
            inc.setdefault(t, []).append((h, r))
        return KnowledgeGraph(
            num_entities=num_entities,
            num_relations=num_relations,
            edges=edge_set,
            fwd_index={k: tuple(sorted(v)) for k, v in fwd.items()},
            bwd_index={k: tuple(sorted(v)) for k, v in bwd.items()},
            in_index={k: tuple(sorted(v)) for k, v in inc.items()},
        )

    def successors(self, head: int, relation: int) -> tuple[int, ...]:
        """Entities reachable from ``head`` via ``relation`` (sorted)."""
        return self.fwd_index.get((head, relation), ())

    def predecessors(self, tail: int, relation: int) -> tuple[int, ...]:
        return self.bwd_index.get((tail, relation), ())

    def in_edges(self, tail: int) -> tuple[tuple[int, int], ...]:
        """All ``(head, relation)`` pairs with an edge into ``tail``."""
        return self.in_index.get(tail, ())

    def has_edge(self, head: int, relation: int, tail: int) -> bool:
        return EdgeTriple(head, relation, tail) in self.edges


@dataclass(frozen=True)
class GraphLayers:
    """Cumulative train/valid/test graphs over one shared id space."""

    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph

    def __post_init__(self):
        if not (self.train.edges <= self.valid.edges <= self.test.edges):
            raise ValueError("graph layers must be cumulative (train ⊆ valid ⊆ test)")
        if not (
            self.train.num_entities == self.valid.num_entities == self.test.num_entities
            and self.train.num_relations == self.valid.num_relations == self.test.num_relations
        ):
            raise ValueError("graph layers must share entity/relation universes")

    def layer(self, name: str) -> KnowledgeGraph:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown layer {name!r} (expected train/valid/test)") from None


def load_dictionary(path) -> dict[str, int]:
    """Read an ``id<TAB>label`` file into a label → id map."""
    mapping: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'id<TAB>label'")
            try:
                idx = int(parts[0])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer id {parts[0]!r}") from None
            mapping[parts[1]] = idx
    return mapping


def _resolve(token: str, mapping: dict[str, int] | None, size: int | None, what: str, where: str) -> int:
    if mapping is not None and token in mapping:
        return mapping[token]
    try:
        idx = int(token)
    except ValueError:
        raise GraphFormatError(f"{where}: unknown {what} {token!r}") from None
    if size is not None and not (0 <= idx < size):
        raise GraphFormatError(f"{where}: {what} id {idx} out of dictionary range [0, {size})")
    return idx


def read_triples(
    path,
    entity_dict: dict[str, int] | None = None,
    relation_dict: dict[str, int] | None = None,
) -> list[EdgeTriple]:
    """Parse a ``head<TAB>relation<TAB>tail`` file into edge triples."""
    ent_size = len(entity_dict) if entity_dict is not None else None
    rel_size = len(relation_dict) if relation_dict is not None else None
    triples: list[EdgeTriple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            where = f"{path}:{lineno}"
            if len(parts) != 3:
                raise GraphFormatError(f"{where}: expected 3 tab-separated fields, got {len(parts)}")
            if parts[1] == "":
                raise GraphFormatError(f"{where}: empty relation field")
            h = _resolve(parts[0], entity_dict, ent_size, "entity", where)
            r = _resolve(parts[1], relation_dict, rel_size, "relation", where)
            t = _resolve(parts[2], entity_dict, ent_size, "entity", where)
            triples.append(EdgeTriple(h, r, t))
    return triples


def load_triples(
    path,
    entity_dict: dict[str, int] | None = None,
    relation_dict: dict[str, int] | None = None,
) -> KnowledgeGraph:
    """Load one triple file into an indexed graph.

    Entity/relation counts come from the dictionaries when provided,
    otherwise from the ids seen in the file (which must be dense integers).
    Duplicate triples are deduplicated; the semantics are set-based.
    """
    triples = read_triples(path, entity_dict, relation_dict)
    num_entities = len(entity_dict) if entity_dict is not None else None
    num_relations = len(relation_dict) if relation_dict is not None else None
    return KnowledgeGraph.from_edges(triples, num_entities, num_relations)


def layer_graphs(
    train_file,
    valid_file,
    test_file,
    entity_dict: dict[str, int] | None = None,
    relation_dict: dict[str, int] | None = None,
) -> GraphLayers:
    """Build cumulative layers from a standard three-file split.

    The train layer holds training edges, the valid layer training+validation
    edges, and the test layer all edges. Edges in valid/test files that
    duplicate an earlier layer are dropped with a warning.
    """
    train_t = read_triples(train_file, entity_dict, relation_dict)
    valid_t = read_triples(valid_file, entity_dict, relation_dict)
    test_t = read_triples(test_file, entity_dict, relation_dict)

    train_set = set(train_t)
    dup_valid = sum(1 for e in valid_t if e in train_set)
    valid_set = train_set | set(valid_t)
    dup_test = sum(1 for e in test_t if e in valid_set)
    test_set = valid_set | set(test_t)
    if dup_valid or dup_test:
        logger.warning(
            "deduplicated %d valid and %d test edges already present in earlier layers",
            dup_valid,
            dup_test,
        )

    if entity_dict is not None:
        num_entities = len(entity_dict)
    else:
        num_entities = max((max(e.head, e.tail) for e in test_set), default=-1) + 1
    if relation_dict is not None:
        num_relations = len(relation_dict)
    else:
        num_relations = max((e.relation for e in test_set), default=-1) + 1

    return GraphLayers(
        train=KnowledgeGraph.from_edges(train_set, num_entities, num_relations),
        valid=KnowledgeGraph.from_edges(valid_set, num_entities, num_relations),
        test=KnowledgeGraph.from_edges(test_set, num_entities, num_relations),
    )


def split_edges(
    kg: KnowledgeGraph, ratios: tuple[int, int, int] = (8, 1, 1), seed: int = 0
) -> GraphLayers:
    """Randomly partition a graph's edges into cumulative train/valid/test layers.

    The shuffle uses the package PRNG (PCG64 seeded via SeedSequence), so the
    split is reproducible across platforms. Intended for synthetic graphs;
    datasets with published splits should use :func:`layer_graphs`.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("split ratios must be positive")
    edges = sorted(kg.edges)
    total = len(edges)
    if total < len(ratios):
        raise ValueError(f"cannot split {total} edges into {len(ratios)} parts")
    order = make_rng(seed).permutation(total)
    shuffled = [edges[i] for i in order]
    s = sum(ratios)
    n1 = total * ratios[0] // s
    n2 = total * (ratios[0] + ratios[1]) // s
    train_set = set(shuffled[:n1])
    valid_set = train_set | set(shuffled[n1:n2])
    test_set = valid_set | set(shuffled[n2:])
    return GraphLayers(
        train=KnowledgeGraph.from_edges(train_set, kg.num_entities, kg.num_relations),
        valid=KnowledgeGraph.from_edges(valid_set, kg.num_entities, kg.num_relations),
        test=KnowledgeGraph.from_edges(test_set, kg.num_entities, kg.num_relations),
    )


def synthetic_graph(
    num_entities: int, num_relations: int, num_edges: int, seed: int = 0
) -> KnowledgeGraph:
    """Sample a random multi-relational graph (used for desk-scale runs and tests)."""
    rng = make_rng(seed)
    edges: set[EdgeTriple] = set()
    budget = num_edges * 50
    while len(edges) < num_edges and budget > 0:
        h = int(rng.integers(num_entities))
        t = int(rng.integers(num_entities))
        r = int(rng.integers(num_relations))
        if h != t:
            edges.add(EdgeTriple(h, r, t))
        budget -= 1
    return KnowledgeGraph.from_edges(edges, num_entities, num_relations)
