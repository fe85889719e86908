"""Reverse sampling of grounded queries and dataset serialization.

Grounding works backwards from a uniformly sampled answer node: projections
sample an incoming edge and recurse on its head, intersections ground every
child at the same node, union children after the first re-sample the node,
and anchors emit the node reached. Negated subtrees are grounded at an
independently sampled node and the whole query is then verified against the
symbolic engine (reject/retry), so every emitted query is guaranteed to have
the seed node among its answers.

Queries with large answer sets are never filtered out.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .graph import GraphLayers, KnowledgeGraph
from .queries import (
    ComputationGraph,
    OperatorKind,
    QueryNode,
    QueryType,
    anchor,
    negation,
    parse_grounded,
    projection,
    serialize_grounded,
)
from .rng import make_rng
from .symbolic import answer

logger = logging.getLogger(__name__)

DATASET_FORMAT = "cqakit-dataset"
DATASET_VERSION = 1

# Full-scale per-type query counts used by the original benchmarks; kept as
# reference configuration only — desk-scale runs use far smaller counts.
REFERENCE_FULL_SCALE_COUNTS = {
    "FB15k": {"train_1p": 273_710, "train_other_types": 821_130, "valid": 8_000, "test": 8_000},
    "FB15k-237": {"train_1p": 149_689, "train_other_types": 449_067, "valid": 5_000, "test": 5_000},
    "NELL-995": {"train_1p": 107_982, "train_other_types": 323_946, "valid": 4_000, "test": 4_000},
}


class GroundingError(RuntimeError):
    """A query type could not be grounded within the retry budget."""


class DatasetFormatError(ValueError):
    """Malformed or non-canonical dataset file."""


class _DeadEnd(Exception):
    """Internal: the current grounding attempt hit a node with no usable edge."""


@dataclass(frozen=True)
class SamplerConfig:
    per_type_count: int
    seed: int
    max_retries: int = 64
    source_layer: str = "train"

    def __post_init__(self):
        if self.per_type_count < 0 or self.max_retries <= 0:
            raise ValueError("counts must be positive")
        if self.source_layer not in ("train", "test"):
            raise ValueError("source_layer must be 'train' or 'test'")

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "per_type_count": self.per_type_count,
                "seed": self.seed,
                "max_retries": self.max_retries,
                "source_layer": self.source_layer,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GroundedQueryRecord:
    type_formula: str
    query: ComputationGraph
    train_answers: frozenset[int]
    valid_answers: frozenset[int]
    test_answers: frozenset[int]

    def answers(self, layer_name: str) -> frozenset[int]:
        return {
            "train": self.train_answers,
            "valid": self.valid_answers,
            "test": self.test_answers,
        }[layer_name]


@dataclass(frozen=True)
class Provenance:
    kg_name: str
    seed: int
    config_hash: str


@dataclass
class Dataset:
    records: dict[str, list[GroundedQueryRecord]] = field(default_factory=dict)
    provenance: Provenance = Provenance("unknown", 0, "")
    num_entities: int = 0
    num_relations: int = 0

    def iter_records(self) -> Iterator[GroundedQueryRecord]:
        for group in self.records.values():
            yield from group

    def __len__(self) -> int:
        return sum(len(g) for g in self.records.values())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.provenance == other.provenance
            and self.num_entities == other.num_entities
            and self.num_relations == other.num_relations
            and self.records == other.records
        )


def _has_negation(pattern: QueryNode) -> bool:
    return any(n.kind is OperatorKind.NEGATION for n in pattern.walk())


def ground_type(
    layer: KnowledgeGraph,
    qtype: QueryType,
    rng: np.random.Generator,
    max_retries: int = 64,
) -> tuple[ComputationGraph, int]:
    """Ground one query of the given type; returns ``(query, seed_node)``.

    The seed node is guaranteed to be an answer of the query on ``layer``.
    Raises :class:`GroundingError` when the retry budget is exhausted.
    """
    if not layer.edges:
        raise GroundingError("cannot ground queries on an empty graph")
    needs_check = _has_negation(qtype.pattern)

    def ground(node: QueryNode, v: int) -> QueryNode:
        k = node.kind
        if k is OperatorKind.ANCHOR:
            return anchor(v)
        if k is OperatorKind.PROJECTION:
            incoming = layer.in_edges(v)
            if not incoming:
                raise _DeadEnd
            u, r = incoming[rng.integers(len(incoming))]
            return projection(r, ground(node.children[0], u))
        if k is OperatorKind.INTERSECTION:
            return QueryNode(k, children=tuple(ground(c, v) for c in node.children))
        if k is OperatorKind.UNION:
            grounded = [ground(node.children[0], v)]
            for child in node.children[1:]:
                for attempt in range(16):
                    w = int(rng.integers(layer.num_entities))
                    try:
                        grounded.append(ground(child, w))
                        break
                    except _DeadEnd:
                        continue
                else:
                    raise _DeadEnd
            return QueryNode(k, children=tuple(grounded))
        # negation: ground the negated subtree at an independent node; the
        # acceptance check below restores the answer guarantee.
        w = int(rng.integers(layer.num_entities))
        return negation(ground(node.children[0], w))

    for _ in range(max_retries):
        v = int(rng.integers(layer.num_entities))
        try:
            candidate = ground(qtype.pattern, v)
        except _DeadEnd:
            continue
        if needs_check and v not in answer(layer, candidate):
            continue
        return candidate, v
    raise GroundingError(
        f"failed to ground type {qtype.formula_text} after {max_retries} attempts"
    )


def sample_dataset(
    layers: GraphLayers,
    types: list[QueryType] | tuple[QueryType, ...],
    cfg: SamplerConfig,
    kg_name: str = "kg",
) -> Dataset:
    """Sample ``cfg.per_type_count`` grounded queries per type with answers.

    Queries are grounded on ``cfg.source_layer``; each record stores its
    answer sets on all three layers. Grounded queries are deduplicated
    within a type. Record ``i`` of type ``t`` draws from an independent
    random stream keyed by ``(seed, t, i)``, so output is reproducible and
    independent of scheduling.
    """
    source = layers.layer(cfg.source_layer)
    dataset = Dataset(
        provenance=Provenance(kg_name, cfg.seed, cfg.config_hash()),
        num_entities=source.num_entities,
        num_relations=source.num_relations,
    )
    for type_index, qtype in enumerate(types):
        group: list[GroundedQueryRecord] = []
        seen: set[str] = set()
        shortfall = 0
        for record_index in range(cfg.per_type_count):
            rng = make_rng(cfg.seed, type_index, record_index)
            record = None
            for _ in range(cfg.max_retries):
                try:
                    query, v = ground_type(source, qtype, rng, cfg.max_retries)
                except GroundingError:
                    break
                key = serialize_grounded(query)
                if key in seen:
                    continue
                seen.add(key)
                record = GroundedQueryRecord(
                    type_formula=qtype.formula_text,
                    query=query,
                    train_answers=frozenset(answer(layers.train, query)),
                    valid_answers=frozenset(answer(layers.valid, query)),
                    test_answers=frozenset(answer(layers.test, query)),
                )
                assert v in record.answers(cfg.source_layer)  # grounding soundness
                break
            if record is None:
                shortfall += 1
                continue
            group.append(record)
        if shortfall:
            logger.warning(
                "type %s: %d of %d records could not be grounded (skipped)",
                qtype.formula_text,
                shortfall,
                cfg.per_type_count,
            )
        dataset.records[qtype.formula_text] = group
    return dataset


# ---------------------------------------------------------------------------
# dataset file format: one JSON header line, then one canonical JSON record
# per line with sorted answer lists.


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _record_line(record: GroundedQueryRecord) -> str:
    return _canonical(
        {
            "type": record.type_formula,
            "query": serialize_grounded(record.query),
            "train_answers": sorted(record.train_answers),
            "valid_answers": sorted(record.valid_answers),
            "test_answers": sorted(record.test_answers),
        }
    )


def write_dataset(dataset: Dataset, path) -> None:
    lines = [_record_line(r) for r in dataset.iter_records()]
    body = "".join(line + "\n" for line in lines)
    header = _canonical(
        {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "kg": dataset.provenance.kg_name,
            "seed": dataset.provenance.seed,
            "config_hash": dataset.provenance.config_hash,
            "num_entities": dataset.num_entities,
            "num_relations": dataset.num_relations,
            "checksum": hashlib.sha256(body.encode()).hexdigest(),
            "num_records": len(lines),
        }
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        fh.write(body)


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise DatasetFormatError(f"{path}: empty file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:1: bad header: {exc}") from None
        if header.get("format") != DATASET_FORMAT:
            raise DatasetFormatError(f"{path}: not a {DATASET_FORMAT} file")
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(
                f"{path}: version mismatch (file {header.get('version')}, reader {DATASET_VERSION})"
            )
        body = fh.read()
    checksum = hashlib.sha256(body.encode()).hexdigest()
    if checksum != header.get("checksum"):
        raise DatasetFormatError(f"{path}: checksum failure (file edited or truncated?)")

    dataset = Dataset(
        provenance=Provenance(
            header.get("kg", "unknown"), header.get("seed", 0), header.get("config_hash", "")
        ),
        num_entities=header.get("num_entities", 0),
        num_relations=header.get("num_relations", 0),
    )
    for lineno, line in enumerate(body.splitlines(), start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed record: {exc}") from None
        try:
            answers = {}
            for key in ("train_answers", "valid_answers", "test_answers"):
                ids = obj[key]
                if any(ids[i] >= ids[i + 1] for i in range(len(ids) - 1)):
                    raise DatasetFormatError(
                        f"{path}:{lineno}: {key} not sorted strictly ascending"
                    )
                answers[key] = frozenset(ids)
            record = GroundedQueryRecord(
                type_formula=obj["type"],
                query=parse_grounded(obj["query"]),
                train_answers=answers["train_answers"],
                valid_answers=answers["valid_answers"],
                test_answers=answers["test_answers"],
            )
        except KeyError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: missing field {exc}") from None
        dataset.records.setdefault(record.type_formula, []).append(record)
    if len(dataset) != header.get("num_records"):
        raise DatasetFormatError(
            f"{path}: record count {len(dataset)} != header {header.get('num_records')}"
        )
    return dataset
