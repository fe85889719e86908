"""Exact set-semantics evaluation of grounded queries.

Two independent routes to an answer set:

* :func:`answer` — recursive evaluation over the computational graph using
  the graph's adjacency indexes (anchors are singletons, projections follow
  forward edges, intersection/union are set algebra, negation is the
  absolute complement over the entity universe);
* :func:`to_dnf` + :func:`answer_dnf` — convert to disjunctive normal form
  and brute-force variable assignments against the raw edge set.

The second route exists to cross-validate the first; it shares no code with
it beyond the graph container.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .graph import KnowledgeGraph
from .queries import (
    ComputationGraph,
    OperatorKind,
    QueryNode,
    intersection,
    negation,
    union,
)

EntitySet = set[int]


class BudgetExceededError(RuntimeError):
    """The brute-force enumerator exceeded its assignment budget."""


def answer(layer: KnowledgeGraph, query: ComputationGraph) -> EntitySet:
    """Evaluate a grounded query on one graph layer, exactly.

    Children are evaluated left-to-right; empty sets are legal results.
    """
    k = query.kind
    if k is OperatorKind.ANCHOR:
        return {query.entity}
    if k is OperatorKind.PROJECTION:
        source = answer(layer, query.children[0])
        out: EntitySet = set()
        for a in source:
            out.update(layer.successors(a, query.relation))
        return out
    if k is OperatorKind.INTERSECTION:
        result = answer(layer, query.children[0])
        for child in query.children[1:]:
            result &= answer(layer, child)
        return result
    if k is OperatorKind.UNION:
        result: EntitySet = set()
        for child in query.children:
            result |= answer(layer, child)
        return result
    # negation: absolute complement, materialized over the universe
    child = answer(layer, query.children[0])
    return set(range(layer.num_entities)) - child


# ---------------------------------------------------------------------------
# DNF representation


@dataclass(frozen=True)
class Var:
    index: int  # 0 is the target variable


@dataclass(frozen=True)
class Ent:
    entity: int


Term = Var | Ent


@dataclass(frozen=True)
class Literal:
    """An atomic constraint inside a conjunctive clause.

    With a relation id: ``relation(source, target)`` must hold (edge
    membership), negated if flagged. With ``relation=None`` it is a pin:
    ``source == target``, used where an anchor constant meets a variable.
    """

    negated: bool
    relation: int | None
    source: Term
    target: Term


@dataclass(frozen=True)
class Complement:
    """``value(term)`` must lie outside the answer set of ``subquery``.

    Carries negations whose scope is a whole sub-query (e.g. the complement
    of a multi-hop projection), which no single literal can express.
    """

    term: Term
    subquery: "DNF"


@dataclass(frozen=True)
class Clause:
    literals: tuple[Literal, ...]
    complements: tuple[Complement, ...] = ()


@dataclass(frozen=True)
class DNF:
    """Disjunction of conjunctive clauses over variables ``Var(0)..Var(num_vars-1)``."""

    clauses: tuple[Clause, ...]
    num_vars: int


_Alt = tuple[list[Literal], list[Complement], Term]  # one clause-in-progress


def _subst(term: Term, old: Term, new: Term) -> Term:
    return new if term == old else term


def _subst_alt(lits, comps, old, new):
    lits = [
        Literal(l.negated, l.relation, _subst(l.source, old, new), _subst(l.target, old, new))
        for l in lits
    ]
    comps = [Complement(_subst(c.term, old, new), c.subquery) for c in comps]
    return lits, comps


def to_dnf(query: ComputationGraph) -> DNF:
    """Convert a grounded query to DNF with the same answer semantics.

    Negation is pushed inward by De Morgan; a negated single-hop projection
    from an anchor becomes a negated literal, while the complement of any
    deeper subquery is kept as a nested :class:`Complement` (the existential
    closure of flat literals cannot express it). An anchor meeting the root
    becomes a pin of the target variable.
    """
    counter = [1]  # Var(0) is reserved for the target

    def fresh() -> Var:
        v = Var(counter[0])
        counter[0] += 1
        return v

    def unify(alt: _Alt, out: Var) -> tuple[list[Literal], list[Complement]]:
        lits, comps, t = alt
        if isinstance(t, Var):
            lits, comps = _subst_alt(lits, comps, t, out)
        else:
            lits = lits + [Literal(False, None, out, t)]
        return lits, comps

    def translate(node: QueryNode) -> list[_Alt]:
        k = node.kind
        if k is OperatorKind.ANCHOR:
            return [([], [], Ent(node.entity))]
        if k is OperatorKind.PROJECTION:
            w = fresh()
            return [
                (lits + [Literal(False, node.relation, t, w)], comps, w)
                for lits, comps, t in translate(node.children[0])
            ]
        if k is OperatorKind.INTERSECTION:
            w = fresh()
            merged: list[_Alt] = []
            for combo in product(*(translate(c) for c in node.children)):
                lits: list[Literal] = []
                comps: list[Complement] = []
                for alt in combo:
                    l, c = unify(alt, w)
                    lits += l
                    comps += c
                merged.append((lits, comps, w))
            return merged
        if k is OperatorKind.UNION:
            w = fresh()
            alts: list[_Alt] = []
            for child in node.children:
                for alt in translate(child):
                    l, c = unify(alt, w)
                    alts.append((l, c, w))
            return alts
        # negation
        child = node.children[0]
        ck = child.kind
        if ck is OperatorKind.NEGATION:
            return translate(child.children[0])
        if ck is OperatorKind.UNION:
            return translate(intersection(*(negation(c) for c in child.children)))
        if ck is OperatorKind.INTERSECTION:
            return translate(union(*(negation(c) for c in child.children)))
        w = fresh()
        if ck is OperatorKind.ANCHOR:
            return [([Literal(True, None, w, Ent(child.entity))], [], w)]
        # ck is a projection
        grandchild = child.children[0]
        if grandchild.kind is OperatorKind.ANCHOR:
            return [([Literal(True, child.relation, Ent(grandchild.entity), w)], [], w)]
        return [([], [Complement(w, to_dnf(child))], w)]

    clauses = []
    for alt in translate(query):
        lits, comps = unify(alt, Var(0))
        clauses.append(Clause(tuple(lits), tuple(comps)))
    return DNF(tuple(clauses), counter[0])


# ---------------------------------------------------------------------------
# brute-force enumeration


def _term_value(term: Term, assign: dict[int, int]) -> int | None:
    if isinstance(term, Ent):
        return term.entity
    return assign.get(term.index)


def _literal_holds(layer: KnowledgeGraph, lit: Literal, assign) -> bool:
    s = _term_value(lit.source, assign)
    t = _term_value(lit.target, assign)
    if lit.relation is None:
        holds = s == t
    else:
        holds = layer.has_edge(s, lit.relation, t)
    return holds != lit.negated


def answer_dnf(layer: KnowledgeGraph, dnf: DNF, budget: int = 10_000_000) -> EntitySet:
    """Answer set of a DNF by enumerating variable assignments.

    ``v`` is an answer iff some clause has a satisfying assignment with the
    target variable equal to ``v``. Assignments are enumerated depth-first
    with pruning as soon as a fully-bound constraint fails; ``budget`` caps
    the total number of variable bindings tried (including those of nested
    complement subqueries) and :class:`BudgetExceededError` is raised beyond
    it.
    """
    steps = [0]
    return _answer_dnf(layer, dnf, budget, steps)


def _answer_dnf(layer: KnowledgeGraph, dnf: DNF, budget: int, steps: list[int]) -> EntitySet:
    result: EntitySet = set()
    for clause in dnf.clauses:
        result |= _clause_targets(layer, clause, budget, steps)
    return result


def _clause_targets(layer, clause: Clause, budget, steps) -> EntitySet:
    # complement answer sets do not depend on the assignment: compute once
    comp_sets = [_answer_dnf(layer, c.subquery, budget, steps) for c in clause.complements]

    var_ids = {0}
    for lit in clause.literals:
        for term in (lit.source, lit.target):
            if isinstance(term, Var):
                var_ids.add(term.index)
    for comp in clause.complements:
        if isinstance(comp.term, Var):
            var_ids.add(comp.term.index)
    order = sorted(var_ids)  # target first, then existentials

    def bound_at(position: int):
        known = set(order[: position + 1])
        lits = [
            lit
            for lit in clause.literals
            if {t.index for t in (lit.source, lit.target) if isinstance(t, Var)}
            <= known
            and any(isinstance(t, Var) and t.index == order[position] for t in (lit.source, lit.target))
        ]
        comps = [
            (comp, cset)
            for comp, cset in zip(clause.complements, comp_sets)
            if isinstance(comp.term, Var) and comp.term.index == order[position]
        ]
        return lits, comps

    checks = [bound_at(i) for i in range(len(order))]
    # constraints with no variables at all are constant: reject the clause early
    constant_lits = [
        lit
        for lit in clause.literals
        if not any(isinstance(t, Var) for t in (lit.source, lit.target))
    ]
    if not all(_literal_holds(layer, lit, {}) for lit in constant_lits):
        return set()
    for comp, cset in zip(clause.complements, comp_sets):
        if isinstance(comp.term, Ent) and comp.term.entity in cset:
            return set()

    assign: dict[int, int] = {}
    n = layer.num_entities

    def ok_at(position: int) -> bool:
        lits, comps = checks[position]
        return all(_literal_holds(layer, lit, assign) for lit in lits) and all(
            assign[comp.term.index] not in cset for comp, cset in comps
        )

    def search(position: int) -> bool:
        if position == len(order):
            return True
        var = order[position]
        for value in range(n):
            steps[0] += 1
            if steps[0] > budget:
                raise BudgetExceededError(f"assignment budget {budget} exceeded")
            assign[var] = value
            if ok_at(position) and search(position + 1):
                del assign[var]
                return True
        del assign[var]
        return False

    targets: EntitySet = set()
    for v in range(n):
        steps[0] += 1
        if steps[0] > budget:
            raise BudgetExceededError(f"assignment budget {budget} exceeded")
        assign[0] = v
        if ok_at(0) and search(1):
            targets.add(v)
    return targets
