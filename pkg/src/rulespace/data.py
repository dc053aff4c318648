"""Triples, vocabularies, rules and the implication hierarchy."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class DuplicateTripleError(ParseError):
    pass


class VocabularyMismatch(ValueError):
    def __init__(self, kind: str, names: Sequence[str]):
        shown = ", ".join(sorted(names)[:20])
        more = "" if len(names) <= 20 else f" (+{len(names) - 20} more)"
        super().__init__(f"unknown {kind} names: {shown}{more}")
        self.kind = kind
        self.names = sorted(names)


class RuleError(ValueError):
    pass


class CycleError(RuleError):
    def __init__(self, cycle: Sequence[str]):
        super().__init__("implication cycle: " + " => ".join(cycle))
        self.cycle = list(cycle)


class HierarchyError(RuleError):
    pass


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class Vocabulary:
    """Bijection between names and dense integer ids, in first-appearance order."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def get(self, name: str):
        return self._ids.get(name)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} names)"


def load_triples(path, entities: Vocabulary, relations: Vocabulary, frozen: bool = False) -> list[Triple]:
    """Read a ``head<TAB>relation<TAB>tail`` file.

    New names extend the vocabularies in order of first appearance unless
    ``frozen`` is set, in which case unknown names raise
    :class:`VocabularyMismatch` listing all of them.
    """
    path = Path(path)
    triples: list[Triple] = []
    seen: dict[Triple, int] = {}
    unknown_ents: set[str] = set()
    unknown_rels: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            h, r, t = fields
            if frozen:
                unknown_ents.update(n for n in (h, t) if n not in entities)
                if r not in relations:
                    unknown_rels.add(r)
                if unknown_ents or unknown_rels:
                    continue
                triple = Triple(entities.id(h), relations.id(r), entities.id(t))
            else:
                hid = entities.add(h)
                rid = relations.add(r)
                triple = Triple(hid, rid, entities.add(t))
            if triple in seen:
                raise DuplicateTripleError(path, lineno, f"duplicate triple (first seen on line {seen[triple]})")
            seen[triple] = lineno
            triples.append(triple)
    if unknown_ents:
        raise VocabularyMismatch("entity", sorted(unknown_ents))
    if unknown_rels:
        raise VocabularyMismatch("relation", sorted(unknown_rels))
    return triples


@dataclass
class Dataset:
    entities: Vocabulary
    relations: Vocabulary
    train: list[Triple] = field(default_factory=list)
    valid: list[Triple] = field(default_factory=list)
    test: list[Triple] = field(default_factory=list)

    def __post_init__(self):
        self.known = frozenset(self.train) | frozenset(self.valid) | frozenset(self.test)
        for t in self.known:
            if not (0 <= t.head < len(self.entities) and 0 <= t.tail < len(self.entities)):
                raise ValueError(f"entity id out of range in {t}")
            if not 0 <= t.rel < len(self.relations):
                raise ValueError(f"relation id out of range in {t}")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @classmethod
    def from_files(cls, train, valid=None, test=None, entities=None, relations=None) -> "Dataset":
        """Load the splits in order train, valid, test into shared vocabularies.

        Passing existing vocabularies freezes them (names must already exist).
        """
        frozen = entities is not None
        entities = entities if entities is not None else Vocabulary()
        relations = relations if relations is not None else Vocabulary()
        splits = []
        for p in (train, valid, test):
            splits.append(load_triples(p, entities, relations, frozen=frozen) if p is not None else [])
        return cls(entities, relations, *splits)

    def named(self, triple: Triple) -> tuple[str, str, str]:
        return (self.entities.name(triple.head), self.relations.name(triple.rel), self.entities.name(triple.tail))

    def filter_index(self) -> "FilterIndex":
        idx = self.__dict__.get("_filter_index")
        if idx is None:
            idx = self.__dict__["_filter_index"] = FilterIndex(self.known)
        return idx


class FilterIndex:
    """Known heads per (relation, tail) and known tails per (head, relation)."""

    def __init__(self, known: Iterable[Triple]):
        heads: dict[tuple[int, int], list[int]] = {}
        tails: dict[tuple[int, int], list[int]] = {}
        for h, r, t in known:
            heads.setdefault((r, t), []).append(h)
            tails.setdefault((h, r), []).append(t)
        self._heads = {k: sorted(v) for k, v in heads.items()}
        self._tails = {k: sorted(v) for k, v in tails.items()}

    def heads(self, rel: int, tail: int) -> list[int]:
        return self._heads.get((rel, tail), [])

    def tails(self, head: int, rel: int) -> list[int]:
        return self._tails.get((head, rel), [])


class RuleKind(str, Enum):
    IMPLICATION = "implication"
    INVERSE = "inverse"
    TRANSITIVE = "transitive"


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    premises: tuple[int, ...]
    conclusion: int

    @property
    def usable(self) -> bool:
        return self.kind is not RuleKind.TRANSITIVE

    @property
    def premise(self) -> int:
        return self.premises[0]

    def to_text(self, relations: Vocabulary) -> str:
        names = [relations.name(p) for p in self.premises]
        concl = relations.name(self.conclusion)
        if self.kind is RuleKind.IMPLICATION:
            return f"{names[0]} => {concl}"
        if self.kind is RuleKind.INVERSE:
            return f"{names[0]}(x,y) => {concl}(y,x)"
        return " & ".join(names) + f" => {concl}"


_ATOM = re.compile(r"^\s*([^\s()&]+)\s*(?:\(\s*(\w+)\s*,\s*(\w+)\s*\))?\s*$")


def _parse_atom(text: str, path, lineno: int):
    m = _ATOM.match(text)
    if not m:
        raise ParseError(path, lineno, f"cannot parse rule atom {text.strip()!r}")
    name, a, b = m.groups()
    return name, (a, b) if a is not None else None


def parse_rule(line: str, relations: Vocabulary, path="<rules>", lineno: int = 1) -> Rule:
    if line.count("=>") != 1:
        raise ParseError(path, lineno, "a rule needs exactly one '=>'")
    lhs, rhs = line.split("=>")
    premises = [_parse_atom(p, path, lineno) for p in lhs.split("&")]
    conclusion = _parse_atom(rhs, path, lineno)
    for name, _ in premises + [conclusion]:
        if name not in relations:
            raise RuleError(f"{path}:{lineno}: unknown relation {name!r}")
    ids = tuple(relations.id(name) for name, _ in premises)
    concl_id = relations.id(conclusion[0])
    if len(premises) > 1:
        return Rule(RuleKind.TRANSITIVE, ids, concl_id)
    pargs, cargs = premises[0][1], conclusion[1]
    if pargs is None or cargs is None or pargs == cargs:
        return Rule(RuleKind.IMPLICATION, ids, concl_id)
    if pargs == cargs[::-1] and pargs[0] != pargs[1]:
        return Rule(RuleKind.INVERSE, ids, concl_id)
    raise ParseError(path, lineno, f"argument pattern {pargs} => {cargs} is neither straight nor inverted")


def load_rules(path, relations: Vocabulary) -> list[Rule]:
    """Parse a rule file.  Straight implication cycles are rejected."""
    path = Path(path)
    rules: list[Rule] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            rule = parse_rule(text, relations, path, lineno)
            if not rule.usable:
                logger.info("%s:%d: transitive rule parsed but not used: %s", path, lineno, text)
            if rule not in rules:
                rules.append(rule)
    _check_acyclic(rules, relations)
    return rules


def _straight_edges(rules: Iterable[Rule]) -> dict[int, list[int]]:
    edges: dict[int, list[int]] = {}
    for rule in rules:
        if rule.kind is RuleKind.IMPLICATION:
            targets = edges.setdefault(rule.premise, [])
            if rule.conclusion not in targets:
                targets.append(rule.conclusion)
    return edges


def _check_acyclic(rules: Iterable[Rule], relations: Vocabulary | None = None) -> None:
    edges = _straight_edges(rules)
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[int] = []

    def name(i):
        return relations.name(i) if relations is not None else str(i)

    def visit(node):
        state[node] = 1
        stack.append(node)
        for nxt in edges.get(node, ()):
            if state.get(nxt) == 1:
                cycle = stack[stack.index(nxt):] + [nxt]
                raise CycleError([name(i) for i in cycle])
            if nxt not in state:
                visit(nxt)
        stack.pop()
        state[node] = 2

    for node in sorted(edges):
        if node not in state:
            visit(node)


@dataclass(frozen=True)
class ImplicationHierarchy:
    """Implication order over relations.

    Edges point from the specific relation to the general one it implies.
    ``closure[r]`` holds every relation ``r`` implies (``r`` included) and
    ``implicants[r]`` every relation that implies ``r`` (``r`` included).
    ``order`` lists relations from most specific to most general.
    """

    n_relations: int
    rules: tuple[Rule, ...]
    generalizations: tuple[frozenset, ...]
    specializations: tuple[frozenset, ...]
    closure: tuple[frozenset, ...]
    implicants: tuple[frozenset, ...]
    order: tuple[int, ...]

    def is_head(self, r: int) -> bool:
        return not self.specializations[r]

    @property
    def heads(self) -> list[int]:
        return [r for r in range(self.n_relations) if self.is_head(r)]

    def parent(self, r: int):
        """The unique direct generalization of ``r``, or None."""
        gens = self.generalizations[r]
        return next(iter(gens)) if gens else None

    def implies(self, a: int, b: int) -> bool:
        return b in self.closure[a]

    def edges(self) -> list[tuple[int, int]]:
        """Closure edges ``(specific, general)`` with specific != general."""
        return [(s, g) for s in range(self.n_relations) for g in sorted(self.closure[s]) if g != s]

    def complement_rank(self, r: int) -> int:
        return len(self.implicants[r])

    @property
    def max_rank(self) -> int:
        return max((self.complement_rank(r) for r in range(self.n_relations)), default=0)

    @property
    def inverse_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.kind is RuleKind.INVERSE]

    @property
    def ruled_relations(self) -> frozenset:
        """Relations that appear in any rule."""
        out = set()
        for rule in self.rules:
            out.update(rule.premises)
            out.add(rule.conclusion)
        return frozenset(out)


def build_hierarchy(rules: Sequence[Rule], n_relations: int, relations: Vocabulary | None = None) -> ImplicationHierarchy:
    """Compile straight implication rules into a reduced implication forest."""
    for rule in rules:
        for r in rule.premises + (rule.conclusion,):
            if not 0 <= r < n_relations:
                raise RuleError(f"rule mentions relation id {r} outside vocabulary of size {n_relations}")
    _check_acyclic(rules, relations)
    edges = _straight_edges(rules)

    reach: list[set] = [set() for _ in range(n_relations)]

    def collect(node, acc):
        for nxt in edges.get(node, ()):
            if nxt not in acc:
                acc.add(nxt)
                collect(nxt, acc)

    for r in range(n_relations):
        collect(r, reach[r])
    closure = [frozenset(reach[r] | {r}) for r in range(n_relations)]

    direct: list[set] = []
    for a in range(n_relations):
        strict = reach[a]
        direct.append({b for b in strict if not any(b in reach[c] for c in strict if c != b)})

    def name(i):
        return relations.name(i) if relations is not None else str(i)

    for a in range(n_relations):
        if len(direct[a]) > 1:
            targets = ", ".join(name(b) for b in sorted(direct[a]))
            raise HierarchyError(
                f"relation {name(a)} implies incomparable relations ({targets}); "
                "only chains of generalizations are supported"
            )
    specs: list[set] = [set() for _ in range(n_relations)]
    for a in range(n_relations):
        for b in direct[a]:
            specs[b].add(a)
    implicants = [frozenset(s for s in range(n_relations) if r in closure[s]) for r in range(n_relations)]

    # Kahn's algorithm, specific first; ties resolved by id for determinism
    indegree = [len(specs[r]) for r in range(n_relations)]
    ready = sorted(r for r in range(n_relations) if indegree[r] == 0)
    order = []
    while ready:
        r = ready.pop(0)
        order.append(r)
        for g in sorted(direct[r]):
            indegree[g] -= 1
            if indegree[g] == 0:
                ready.append(g)
                ready.sort()
    return ImplicationHierarchy(
        n_relations=n_relations,
        rules=tuple(rules),
        generalizations=tuple(frozenset(d) for d in direct),
        specializations=tuple(frozenset(s) for s in specs),
        closure=tuple(closure),
        implicants=tuple(implicants),
        order=tuple(order),
    )


def straight_expand(triples: Iterable[Triple], hierarchy: ImplicationHierarchy) -> set[Triple]:
    out = set()
    for h, r, t in triples:
        for g in hierarchy.closure[r]:
            out.add(Triple(h, g, t))
    return out


def entailed_triples(triples: Iterable[Triple], hierarchy: ImplicationHierarchy) -> set[Triple]:
    """Fixpoint of ``triples`` under straight and inverse implication rules."""
    inverse: dict[int, list[int]] = {}
    for rule in hierarchy.inverse_rules:
        inverse.setdefault(rule.premise, []).append(rule.conclusion)
    result = straight_expand(triples, hierarchy)
    frontier = list(result)
    while frontier:
        fresh = []
        for h, r, t in frontier:
            for b in inverse.get(r, ()):
                for g in hierarchy.closure[b]:
                    cand = Triple(t, g, h)
                    if cand not in result:
                        result.add(cand)
                        fresh.append(cand)
        frontier = fresh
    return result


def grounded_positives(triples: Sequence[Triple], hierarchy: ImplicationHierarchy) -> list[Triple]:
    """Triples entailed through inverse-argument rules that are missing from ``triples``.

    Straight implications are never materialized: the embedding trains them
    implicitly.  Output order follows the input order, without duplicates.
    """
    if not hierarchy.inverse_rules:
        return []
    inverse: dict[int, list[int]] = {}
    for rule in hierarchy.inverse_rules:
        inverse.setdefault(rule.premise, []).append(rule.conclusion)
    covered = straight_expand(triples, hierarchy)
    out: list[Triple] = []
    frontier = list(triples)
    while frontier:
        fresh = []
        for h, r, t in frontier:
            for a in sorted(hierarchy.closure[r]):
                for b in inverse.get(a, ()):
                    cand = Triple(t, b, h)
                    if cand not in covered:
                        covered.update(Triple(t, g, h) for g in hierarchy.closure[b])
                        out.append(cand)
                        fresh.append(cand)
        frontier = fresh
    return out
