"""Triple store, entity typing and the type/predicate concept graph."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class KGError(Exception):
    pass


class KGParseError(KGError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class KGValidationError(KGError):
    pass


class UnknownIdError(KGError, LookupError):
    pass


class Catalog:
    """Dense id <-> label mapping for one kind of KG item."""

    def __init__(self, kind: str, labels: Iterable[str] = ()):
        self.kind = kind
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._ids[label] = idx
        return idx

    def id(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise UnknownIdError(f"unknown {self.kind} label {label!r}") from None

    def label(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise UnknownIdError(f"unknown {self.kind} id {idx}")
        return self._labels[idx]

    def get(self, label: str):
        return self._ids.get(label)

    def __contains__(self, label) -> bool:
        return label in self._ids

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.kind == other.kind and self._labels == other._labels


@dataclass(frozen=True, order=True)
class Triple:
    subject: int
    predicate: int
    object: int


_EMPTY: frozenset = frozenset()


class KnowledgeGraph:
    """Immutable (after construction) triple store with lookup indexes.

    Entity, predicate and type ids are dense integers assigned in order of
    first appearance.
    """

    def __init__(self, entities: Catalog, predicates: Catalog, types: Catalog,
                 triples: Iterable[Triple], entity_types: dict[int, Iterable[int]]):
        self.entities = entities
        self.predicates = predicates
        self.types = types

        seen = set()
        ordered = []
        for t in triples:
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self.triples: tuple[Triple, ...] = tuple(ordered)

        self.entity_types: dict[int, frozenset[int]] = {
            e: frozenset(ts) for e, ts in entity_types.items()}
        for e in range(len(entities)):
            if not self.entity_types.get(e):
                raise KGValidationError(f"entity {entities.label(e)!r} has no type")

        sp = defaultdict(set)
        op = defaultdict(set)
        for t in self.triples:
            sp[t.subject, t.predicate].add(t.object)
            op[t.object, t.predicate].add(t.subject)
        self._sp = {k: frozenset(v) for k, v in sp.items()}
        self._op = {k: frozenset(v) for k, v in op.items()}

        by_type = defaultdict(set)
        for e, ts in self.entity_types.items():
            for tp in ts:
                by_type[tp].add(e)
        self._by_type = {tp: frozenset(v) for tp, v in by_type.items()}

    @classmethod
    def from_labels(cls, triples: Iterable[tuple[str, str, str]],
                    types: Iterable[tuple[str, str]]) -> "KnowledgeGraph":
        entities, predicates, type_cat = Catalog("entity"), Catalog("predicate"), Catalog("type")
        ids = []
        for s, p, o in triples:
            ids.append(Triple(entities.add(s), predicates.add(p), entities.add(o)))
        ent_types = defaultdict(set)
        for e, tp in types:
            ent_types[entities.add(e)].add(type_cat.add(tp))
        return cls(entities, predicates, type_cat, ids, ent_types)

    # -- index lookups ------------------------------------------------------

    def _check(self, catalog: Catalog, idx: int):
        if not isinstance(idx, int) or not 0 <= idx < len(catalog):
            raise UnknownIdError(f"unknown {catalog.kind} id {idx!r}")

    def subjects_of(self, obj: int, predicate: int) -> frozenset[int]:
        self._check(self.entities, obj)
        self._check(self.predicates, predicate)
        return self._op.get((obj, predicate), _EMPTY)

    def objects_of(self, subject: int, predicate: int) -> frozenset[int]:
        self._check(self.entities, subject)
        self._check(self.predicates, predicate)
        return self._sp.get((subject, predicate), _EMPTY)

    def types_of(self, entity: int) -> frozenset[int]:
        self._check(self.entities, entity)
        return self.entity_types[entity]

    def entities_of_type(self, tp: int) -> frozenset[int]:
        self._check(self.types, tp)
        return self._by_type.get(tp, _EMPTY)

    # -- misc ---------------------------------------------------------------

    def label_of(self, kind: str, idx: int) -> str:
        return {"entity": self.entities, "predicate": self.predicates, "type": self.types}[kind].label(idx)

    def __eq__(self, other) -> bool:
        return (isinstance(other, KnowledgeGraph)
                and self.entities == other.entities
                and self.predicates == other.predicates
                and self.types == other.types
                and self.triples == other.triples
                and self.entity_types == other.entity_types)

    def __repr__(self) -> str:
        return (f"KnowledgeGraph({len(self.triples)} triples, {len(self.entities)} entities, "
                f"{len(self.predicates)} predicates, {len(self.types)} types)")

    def rows(self) -> tuple[list[tuple[str, str, str]], list[tuple[str, str]]]:
        """Label rows in export order (triples file, types file)."""
        triples = [(self.entities.label(t.subject), self.predicates.label(t.predicate),
                    self.entities.label(t.object)) for t in self.triples]
        types = [(self.entities.label(e), self.types.label(tp))
                 for e in range(len(self.entities)) for tp in sorted(self.entity_types[e])]
        return triples, types

    def canonical(self) -> "KnowledgeGraph":
        """The graph as it would be re-read from its own TSV export."""
        return KnowledgeGraph.from_labels(*self.rows())

    def write_tsv(self, triples_path, types_path):
        triples, types = self.rows()
        with open(triples_path, "w", encoding="utf-8", newline="") as f:
            for row in triples:
                f.write("\t".join(row) + "\n")
        with open(types_path, "w", encoding="utf-8", newline="") as f:
            for row in types:
                f.write("\t".join(row) + "\n")


def _read_tsv(path, ncols):
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != ncols:
                raise KGParseError(path, lineno, f"expected {ncols} columns, got {len(cols)}")
            if any(not c for c in cols):
                raise KGParseError(path, lineno, "empty column")
            rows.append(tuple(cols))
    return rows


def load_kg(triples_path, types_path) -> KnowledgeGraph:
    """Load a KG from ``subject\\tpredicate\\tobject`` and ``entity\\ttype`` TSV files."""
    triples = _read_tsv(Path(triples_path), 3)
    types = _read_tsv(Path(types_path), 2)
    return KnowledgeGraph.from_labels(triples, types)


@dataclass
class ConceptGraph:
    """KG with entities replaced by their types.

    ``subject_edges`` holds (type, predicate) tuples and ``object_edges``
    holds (predicate, type) tuples.
    """

    n_types: int
    n_predicates: int
    subject_edges: set[tuple[int, int]] = field(default_factory=set)
    object_edges: set[tuple[int, int]] = field(default_factory=set)

    @property
    def n_nodes(self) -> int:
        return self.n_types + self.n_predicates

    def type_node(self, tp: int) -> int:
        return tp

    def predicate_node(self, p: int) -> int:
        return self.n_types + p

    def node_edges(self, bidirectional: bool = True) -> list[tuple[int, int]]:
        """Directed (src, dst) pairs over node indices: types first, then predicates."""
        pairs = set()
        for tp, p in self.subject_edges:
            pairs.add((self.type_node(tp), self.predicate_node(p)))
        for p, tp in self.object_edges:
            pairs.add((self.predicate_node(p), self.type_node(tp)))
        if bidirectional:
            pairs |= {(b, a) for a, b in pairs}
        return sorted(pairs)

    def __len__(self) -> int:
        return len(self.subject_edges) + len(self.object_edges)


def build_concept_graph(kg: KnowledgeGraph) -> ConceptGraph:
    cg = ConceptGraph(len(kg.types), len(kg.predicates))
    for t in kg.triples:
        for ts in kg.entity_types[t.subject]:
            cg.subject_edges.add((ts, t.predicate))
        for to in kg.entity_types[t.object]:
            cg.object_edges.add((t.predicate, to))
    return cg
