"""History semantic graph: entities and types from earlier turns, linked by predicates.

Triples enter the graph from the ``find`` / ``find_reverse`` sub-terms of each
turn's logical form.  When such a sub-term is the filtered argument of
``filter_type`` / ``filter_multi_types``, only the entities surviving the
filter are added.  Every entity node also gets ``IsA`` edges to all of its KG
types.  Nodes and edges carry the last turn that touched them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .kg import KnowledgeGraph
from .logical_form import Call, LogicalForm, evaluate_raw, typecheck

ISA = -1  # reserved predicate id, outside the KG catalog

ENTITY = "entity"
TYPE = "type"


@dataclass(frozen=True)
class RetentionPolicy:
    max_recent_triples: int | None = None  # None = unbounded

    def __post_init__(self):
        if self.max_recent_triples is not None and self.max_recent_triples < 0:
            raise ValueError("max_recent_triples must be >= 0")


@dataclass
class HsgNode:
    kind: str
    ref: int
    last_mention_turn: int
    order: int

    @property
    def key(self):
        return (self.kind, self.ref)


@dataclass
class _EdgeState:
    turn: int
    order: int   # first insertion
    touched: int  # last refresh, breaks ties between equal turns


@dataclass(frozen=True)
class HsgSnapshot:
    """Immutable view handed to the encoder.

    ``nodes`` holds (kind, ref, last_mention_turn) in first-insertion order;
    ``edges`` holds (head index, predicate id, tail index, turn) with indices
    into ``nodes``.
    """

    nodes: tuple[tuple[str, int, int], ...]
    edges: tuple[tuple[int, int, int, int], ...]
    current_turn: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def entity_nodes(self) -> list[int]:
        return [i for i, (k, _, _) in enumerate(self.nodes) if k == ENTITY]


EMPTY_SNAPSHOT = HsgSnapshot((), (), 1)


class HistorySemanticGraph:
    def __init__(self, retention: RetentionPolicy | int | None = None):
        if not isinstance(retention, RetentionPolicy):
            retention = RetentionPolicy(retention)
        self.retention = retention
        self.nodes: dict[tuple[str, int], HsgNode] = {}
        self.edges: dict[tuple, _EdgeState] = {}  # (head key, predicate, tail key)
        self._clock = 0

    # -- mutation -----------------------------------------------------------

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def _touch_node(self, kind, ref, turn):
        key = (kind, ref)
        node = self.nodes.get(key)
        if node is None:
            self.nodes[key] = HsgNode(kind, ref, turn, self._tick())
        else:
            node.last_mention_turn = max(node.last_mention_turn, turn)

    def _touch_edge(self, head, predicate, tail, turn):
        key = (head, predicate, tail)
        state = self.edges.get(key)
        tick = self._tick()
        if state is None:
            self.edges[key] = _EdgeState(turn, tick, tick)
        else:
            state.turn = max(state.turn, turn)
            state.touched = tick

    def _touch_entity(self, e, kg, turn):
        self._touch_node(ENTITY, e, turn)
        for tp in sorted(kg.types_of(e)):
            self._touch_node(TYPE, tp, turn)
            self._touch_edge((ENTITY, e), ISA, (TYPE, tp), turn)

    def add_triple(self, head: int, predicate: int, tail: int, kg: KnowledgeGraph, turn: int):
        self._touch_entity(head, kg, turn)
        self._touch_entity(tail, kg, turn)
        self._touch_edge((ENTITY, head), predicate, (ENTITY, tail), turn)

    def update_from_form(self, form: LogicalForm, kg: KnowledgeGraph, turn: int,
                         approx_tolerance: int = 1) -> "HistorySemanticGraph":
        if turn < 1:
            raise ValueError("turns are numbered from 1")
        typecheck(form)
        triples = []

        def visit(node, parent):
            if not isinstance(node, Call):
                return
            if node.action in ("find", "find_reverse"):
                e, p = node.args[0].value, node.args[1].value
                result = evaluate_raw(node, kg, approx_tolerance)
                if (parent is not None and parent.action in ("filter_type", "filter_multi_types")
                        and parent.args[0] is node):
                    result = result & evaluate_raw(parent, kg, approx_tolerance)
                for x in sorted(result):
                    triples.append((x, p, e) if node.action == "find" else (e, p, x))
            for a in node.args:
                visit(a, node)

        visit(form, None)
        for h, p, t in triples:
            self.add_triple(h, p, t, kg, turn)
        return self

    def prune(self) -> "HistorySemanticGraph":
        limit = self.retention.max_recent_triples
        if limit is None:
            return self
        facts = [(k, s) for k, s in self.edges.items() if k[1] != ISA]
        facts.sort(key=lambda ks: (ks[1].turn, ks[1].touched), reverse=True)
        keep = {k for k, _ in facts[:limit]}
        node_keep = set()
        for h, _, t in keep:
            node_keep.add(h)
            node_keep.add(t)
        for (h, p, t) in self.edges:
            if p == ISA and h in node_keep:
                keep.add((h, p, t))
        for (h, p, t) in keep:
            node_keep.add(t)
        self.edges = {k: s for k, s in self.edges.items() if k in keep}
        self.nodes = {k: n for k, n in self.nodes.items() if k in node_keep}
        return self

    def reset(self):
        self.nodes.clear()
        self.edges.clear()

    def copy(self) -> "HistorySemanticGraph":
        out = HistorySemanticGraph(self.retention)
        out.nodes = {k: HsgNode(n.kind, n.ref, n.last_mention_turn, n.order) for k, n in self.nodes.items()}
        out.edges = {k: _EdgeState(s.turn, s.order, s.touched) for k, s in self.edges.items()}
        out._clock = self._clock
        return out

    # -- views --------------------------------------------------------------

    def fact_count(self) -> int:
        return sum(1 for k in self.edges if k[1] != ISA)

    def snapshot(self, current_turn: int) -> HsgSnapshot:
        ordered = sorted(self.nodes.values(), key=lambda n: n.order)
        index = {n.key: i for i, n in enumerate(ordered)}
        edges = sorted(self.edges.items(), key=lambda ks: ks[1].order)
        return HsgSnapshot(
            nodes=tuple((n.kind, n.ref, n.last_mention_turn) for n in ordered),
            edges=tuple((index[h], p, index[t], s.turn) for (h, p, t), s in edges),
            current_turn=current_turn,
        )

    def dump(self, kg: KnowledgeGraph) -> str:
        """One ``head<TAB>predicate<TAB>tail<TAB>turn`` line per edge."""

        def label(key):
            kind, ref = key
            return kg.entities.label(ref) if kind == ENTITY else kg.types.label(ref)

        lines = []
        for (h, p, t), s in sorted(self.edges.items(), key=lambda ks: ks[1].order):
            plabel = "IsA" if p == ISA else kg.predicates.label(p)
            lines.append(f"{label(h)}\t{plabel}\t{label(t)}\t{s.turn}")
        return "\n".join(lines) + ("\n" if lines else "")

    def __len__(self) -> int:
        return len(self.nodes)
