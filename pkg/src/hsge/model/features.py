"""Vocabularies, per-turn feature arrays and batch collation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dialogue import Dialogue, Turn, bio_label_set, concept_label, supervision
from ..hsg import ENTITY, ISA, HistorySemanticGraph, HsgSnapshot, RetentionPolicy
from ..kg import KnowledgeGraph
from ..logical_form import ACTIONS, C, constants_of, serialize
from ..text import CLS, PAD, SEP, UNK, Lexicon, build_input, tokenize, verbalize_answer
from .config import ModelConfig

DEC_TOKENS: tuple[str, ...] = ("start", "end", "e", "p", "tp", "num") + ACTIONS
DEC_INDEX = {t: i for i, t in enumerate(DEC_TOKENS)}
START, END = DEC_INDEX["start"], DEC_INDEX["end"]
IGNORE = -100
ISA_LABEL = "is a"


class WordVocab:
    SPECIALS = (PAD, UNK, CLS, SEP)

    def __init__(self, words):
        self.words = list(words)
        if tuple(self.words[:4]) != self.SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, kg: KnowledgeGraph, dialogues=(), lexicon: Lexicon | None = None) -> "WordVocab":
        lexicon = lexicon or Lexicon(kg)
        words = list(cls.SPECIALS)
        seen = set(words)

        def add(tokens):
            for t in tokens:
                if t not in seen:
                    seen.add(t)
                    words.append(t)

        for label in kg.entities:
            add(label.split())
        for label in list(kg.types) + list(kg.predicates) + [ISA_LABEL]:
            add(tokenize(label))
        for d in dialogues:
            for t in d.turns:
                add(lexicon.tokenize(t.question))
                add(lexicon.tokenize(verbalize_answer(t.answer, kg)))
        return cls(words)

    def __len__(self):
        return len(self.words)

    def encode(self, tokens) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)


class LabelSpace:
    """Index spaces derived from the KG: BIO tags, concept classes, label-bag items."""

    def __init__(self, kg: KnowledgeGraph, vocab: WordVocab):
        self.kg = kg
        self.bio = bio_label_set(kg)
        self.bio_index = {t: i for i, t in enumerate(self.bio)}
        self.n_types, self.n_predicates = len(kg.types), len(kg.predicates)
        self.concepts = [f"type:{t}" for t in kg.types] + [f"predicate:{p}" for p in kg.predicates]
        self.concept_index = {c: i for i, c in enumerate(self.concepts)}
        # label-bag items: entities, types, predicates, IsA
        self.n_entities = len(kg.entities)
        self.type_offset = self.n_entities
        self.pred_offset = self.n_entities + self.n_types
        self.isa_item = self.pred_offset + self.n_predicates
        bags = [vocab.encode(lab.split()) for lab in kg.entities]
        bags += [vocab.encode(tokenize(lab)) for lab in kg.types]
        bags += [vocab.encode(tokenize(lab)) for lab in kg.predicates]
        bags.append(vocab.encode(tokenize(ISA_LABEL)))
        width = max(len(b) for b in bags)
        self.item_words = np.zeros((len(bags), width), dtype=np.int64)
        self.item_weights = np.zeros((len(bags), width))
        for i, b in enumerate(bags):
            self.item_words[i, :len(b)] = b
            self.item_weights[i, :len(b)] = 1.0 / len(b)

    def node_item(self, kind: str, ref: int) -> int:
        return ref if kind == ENTITY else self.type_offset + ref

    def relation_item(self, predicate: int) -> int:
        return self.isa_item if predicate == ISA else self.pred_offset + predicate


@dataclass
class Example:
    ids: np.ndarray
    segments: np.ndarray
    bio: np.ndarray
    link: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray
    concept: np.ndarray
    ptr: np.ndarray
    snapshot: HsgSnapshot
    tokens: list[str]
    turn: Turn | None = None
    dialogue_id: str = ""
    turn_index: int = 1
    history: list = field(default_factory=list)


def temporal_distance(snapshot: HsgSnapshot, mode: str) -> np.ndarray:
    last = np.array([n[2] for n in snapshot.nodes], dtype=np.int64)
    if mode == "absolute":
        return last
    return snapshot.current_turn - last


def history_of(dialogue: Dialogue, k: int, kg: KnowledgeGraph, n: int):
    """(question, verbalized answer) pairs of the ``n`` turns before 0-based turn ``k``."""
    return [(t.question, verbalize_answer(t.answer, kg))
            for t in dialogue.turns[max(0, k - n):k]]


class Featurizer:
    def __init__(self, kg: KnowledgeGraph, vocab: WordVocab, config: ModelConfig,
                 lexicon: Lexicon | None = None):
        self.kg, self.vocab, self.config = kg, vocab, config
        self.lexicon = lexicon or Lexicon(kg)
        self.labels = LabelSpace(kg, vocab)

    def input_tokens(self, history, question: str):
        hist_tok = [(self.lexicon.tokenize(q), self.lexicon.tokenize(a)) for q, a in history]
        return build_input(hist_tok, self.lexicon.tokenize(question))

    def example(self, history, turn: Turn, snapshot: HsgSnapshot, with_gold: bool = True,
                dialogue_id: str = "", turn_index: int = 1) -> Example:
        cfg = self.config
        if not cfg.use_hsg:
            snapshot = HsgSnapshot((), (), snapshot.current_turn)
        tokens, seg = self.input_tokens(history, turn.question)
        n = len(tokens)
        ex = Example(self.vocab.encode(tokens), np.asarray(seg, dtype=np.int64),
                     np.full(n, IGNORE), np.full(n, IGNORE), np.array([START]), np.array([IGNORE]),
                     np.array([IGNORE]), np.array([IGNORE]), snapshot, tokens, turn,
                     dialogue_id, turn_index, list(history))
        if not with_gold:
            return ex
        form = turn.gold_form
        toks, bio, links, concepts = supervision(self.kg, self.lexicon, history, turn.question, form)
        assert toks == tokens
        if max(links, default=0) > cfg.max_entity_slots:
            raise ValueError(f"form has more than {cfg.max_entity_slots} entity slots")
        ex.bio = np.array([self.labels.bio_index[t] for t in bio], dtype=np.int64)
        ex.link = np.array(links, dtype=np.int64)
        ftoks, consts = serialize(form)
        ids = [DEC_INDEX[t] for t in ftoks]
        ex.dec_in = np.array([START] + ids, dtype=np.int64)
        ex.dec_out = np.array(ids + [END], dtype=np.int64)
        ex.concept = np.array([IGNORE if c is None else self.labels.concept_index[c] for c in concepts],
                              dtype=np.int64)
        ex.ptr = self._pointer_targets(ftoks, consts, tokens, seg, snapshot)
        return ex

    def _pointer_targets(self, ftoks, consts, tokens, seg, snapshot):
        cfg = self.config
        ptr = np.full(len(ftoks) + 1, IGNORE, dtype=np.int64)
        if not (cfg.use_hsg and cfg.hsg_pointer):
            return ptr
        current = [t for t, s in zip(tokens, seg) if s == seg[-1]] if tokens else []
        in_question = set()
        for m in self.lexicon.annotate(current):
            in_question.update(m.entities)
        node_of = {ref: i for i, (kind, ref, _) in enumerate(snapshot.nodes) if kind == ENTITY}
        it = iter(consts)
        for j, tok in enumerate(ftoks):
            if tok not in ("e", "p", "tp", "num"):
                continue
            c = next(it)
            if tok != "e":
                continue
            if c.value not in in_question and c.value in node_of:
                ptr[j] = 1 + node_of[c.value]
            else:
                ptr[j] = 0
        return ptr

    def dialogue_examples(self, dialogue: Dialogue) -> list[Example]:
        """Teacher-forced examples; each turn sees the HSG built from earlier gold forms."""
        cfg = self.config
        hsg = HistorySemanticGraph(RetentionPolicy(cfg.retention))
        out = []
        for k, turn in enumerate(dialogue.turns):
            hist = history_of(dialogue, k, self.kg, cfg.concat_turns)
            out.append(self.example(hist, turn, hsg.snapshot(k + 1), True, dialogue.dialogue_id, k + 1))
            hsg.update_from_form(turn.gold_form, self.kg, k + 1, cfg.approx_tolerance)
            hsg.prune()
        return out


@dataclass
class GraphBatch:
    node_item: np.ndarray  # [N_total]
    node_distance: np.ndarray  # [N_total]
    src: np.ndarray  # [E_total], message direction src -> dst
    dst: np.ndarray
    rel_item: np.ndarray
    reverse: np.ndarray  # 1.0 on the mirrored copy of each edge
    pad_index: np.ndarray  # [B, N_max] into node rows; N_total marks padding
    node_mask: np.ndarray  # [B, N_max]
    entity_mask: np.ndarray  # [B, N_max]

    @property
    def n_total(self) -> int:
        return len(self.node_item)


@dataclass
class Batch:
    ids: np.ndarray
    tok_mask: np.ndarray
    segments: np.ndarray
    bio: np.ndarray
    link: np.ndarray
    dec_in: np.ndarray
    dec_mask: np.ndarray
    dec_out: np.ndarray
    concept: np.ndarray
    ptr: np.ndarray
    graph: GraphBatch
    examples: list

    @property
    def size(self) -> int:
        return len(self.examples)


def _pad(arrays, value, dtype=np.int64):
    width = max((len(a) for a in arrays), default=0)
    out = np.full((len(arrays), max(width, 1)), value, dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out


def collate_graphs(snapshots, labels: LabelSpace, distance_mode: str) -> GraphBatch:
    items, dists, src, dst, rel, rev = [], [], [], [], [], []
    offset = 0
    n_max = max((s.n_nodes for s in snapshots), default=0)
    pad_index = np.zeros((len(snapshots), n_max), dtype=np.int64)
    node_mask = np.zeros((len(snapshots), n_max), dtype=bool)
    entity_mask = np.zeros((len(snapshots), n_max), dtype=bool)
    for b, s in enumerate(snapshots):
        d = temporal_distance(s, distance_mode)
        for i, (kind, ref, _) in enumerate(s.nodes):
            items.append(labels.node_item(kind, ref))
            dists.append(d[i])
            entity_mask[b, i] = kind == ENTITY
        for h, p, t, _ in s.edges:
            r = labels.relation_item(p)
            src += [offset + h, offset + t]
            dst += [offset + t, offset + h]
            rel += [r, r]
            rev += [0.0, 1.0]
        pad_index[b, :s.n_nodes] = offset + np.arange(s.n_nodes)
        node_mask[b, :s.n_nodes] = True
        offset += s.n_nodes
    pad_index[~node_mask] = offset
    return GraphBatch(np.array(items, dtype=np.int64), np.array(dists, dtype=np.int64),
                      np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                      np.array(rel, dtype=np.int64), np.array(rev), pad_index, node_mask, entity_mask)


def collate(examples: list[Example], labels: LabelSpace, config: ModelConfig) -> Batch:
    ids = _pad([e.ids for e in examples], 0)
    tok_mask = _pad([np.ones(len(e.ids)) for e in examples], 0, bool)
    dec_in = _pad([e.dec_in for e in examples], END)
    dec_mask = _pad([np.ones(len(e.dec_in)) for e in examples], 0, bool)
    return Batch(
        ids=ids, tok_mask=tok_mask,
        segments=_pad([e.segments for e in examples], -1),
        bio=_pad([e.bio for e in examples], IGNORE),
        link=_pad([e.link for e in examples], IGNORE),
        dec_in=dec_in, dec_mask=dec_mask,
        dec_out=_pad([e.dec_out for e in examples], IGNORE),
        concept=_pad([e.concept for e in examples], IGNORE),
        ptr=_pad([e.ptr for e in examples], IGNORE),
        graph=collate_graphs([e.snapshot for e in examples], labels, config.distance_calculation),
        examples=list(examples),
    )


def gold_concept_index(labels: LabelSpace, kg: KnowledgeGraph, const) -> int:
    return labels.concept_index[concept_label(kg, const)]


def entity_slots(form) -> list[int]:
    return [c.value for c in constants_of(form) if c.category is C.ENTITY]
