"""Tokenization, entity-mention annotation and answer verbalization.

The tokenizer splits on whitespace, detaches ``?`` ``,`` ``.`` and
lowercases every word except words that occur in KG entity labels, so entity
mentions keep their exact (case-sensitive) label text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .kg import KnowledgeGraph
from .logical_form import C, Value

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
ELLIPSIS = "..."
ANSWER_CAP = 3

_SPLIT = re.compile(r"\.\.\.|[?,]|[^\s?,]+")


def tokenize(text: str, keep_case=frozenset()) -> list[str]:
    out = []
    for tok in _SPLIT.findall(text):
        if tok == "?":
            continue
        if tok != ELLIPSIS and tok.endswith(".") and len(tok) > 1:
            tok = tok[:-1]
        out.append(tok if tok in keep_case else tok.lower())
    return out


@dataclass(frozen=True)
class Mention:
    start: int
    end: int  # exclusive
    entities: tuple[int, ...]  # all entities carrying this label

    @property
    def text_span(self):
        return (self.start, self.end)


class Lexicon:
    """Entity labels as token sequences, for longest-match annotation and span resolution."""

    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        self.keep_case = frozenset(w for label in kg.entities for w in label.split())
        self._by_tokens: dict[tuple[str, ...], list[int]] = {}
        for e, label in enumerate(kg.entities):
            self._by_tokens.setdefault(tuple(label.split()), []).append(e)
        self._max_len = max((len(k) for k in self._by_tokens), default=0)
        self._first = {}
        for k in self._by_tokens:
            self._first.setdefault(k[0], set()).add(len(k))

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text, self.keep_case)

    def resolve(self, tokens) -> tuple[int, ...]:
        return tuple(self._by_tokens.get(tuple(tokens), ()))

    def annotate(self, tokens) -> list[Mention]:
        """Greedy left-to-right longest-match entity mentions."""
        out, i = [], 0
        while i < len(tokens):
            lengths = self._first.get(tokens[i])
            hit = None
            if lengths:
                for n in sorted(lengths, reverse=True):
                    ents = self._by_tokens.get(tuple(tokens[i:i + n]))
                    if ents and i + n <= len(tokens):
                        hit = Mention(i, i + n, tuple(ents))
                        break
            if hit:
                out.append(hit)
                i = hit.end
            else:
                i += 1
        return out


def primary_type(kg: KnowledgeGraph, entity: int) -> int:
    return min(kg.types_of(entity))


def verbalize_answer(value: Value | None, kg: KnowledgeGraph, cap: int = ANSWER_CAP) -> str:
    """Render an answer for the next turn's input: up to ``cap`` labels, then an ellipsis."""
    if value is None:
        return ""
    if value.category is C.SET:
        labels = sorted(kg.entities.label(e) for e in value.data)
        if not labels:
            return "none"
        shown = ", ".join(labels[:cap])
        return shown + (", " + ELLIPSIS if len(labels) > cap else "")
    if value.category is C.BOOLEAN:
        return "yes" if value.data else "no"
    if value.category is C.NUMBER:
        return str(value.data)
    return ", ".join(f"{kg.entities.label(k)} {v}" for k, v in value.data[:cap])


def build_input(history, current: list[str]) -> tuple[list[str], list[int]]:
    """``[CLS] q_1 [SEP] a_1 [SEP] ... q_k [SEP] a_k [SEP] current``.

    ``history`` is a list of (question tokens, answer tokens) pairs, oldest
    first; an empty history still yields the two separators.  Returns the
    tokens and, per token, the index of the utterance it belongs to (the
    current question is last).
    """
    if not history:
        history = [([], [])]
    tokens, seg = [CLS], [0]
    u = 0
    for q, a in history:
        tokens += list(q) + [SEP]
        seg += [u] * len(q) + [u]
        u += 1
        tokens += list(a) + [SEP]
        seg += [u] * len(a) + [u]
        u += 1
    tokens += list(current)
    seg += [u] * len(current)
    return tokens, seg


def numbers_in(tokens) -> list[int]:
    return [int(t) for t in tokens if t.isdigit()]
